import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from metasaug import datagen, meta, config
from metasaug.datagen import Dataset, LongTailSpec
from metasaug.errors import InsufficientDataError, ParameterError, ParseError
from metasaug.numerics import make_rng


def mp_counts(C, n_max, mu):
    mpmath.mp.dps = 50
    return [int(mpmath.floor(n_max * mpmath.mpf(mu) ** (-mpmath.mpf(i) / (C - 1)) + mpmath.mpf("0.5")))
            for i in range(C)]


def test_mixture_shapes_and_balance():
    d = datagen.make_gaussian_mixture(3, 4, 7, 2.0, make_rng(0))
    assert d.features.shape == (21, 4)
    assert d.class_counts.tolist() == [7, 7, 7]


def test_mixture_degenerate_size():
    d = datagen.make_gaussian_mixture(5, 2, 1, 1.0, make_rng(0))
    assert len(d) == 5


def test_mixture_deterministic():
    a = datagen.make_gaussian_mixture(4, 3, 10, 2.0, make_rng(11))
    b = datagen.make_gaussian_mixture(4, 3, 10, 2.0, make_rng(11))
    assert a.features.tobytes() == b.features.tobytes()


@pytest.mark.parametrize("args", [(1, 2, 3, 1.0), (2, 0, 3, 1.0), (2, 2, 3, 0.0)])
def test_mixture_rejects_bad_parameters(args):
    with pytest.raises(ParameterError):
        datagen.make_gaussian_mixture(*args, make_rng(0))


def test_well_separated_mixture_is_linearly_separable():
    rng = make_rng(0)
    data = datagen.make_gaussian_mixture(2, 5, 500 + 200, 100.0, rng)
    held = datagen.split_meta_validation(data, 200, rng)
    split = datagen.SplitBundle(held.train, held.meta_val, held.meta_val)
    cfg = config.preset("ce", t1=50, t2=50)
    result = meta.train(split, cfg)
    pred = np.argmax(split.test.features @ result.params["fc.weight"].T + result.params["fc.bias"], axis=1)
    assert np.mean(pred != split.test.labels) < 0.01


def test_longtail_balanced_limit():
    data = datagen.make_gaussian_mixture(4, 2, 30, 1.0, make_rng(0))
    lt = datagen.apply_longtail(data, LongTailSpec(4, 20, 1.0), make_rng(1))
    assert lt.class_counts.tolist() == [20] * 4


def test_longtail_endpoint_and_counts_match_high_precision():
    spec = LongTailSpec(10, 5000, 100)
    assert spec.counts()[-1] == 50
    assert spec.counts() == mp_counts(10, 5000, 100)


@pytest.mark.parametrize("C", [10, 100])
@pytest.mark.parametrize("mu", [10, 20, 50, 100, 200])
def test_longtail_counts_and_ratio(C, mu):
    spec = LongTailSpec(C, 500, mu)
    counts = spec.counts()
    assert counts == mp_counts(C, 500, mu)
    assert all(a >= b for a, b in zip(counts, counts[1:]))
    achieved = max(counts) / min(counts)
    assert abs(achieved - mu) <= mu / min(counts)


def test_longtail_keeps_random_subset():
    data = datagen.make_gaussian_mixture(3, 2, 40, 1.0, make_rng(0))
    lt = datagen.apply_longtail(data, LongTailSpec(3, 40, 4.0), make_rng(5))
    assert lt.class_counts.tolist() == [40, 20, 10]
    assert set(lt.index.tolist()) <= set(data.index.tolist())
    assert len(set(lt.index.tolist())) == len(lt)


def test_longtail_insufficient_data():
    data = datagen.make_gaussian_mixture(3, 2, 10, 1.0, make_rng(0))
    with pytest.raises(InsufficientDataError):
        datagen.apply_longtail(data, LongTailSpec(3, 11, 2.0), make_rng(0))


def test_step_profile():
    assert LongTailSpec(4, 100, 10, "step").counts() == [100, 100, 10, 10]


def test_spec_rejects_mu_below_one():
    with pytest.raises(ParameterError):
        LongTailSpec(3, 10, 0.5)


def test_split_meta_validation():
    rng = make_rng(2)
    pool = datagen.make_gaussian_mixture(10, 3, 5000, 1.0, rng)
    lt = datagen.apply_longtail(pool, LongTailSpec(10, 5000, 100), rng)
    split = datagen.split_meta_validation(lt, 10, rng)
    assert split.meta_val.class_counts.tolist() == [10] * 10
    assert split.train.class_counts[-1] == 40
    assert len(split.train) + len(split.meta_val) == len(lt)
    assert not set(split.train.index.tolist()) & set(split.meta_val.index.tolist())


def test_split_k_zero_is_identity():
    data = datagen.make_gaussian_mixture(3, 2, 5, 1.0, make_rng(0))
    split = datagen.split_meta_validation(data, 0, make_rng(0))
    assert len(split.meta_val) == 0
    assert np.array_equal(split.train.features, data.features)


def test_split_insufficient_class():
    data = datagen.make_gaussian_mixture(3, 2, 10, 1.0, make_rng(0))
    with pytest.raises(InsufficientDataError):
        datagen.split_meta_validation(data, 10, make_rng(0))


def test_benchmark_builder_is_disjoint_and_balanced_where_needed():
    split = datagen.make_longtail_benchmark(10, 10, 500, 100, 10, 50, 3.0, make_rng(0))
    assert split.train.class_counts.tolist() == LongTailSpec(10, 500, 100).counts()
    assert split.meta_val.class_counts.tolist() == [10] * 10
    assert split.test.class_counts.tolist() == [50] * 10
    ids = [set(d.index.tolist()) for d in (split.train, split.meta_val, split.test)]
    assert not (ids[0] & ids[1]) and not (ids[0] & ids[2]) and not (ids[1] & ids[2])


def test_stratified_sampling_is_balanced():
    data = datagen.make_gaussian_mixture(4, 2, 10, 1.0, make_rng(0))
    rows = datagen.sample_stratified(data, 20, make_rng(1))
    assert np.bincount(data.labels[rows]).tolist() == [5, 5, 5, 5]
    assert len(set(rows.tolist())) == 20


def test_csv_empty_file_with_header(tmp_path):
    p = tmp_path / "e.csv"
    p.write_text("f0,f1,label\n")
    d = datagen.load_csv(p)
    assert len(d) == 0 and d.dim == 2


@pytest.mark.parametrize("body", ["1.0,2.0,-1\n", "1.0,2.0\n", "1.0,abc,0\n", "1.0,2.0,0.5\n", "1.0,2.0,3\n"])
def test_csv_parse_errors_name_the_line(tmp_path, body):
    p = tmp_path / "bad.csv"
    p.write_text("f0,f1,label\n0.0,0.0,0\n" + body)
    with pytest.raises(ParseError, match="line 3"):
        datagen.load_csv(p, num_classes=3)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 30), st.integers(1, 5), st.integers(1, 4), st.integers(0, 2**32 - 1))
def test_csv_round_trip(tmp_path_factory, n, d, C, seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, d)) * 10.0 ** rng.uniform(-8, 8, (n, d))
    data = Dataset(x, rng.integers(0, C, n), C)
    p = tmp_path_factory.mktemp("csv") / "d.csv"
    datagen.save_csv(data, p)
    back = datagen.load_csv(p, C)
    np.testing.assert_allclose(back.features, data.features, rtol=1e-12, atol=0)
    assert np.array_equal(back.labels, data.labels)
