import numpy as np
import pytest

from metasaug import covariance as cov
from metasaug import losses, model
from metasaug.errors import DimensionError, ModeError
from metasaug.numerics import sym_eig

from .conftest import random_psd


def two_pass(x, y, C):
    d = x.shape[1]
    out = np.zeros((C, d, d))
    counts = np.bincount(y, minlength=C)
    means = np.zeros((C, d))
    for c in range(C):
        xc = x[y == c]
        if len(xc):
            means[c] = xc.mean(axis=0)
            z = xc - means[c]
            out[c] = z.T @ z / len(xc)
    return counts, means, out


def test_single_sample_gives_zero_covariance():
    st = cov.ClassStats(2, 3).update(np.array([[1.0, 2.0, 3.0]]), [1])
    assert np.array_equal(st.means[1], [1.0, 2.0, 3.0])
    assert not np.any(st.covariance()[1])
    assert st.counts.tolist() == [0, 1]


def test_partition_invariance_one_vs_seven_batches(rng):
    x = rng.standard_normal((150, 4)) * 3 + 5
    y = rng.integers(0, 3, 150)
    whole = cov.ClassStats(3, 4).update(x, y)
    parts = cov.ClassStats(3, 4)
    for chunk in np.split(np.arange(150), [1, 4, 20, 21, 70, 140]):
        cov.update_streaming(parts, x[chunk], y[chunk])
    np.testing.assert_allclose(parts.covariance(), whole.covariance(), rtol=0, atol=1e-10)
    np.testing.assert_allclose(parts.means, whole.means, rtol=0, atol=1e-10)
    assert np.array_equal(parts.counts, whole.counts)


def test_stream_matches_two_pass_on_every_prefix(rng):
    x = rng.standard_normal((200, 5)) * 2 - 1
    y = rng.integers(0, 4, 200)
    st = cov.ClassStats(4, 5)
    cuts = np.sort(rng.choice(np.arange(1, 200), size=12, replace=False))
    start = 0
    for end in [*cuts, 200]:
        st.update(x[start:end], y[start:end])
        counts, means, ref = two_pass(x[:end], y[:end], 4)
        assert np.array_equal(st.counts, counts)
        assert np.abs(st.means - means).max() <= 1e-8
        assert np.abs(st.covariance() - ref).max() <= 1e-8
        start = end


def test_unbiased_denominator(rng):
    x = rng.standard_normal((10, 2))
    st = cov.ClassStats(1, 2).update(x, np.zeros(10, int))
    np.testing.assert_allclose(st.covariance(unbiased=True), [np.cov(x.T)], rtol=1e-12)


def test_update_dimension_mismatch():
    with pytest.raises(DimensionError):
        cov.ClassStats(2, 3).update(np.zeros((4, 2)), np.zeros(4, int))


def test_cold_bank_degenerates_to_base_loss(rng):
    bank = cov.get_bank(cov.ClassStats(3, 2), 0.5)
    assert bank.cold.all() and not np.any(bank.sigmas)
    x = rng.standard_normal((4, 2))
    y = rng.integers(0, 3, 4)
    W, b = rng.standard_normal((3, 2)), np.zeros(3)
    assert np.array_equal(losses.isda_linf(x, y, W, b, bank.sigmas, bank.lam).loss, losses.ce_loss(x @ W.T, y)[0])


def test_estimated_snapshot_is_detached(rng):
    st = cov.ClassStats(2, 2).update(rng.standard_normal((6, 2)), [0, 0, 0, 1, 1, 1])
    bank = cov.get_bank(st, 0.5)
    before = bank.sigmas.copy()
    st.update(rng.standard_normal((6, 2)) * 10, [0, 1, 0, 1, 0, 1])
    assert np.array_equal(bank.sigmas, before)
    with pytest.raises(ValueError):
        bank.sigmas[0, 0, 0] = 1.0


def test_learnable_bank_starts_equal_to_snapshot(rng):
    st = cov.ClassStats(2, 3).update(rng.standard_normal((9, 3)), rng.integers(0, 2, 9))
    est = cov.get_bank(st, 0.5)
    learn = cov.learnable_bank(est)
    assert learn.mode == "learnable" and np.array_equal(learn.sigmas, est.sigmas)
    assert not np.any(cov.learnable_bank(est, init="zero").sigmas)


def test_sigma_step_requires_learnable_bank():
    with pytest.raises(ModeError):
        cov.apply_sigma_gradient(cov.zero_bank(2, 2, 0.5), np.ones((2, 2, 2)), 0.1)


def test_sigma_step_zero_gamma_and_absent_classes(rng):
    sig = np.stack([random_psd(3, rng) for _ in range(3)])
    bank = cov.CovarianceBank(sig, 0.5, "learnable")
    g = np.stack([random_psd(3, rng), np.zeros((3, 3)), random_psd(3, rng)])
    assert np.array_equal(cov.apply_sigma_gradient(bank, g, 0.0).sigmas, sig)
    out = cov.apply_sigma_gradient(bank, g, 0.1)
    assert np.array_equal(out.sigmas[1], sig[1])
    assert not np.array_equal(out.sigmas[0], sig[0])


def test_sigma_step_keeps_bank_symmetric_and_psd(rng):
    sig = np.stack([random_psd(4, rng) for _ in range(3)])
    bank = cov.CovarianceBank(sig, 0.5, "learnable")
    for _ in range(10):
        g = rng.standard_normal((3, 4, 4)) * 3
        bank = cov.apply_sigma_gradient(bank, g, 0.5)
        for s in bank.sigmas:
            assert np.array_equal(s, s.T)
            assert sym_eig(s).eigenvalues.min() >= -1e-12


def test_sigma_step_without_projection_can_leave_cone(rng):
    bank = cov.CovarianceBank(np.zeros((1, 2, 2)), 0.5, "learnable", "none")
    out = cov.apply_sigma_gradient(bank, np.eye(2)[None], 1.0)
    assert np.array_equal(out.sigmas[0], -np.eye(2))


def test_spectrum_examples(rng):
    assert cov.spectrum_report(np.eye(6)[None], 0).values == [1.0] * 5
    r = cov.spectrum_report(np.diag([4.0, 1.0, 0.0])[None], 0)
    assert r.values == [1.0, 0.25, 0.0] and not r.zero
    u = rng.standard_normal(6)
    vals = cov.spectrum_report(np.outer(u, u)[None], 0).values
    assert vals[0] == 1.0 and max(vals[1:]) < 1e-12
    z = cov.spectrum_report(np.zeros((1, 3, 3)), 0, k=5)
    assert z.zero and z.values == [0.0, 0.0, 0.0]


def test_spectrum_leading_value_exactly_one(rng):
    for _ in range(50):
        d = int(rng.integers(1, 9))
        s = random_psd(d, rng, scale=float(10 ** rng.uniform(-6, 6)))
        assert cov.spectrum_report(s[None], 0).values[0] == 1.0


def test_bank_checkpoint_round_trip(tmp_path, rng):
    bank = cov.CovarianceBank(np.stack([random_psd(2, rng) for _ in range(3)]), 0.75, "learnable",
                              cold=[False, True, False])
    model.save_tensors(tmp_path / "bank", cov.bank_tensors(bank), cov.bank_meta(bank))
    back = cov.bank_from_tensors(*model.load_tensors(tmp_path / "bank"))
    assert np.array_equal(back.sigmas, bank.sigmas)
    assert (back.lam, back.mode, back.cold.tolist()) == (0.75, "learnable", [False, True, False])
