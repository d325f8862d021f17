"""Synthetic datasets, long-tail construction, splits and CSV I/O."""

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionError, InsufficientDataError, ParameterError, ParseError

PROFILES = ("exponential", "step")


@dataclass(frozen=True)
class Dataset:
    """Feature matrix with integer labels in ``[0, num_classes)``.

    ``index`` carries the originating sample ids so that derived splits can
    be checked for disjointness.
    """

    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    index: np.ndarray = None

    def __post_init__(self):
        x = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.int64)
        if x.ndim != 2:
            raise DimensionError(f"features must be 2-D, got {x.shape}")
        if y.shape != (x.shape[0],):
            raise DimensionError(f"{y.size} labels for {x.shape[0]} samples")
        if y.size and (y.min() < 0 or y.max() >= self.num_classes):
            raise DimensionError(f"labels must lie in [0, {self.num_classes})")
        idx = np.arange(y.size) if self.index is None else np.asarray(self.index, dtype=np.int64)
        if idx.shape != y.shape:
            raise DimensionError("index length must match labels")
        for arr in (x, y, idx):
            arr.setflags(write=False)
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "index", idx)

    def __len__(self):
        return int(self.labels.size)

    @property
    def dim(self):
        return int(self.features.shape[1])

    @property
    def class_counts(self):
        return np.bincount(self.labels, minlength=self.num_classes)

    def subset(self, rows):
        rows = np.asarray(rows, dtype=np.int64)
        return Dataset(self.features[rows], self.labels[rows], self.num_classes, self.index[rows])

    def class_rows(self, c):
        return np.flatnonzero(self.labels == c)


@dataclass(frozen=True)
class LongTailSpec:
    num_classes: int
    n_max: int
    mu: float
    profile: str = "exponential"

    def __post_init__(self):
        if self.mu < 1:
            raise ParameterError(f"imbalance factor must be >= 1, got {self.mu}")
        if self.profile not in PROFILES:
            raise ParameterError(f"profile must be one of {PROFILES}")
        if self.num_classes < 1 or self.n_max < 1:
            raise ParameterError("num_classes and n_max must be positive")
        if min(self.counts()) < 1:
            raise ParameterError(f"n_max={self.n_max} with mu={self.mu} leaves an empty class")

    def counts(self):
        """Per-class target counts, class id = rank by count."""
        C, n_max, mu = self.num_classes, self.n_max, float(self.mu)
        if C == 1:
            return [n_max]
        if self.profile == "step":
            n_min = _round_half_up(n_max / mu)
            return [n_max if i < C // 2 else n_min for i in range(C)]
        return [_round_half_up(n_max * mu ** (-i / (C - 1))) for i in range(C)]


@dataclass(frozen=True)
class SplitBundle:
    train: Dataset
    meta_val: Dataset
    test: Dataset = None


def _round_half_up(x):
    return int(math.floor(x + 0.5))


def imbalance_ratio(counts):
    counts = np.asarray(counts)
    counts = counts[counts > 0]
    return float(counts.max() / counts.min())


def make_gaussian_mixture(num_classes, dim, per_class, separation, rng):
    """Balanced mixture: class means at ``separation`` times random unit vectors,
    identity within-class covariance."""
    if num_classes < 2 or dim < 1 or per_class < 0:
        raise ParameterError("need num_classes >= 2, dim >= 1, per_class >= 0")
    if separation <= 0:
        raise ParameterError("separation must be positive")
    while True:
        dirs = rng.standard_normal((num_classes, dim))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        gaps = np.linalg.norm(dirs[:, None, :] - dirs[None, :, :], axis=-1)
        if np.all(gaps[~np.eye(num_classes, dtype=bool)] > 1e-6):
            break
    means = separation * dirs
    labels = np.repeat(np.arange(num_classes), per_class)
    features = means[labels] + rng.standard_normal((labels.size, dim))
    return Dataset(features, labels, num_classes)


def apply_longtail(data, spec, rng):
    """Keep a uniformly random subset of each class sized by ``spec.counts()``."""
    if spec.num_classes != data.num_classes:
        raise DimensionError("spec and dataset disagree on the number of classes")
    available = data.class_counts
    targets = spec.counts()
    keep = []
    for c, n_c in enumerate(targets):
        if available[c] < n_c:
            raise InsufficientDataError(f"class {c} has {available[c]} samples, needs {n_c}")
        rows = data.class_rows(c)
        keep.append(np.sort(rng.choice(rows, size=n_c, replace=False)))
    return data.subset(np.concatenate(keep) if keep else np.zeros(0, dtype=np.int64))


def split_meta_validation(data, k, rng, test=None):
    """Move ``k`` random samples of every class into a balanced meta-validation set."""
    if k < 0:
        raise ParameterError("k must be non-negative")
    counts = data.class_counts
    if k > 0:
        short = [c for c in range(data.num_classes) if counts[c] <= k]
        if short:
            raise InsufficientDataError(f"classes {short} have <= {k} samples")
    picked = [
        np.sort(rng.choice(data.class_rows(c), size=k, replace=False))
        for c in range(data.num_classes)
    ]
    val_rows = np.concatenate(picked) if picked else np.zeros(0, dtype=np.int64)
    mask = np.ones(len(data), dtype=bool)
    mask[val_rows] = False
    return SplitBundle(data.subset(np.flatnonzero(mask)), data.subset(val_rows), test)


def sample_stratified(data, size, rng):
    """Class-stratified draw without replacement, remainder spread over random classes."""
    size = min(size, len(data))
    present = [c for c in range(data.num_classes) if data.class_counts[c] > 0]
    base, extra = divmod(size, len(present))
    bonus = set(rng.choice(present, size=extra, replace=False).tolist()) if extra else set()
    rows = []
    for c in present:
        pool = data.class_rows(c)
        take = min(pool.size, base + (c in bonus))
        rows.append(rng.choice(pool, size=take, replace=False))
    return np.sort(np.concatenate(rows))


def save_csv(data, path):
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"f{j}" for j in range(data.dim)] + ["label"])
        for x, y in zip(data.features, data.labels):
            writer.writerow([repr(float(v)) for v in x] + [int(y)])


def load_csv(path, num_classes=None):
    """Read ``f0,...,f{d-1},label`` rows; ``num_classes`` defaults to max label + 1."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("missing header row", line=1) from None
        if not header or header[-1].strip() != "label":
            raise ParseError("last header column must be 'label'", line=1)
        dim = len(header) - 1
        expected = [f"f{j}" for j in range(dim)]
        if [h.strip() for h in header[:-1]] != expected:
            raise ParseError(f"feature columns must be {','.join(expected) or '(none)'}", line=1)
        feats, labels = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != dim + 1:
                raise ParseError(f"expected {dim + 1} cells, got {len(row)}", line=lineno)
            try:
                values = [float(v) for v in row[:-1]]
            except ValueError:
                raise ParseError("non-numeric feature cell", line=lineno) from None
            if not all(math.isfinite(v) for v in values):
                raise ParseError("non-finite feature cell", line=lineno)
            try:
                label = int(row[-1])
            except ValueError:
                raise ParseError(f"label {row[-1]!r} is not an integer", line=lineno) from None
            if label < 0 or (num_classes is not None and label >= num_classes):
                raise ParseError(f"label {label} out of range", line=lineno)
            feats.append(values)
            labels.append(label)
    if num_classes is None:
        num_classes = max(labels) + 1 if labels else 0
    x = np.array(feats, dtype=np.float64).reshape(len(labels), dim)
    return Dataset(x, np.array(labels, dtype=np.int64), num_classes)


def make_longtail_benchmark(num_classes, dim, n_max, mu, val_per_class, test_per_class, separation, rng,
                            profile="exponential"):
    """Long-tailed train split with balanced meta-validation and test splits.

    One balanced mixture is drawn; the balanced test and meta-validation
    samples are set aside per class first, then the long-tail profile is
    imposed on what remains. Taking meta-validation from the balanced pool
    keeps it possible when the rarest class holds fewer than
    ``val_per_class`` training samples.
    """
    spec = LongTailSpec(num_classes, n_max, mu, profile)
    pool = make_gaussian_mixture(num_classes, dim, n_max + val_per_class + test_per_class, separation, rng)
    held = split_meta_validation(pool, test_per_class, rng)
    rest = split_meta_validation(held.train, val_per_class, rng)
    train = apply_longtail(rest.train, spec, rng)
    return SplitBundle(train, rest.meta_val, held.meta_val)
