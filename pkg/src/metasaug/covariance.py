"""Per-class feature covariance: streaming estimates and the learnable bank."""

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DimensionError, ModeError, ParameterError
from .numerics import is_psd, psd_project, sym_eig

log = logging.getLogger(__name__)

MODES = ("estimated", "learnable")
PSD_POLICIES = ("project_each_update", "none")


class ClassStats:
    """Exact running count, mean and scatter per class.

    Batches are folded in with the pairwise (Chan et al.) merge, so the
    result does not depend on how the stream is partitioned.
    """

    def __init__(self, num_classes, dim):
        self.num_classes = num_classes
        self.dim = dim
        self.counts = np.zeros(num_classes, dtype=np.int64)
        self.means = np.zeros((num_classes, dim))
        self.scatter = np.zeros((num_classes, dim, dim))

    def update(self, features, labels):
        features = np.asarray(features, dtype=np.float64)
        labels = np.asarray(labels, dtype=np.int64)
        if features.ndim != 2 or features.shape[1] != self.dim:
            raise DimensionError(f"expected features with {self.dim} columns, got {features.shape}")
        if labels.shape != (features.shape[0],):
            raise DimensionError("one label per feature row required")
        for c in np.unique(labels):
            xc = features[labels == c]
            m = xc.shape[0]
            mean_b = xc.mean(axis=0)
            centered = xc - mean_b
            scatter_b = centered.T @ centered
            scatter_b = 0.5 * (scatter_b + scatter_b.T)
            n_a = self.counts[c]
            n = n_a + m
            delta = mean_b - self.means[c]
            self.means[c] = self.means[c] + delta * (m / n)
            self.scatter[c] = self.scatter[c] + scatter_b + np.outer(delta, delta) * (n_a * m / n)
            self.counts[c] = n
        return self

    def covariance(self, unbiased=False):
        denom = (self.counts - 1 if unbiased else self.counts).astype(np.float64)
        out = np.zeros_like(self.scatter)
        ok = denom > 0
        out[ok] = self.scatter[ok] / denom[ok][:, None, None]
        return out

    def copy(self):
        other = ClassStats(self.num_classes, self.dim)
        other.counts = self.counts.copy()
        other.means = self.means.copy()
        other.scatter = self.scatter.copy()
        return other


def update_streaming(stats, features, labels):
    return stats.update(features, labels)


@dataclass(frozen=True)
class CovarianceBank:
    """Class-wise covariance matrices with augmentation strength ``lam``."""

    sigmas: np.ndarray
    lam: float
    mode: str = "estimated"
    psd_policy: str = "project_each_update"
    cold: np.ndarray = field(default=None)

    def __post_init__(self):
        s = np.array(self.sigmas, dtype=np.float64)
        if s.ndim != 3 or s.shape[1] != s.shape[2]:
            raise DimensionError(f"bank must be (C, d, d), got {s.shape}")
        if self.lam < 0:
            raise ParameterError("augmentation strength must be >= 0")
        if self.mode not in MODES:
            raise ParameterError(f"mode must be one of {MODES}")
        if self.psd_policy not in PSD_POLICIES:
            raise ParameterError(f"psd_policy must be one of {PSD_POLICIES}")
        cold = np.zeros(s.shape[0], dtype=bool) if self.cold is None else np.asarray(self.cold, dtype=bool)
        s.setflags(write=False)
        cold.setflags(write=False)
        object.__setattr__(self, "sigmas", s)
        object.__setattr__(self, "cold", cold)

    @property
    def num_classes(self):
        return self.sigmas.shape[0]

    @property
    def dim(self):
        return self.sigmas.shape[1]

    def traces(self):
        return np.trace(self.sigmas, axis1=1, axis2=2)


def get_bank(stats, lam, unbiased=False, psd_policy="project_each_update"):
    """Detached snapshot of the streaming estimate (estimated mode).

    Classes never observed get a zero matrix and are flagged ``cold``.
    """
    return CovarianceBank(stats.covariance(unbiased), lam, "estimated", psd_policy, stats.counts == 0)


def learnable_bank(source, psd_policy="project_each_update", init="stats"):
    """Learnable bank seeded from an estimated snapshot, or zeros."""
    if init not in ("stats", "zero"):
        raise ParameterError("init must be 'stats' or 'zero'")
    sigmas = source.sigmas.copy() if init == "stats" else np.zeros_like(source.sigmas)
    return CovarianceBank(sigmas, source.lam, "learnable", psd_policy, source.cold)


def zero_bank(num_classes, dim, lam, mode="estimated", psd_policy="project_each_update"):
    return CovarianceBank(np.zeros((num_classes, dim, dim)), lam, mode, psd_policy, np.ones(num_classes, dtype=bool))


_warned_non_psd = set()


def apply_sigma_gradient(bank, grads, gamma):
    """Sigma_c <- sym(Sigma_c - gamma * G_c), then the bank's PSD policy.

    Classes with an all-zero gradient are returned untouched.
    """
    if bank.mode != "learnable":
        raise ModeError("only a learnable bank can take gradient steps")
    grads = np.asarray(grads, dtype=np.float64)
    if grads.shape != bank.sigmas.shape:
        raise DimensionError(f"gradient shape {grads.shape} != bank shape {bank.sigmas.shape}")
    if gamma == 0:
        return bank
    out = bank.sigmas.copy()
    for c in range(bank.num_classes):
        if not np.any(grads[c]):
            continue
        s = out[c] - gamma * grads[c]
        s = 0.5 * (s + s.T)
        if bank.psd_policy == "project_each_update":
            s = psd_project(s)
        elif c not in _warned_non_psd and not is_psd(s):
            log.warning("class %d covariance left the PSD cone; ISDA bound no longer holds", c)
            _warned_non_psd.add(c)
        out[c] = s
    return replace(bank, sigmas=out)


@dataclass(frozen=True)
class Spectrum:
    values: list
    zero: bool


def spectrum_report(bank, c, k=5):
    """Top-k singular values of Sigma_c divided by the largest one."""
    sigma = bank.sigmas[c] if isinstance(bank, CovarianceBank) else np.asarray(bank)[c]
    spec = sym_eig(sigma)
    sv = np.sort(np.abs(spec.eigenvalues))[::-1]
    k = min(k, sv.size)
    if sv.size == 0 or sv[0] == 0.0:
        return Spectrum([0.0] * k, True)
    top = sv[:k] / sv[0]
    return Spectrum(top.tolist(), False)


def bank_tensors(bank):
    return {f"sigma.{c}": bank.sigmas[c] for c in range(bank.num_classes)}


def bank_meta(bank):
    return {
        "kind": "covariance_bank",
        "lam": bank.lam,
        "mode": bank.mode,
        "psd_policy": bank.psd_policy,
        "cold": bank.cold.astype(int).tolist(),
    }


def bank_from_tensors(tensors, meta):
    C = sum(1 for k in tensors if k.startswith("sigma."))
    sigmas = np.stack([tensors[f"sigma.{c}"] for c in range(C)])
    return CovarianceBank(sigmas, meta["lam"], meta["mode"], meta["psd_policy"], meta.get("cold"))
