"""Base classification losses, class-balanced weights and the ISDA bound.

Everything works on batches: ``logits`` is (n, C), ``y`` is (n,) int.
Per-sample losses are returned unreduced together with dL/dlogits so that
callers control weighting and reduction.
"""

import logging
from dataclasses import dataclass

import numpy as np

from . import kernels, model
from .errors import DimensionError, ParameterError, ValidityError
from .numerics import is_psd, sample_gaussian

log = logging.getLogger(__name__)

BASE_KINDS = ("ce", "focal", "ldam")


def effective_number_weights(counts, beta, normalize=False):
    """Class weights (1 - beta) / (1 - beta**n_c).

    With ``normalize`` the weights are rescaled to mean 1 over classes.
    """
    counts = np.asarray(counts, dtype=np.float64)
    if not 0.0 <= beta < 1.0:
        raise ParameterError(f"beta must lie in [0, 1), got {beta}")
    if np.any(counts < 1):
        raise ParameterError("every class count must be >= 1")
    if beta == 0.0:
        eps = np.ones_like(counts)
    else:
        # 1 - beta**n via expm1/log1p keeps full relative precision near beta -> 1
        one_minus = 1.0 - beta
        eps = one_minus / -np.expm1(counts * np.log1p(-one_minus))
        eps[counts == 1] = 1.0
    if normalize:
        eps = eps * (eps.size / eps.sum())
    return eps


def _log_softmax(u):
    """Row-wise log-softmax and softmax via max subtraction.

    The max entry contributes exactly 1 to the partition sum, so the log is
    taken with log1p over the remaining terms.
    """
    top = np.argmax(u, axis=1)
    rows = np.arange(u.shape[0])
    m = u[rows, top]
    shifted = u - m[:, None]
    e = np.exp(shifted)
    e[rows, top] = 0.0
    logp = shifted - np.log1p(e.sum(axis=1))[:, None]
    return logp, np.exp(logp)


def _check(logits, y):
    logits = np.asarray(logits, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if logits.ndim != 2 or y.shape != (logits.shape[0],):
        raise DimensionError(f"logits {logits.shape} and labels {y.shape} do not match")
    return logits, y


def ce_loss(logits, y):
    """Cross-entropy per sample and its gradient softmax - onehot."""
    logits, y = _check(logits, y)
    rows = np.arange(y.size)
    logp, p = _log_softmax(logits)
    grad = p.copy()
    grad[rows, y] -= 1.0
    return -logp[rows, y], grad


def _ce_hvp(p, du):
    return p * (du - np.sum(p * du, axis=1, keepdims=True))


def _others_mass(p, y):
    rows = np.arange(y.size)
    rest = p.copy()
    rest[rows, y] = 0.0
    return rest.sum(axis=1)


def _focal_phi(q, r, logq, gamma):
    """dL/dq * q for L = -(1-q)^gamma log q, with r = 1 - q."""
    safe_r = np.where(r > 0.0, r, 1.0)
    first = np.where(r > 0.0, gamma * safe_r ** (gamma - 1.0) * q * logq, 0.0)
    return first - r**gamma


def focal_loss(logits, y, gamma):
    """Multi-class focal loss -(1 - p_y)^gamma log p_y; plain CE at gamma = 0."""
    if gamma < 0:
        raise ParameterError("focal gamma must be >= 0")
    if gamma == 0:
        return ce_loss(logits, y)
    logits, y = _check(logits, y)
    rows = np.arange(y.size)
    logp, p = _log_softmax(logits)
    logq = logp[rows, y]
    q = p[rows, y]
    r = _others_mass(p, y)
    phi = _focal_phi(q, r, logq, gamma)
    onehot = np.zeros_like(p)
    onehot[rows, y] = 1.0
    return -(r**gamma) * logq, phi[:, None] * (onehot - p)


def _focal_hvp(logits, y, gamma, du):
    rows = np.arange(y.size)
    logp, p = _log_softmax(logits)
    logq = logp[rows, y]
    q = p[rows, y]
    r = _others_mass(p, y)
    phi = _focal_phi(q, r, logq, gamma)
    safe_r = np.where(r > 0.0, r, 1.0)
    dphi = np.where(
        r > 0.0,
        -gamma * (gamma - 1.0) * safe_r ** (gamma - 2.0) * q * logq
        + gamma * safe_r ** (gamma - 1.0) * (logq + 2.0),
        0.0,
    )
    dp = _ce_hvp(p, du)
    dq = dp[rows, y]
    onehot = np.zeros_like(p)
    onehot[rows, y] = 1.0
    return (dphi * dq)[:, None] * (onehot - p) - phi[:, None] * dp


def ldam_margins(counts, scale):
    """Per-class margins scale * n_c^(-1/4)."""
    counts = np.asarray(counts, dtype=np.float64)
    if np.any(counts < 1):
        raise ParameterError("every class count must be >= 1")
    if scale <= 0:
        raise ParameterError("margin scale must be positive")
    return scale * counts**-0.25


def ldam_scale_for_max_margin(counts, max_margin=0.5):
    """Scale making the rarest class's margin equal ``max_margin``."""
    return max_margin * float(np.min(counts)) ** 0.25


def ldam_adjust(logits, y, counts, scale):
    """Subtract the label-aware margin from each sample's true-class logit."""
    logits, y = _check(logits, y)
    out = logits.copy()
    rows = np.arange(y.size)
    out[rows, y] -= ldam_margins(counts, scale)[y]
    return out


@dataclass(frozen=True)
class BaseLoss:
    """Loss applied to (possibly ISDA-adjusted) logits.

    ``margins`` holds per-class LDAM margins and is only read for ``ldam``.
    """

    kind: str = "ce"
    focal_gamma: float = 0.0
    margins: tuple = None

    def __post_init__(self):
        if self.kind not in BASE_KINDS:
            raise ParameterError(f"base loss must be one of {BASE_KINDS}, got {self.kind!r}")
        if self.focal_gamma < 0:
            raise ParameterError("focal gamma must be >= 0")
        if self.kind == "ldam" and self.margins is None:
            raise ParameterError("ldam needs per-class margins")

    @classmethod
    def ldam(cls, counts, max_margin=0.5):
        scale = ldam_scale_for_max_margin(counts, max_margin)
        return cls("ldam", margins=tuple(ldam_margins(counts, scale).tolist()))

    def _shift(self, u, y):
        if self.kind != "ldam":
            return u
        out = u.copy()
        out[np.arange(y.size), y] -= np.asarray(self.margins)[y]
        return out

    def value_and_grad(self, u, y):
        u, y = _check(u, y)
        if self.kind == "focal":
            return focal_loss(u, y, self.focal_gamma)
        return ce_loss(self._shift(u, y), y)

    def hvp(self, u, y, du):
        """Per-sample Hessian of the loss in the logits, applied to ``du``."""
        u, y = _check(u, y)
        if self.kind == "focal" and self.focal_gamma != 0:
            return _focal_hvp(u, y, self.focal_gamma, du)
        _, p = _log_softmax(self._shift(u, y))
        return _ce_hvp(p, du)


CE = BaseLoss()


def isda_offsets(W, y, sigmas, lam):
    """Per-sample logit offsets (lam/2) (w_c - w_y)^T Sigma_y (w_c - w_y)."""
    y = np.asarray(y, dtype=np.int64)
    C = W.shape[0]
    if lam == 0 or sigmas is None:
        return np.zeros((y.size, C))
    if lam < 0:
        raise ParameterError("augmentation strength must be >= 0")
    sigmas = np.asarray(sigmas, dtype=np.float64)
    if sigmas.shape != (C, W.shape[1], W.shape[1]):
        raise DimensionError(f"covariance bank shape {sigmas.shape} does not match W {W.shape}")
    return 0.5 * lam * kernels.pair_quadratic(W, sigmas)[y]


@dataclass
class IsdaResult:
    loss: np.ndarray
    dlogits: np.ndarray
    logits: np.ndarray
    adjusted: np.ndarray


_warned_non_psd = False


def _validate_bank(sigmas, strict):
    global _warned_non_psd
    if sigmas is None:
        return
    bad = [c for c, s in enumerate(sigmas) if not is_psd(s)]
    if not bad:
        return
    if strict:
        raise ValidityError(f"covariance of classes {bad} is not PSD")
    if not _warned_non_psd:
        log.warning("non-PSD covariance for classes %s; ISDA upper bound does not hold", bad)
        _warned_non_psd = True


def isda_linf(features, y, W, b, sigmas, lam, base=CE, strict=False):
    """Per-sample ISDA loss: ``base`` evaluated on logits + ISDA offsets."""
    features = np.asarray(features, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if strict:
        _validate_bank(sigmas, strict)
    logits = features @ W.T + b
    adjusted = logits + isda_offsets(W, y, sigmas, lam)
    loss, grad = base.value_and_grad(adjusted, y)
    return IsdaResult(loss, grad, logits, adjusted)


@dataclass
class IsdaGradients:
    loss: np.ndarray
    W: np.ndarray
    b: np.ndarray
    features: np.ndarray
    sigma: np.ndarray
    dlogits: np.ndarray
    class_coef: np.ndarray
    adjusted: np.ndarray


def _onehot(y, C):
    out = np.zeros((y.size, C))
    out[np.arange(y.size), y] = 1.0
    return out


def offset_weight_grad(W, sigmas, lam, coef):
    """Gradient in W of sum_kc coef[k,c] * (lam/2) D_kc^T Sigma_k D_kc."""
    if lam == 0 or sigmas is None or not np.any(coef):
        return np.zeros_like(W)
    r = kernels.pair_sigma_apply(W, sigmas)
    scaled = lam * coef[:, :, None] * r
    return scaled.sum(axis=0) - scaled.sum(axis=1)


def isda_gradients(features, y, W, b, sigmas, lam, base=CE, sample_weights=None, strict=False):
    """Exact gradients of sum_i s_i * L_inf_i in W, b, features and every Sigma_c."""
    y = np.asarray(y, dtype=np.int64)
    res = isda_linf(features, y, W, b, sigmas, lam, base, strict)
    g = res.dlogits
    if sample_weights is not None:
        g = g * np.asarray(sample_weights, dtype=np.float64)[:, None]
    C, d = W.shape
    # coef[k, c] = sum of dL/du_ic over samples with label k
    coef = _onehot(y, C).T @ g
    dW = g.T @ np.asarray(features, dtype=np.float64) + offset_weight_grad(W, sigmas, lam, coef)
    if lam == 0 or sigmas is None:
        dsigma = np.zeros((C, d, d))
    else:
        dsigma = 0.5 * lam * kernels.pair_outer_sum(W, coef)
    return IsdaGradients(res.loss, dW, g.sum(axis=0), g @ W, dsigma, g, coef, res.adjusted)


def reduce_scale(n, reduction):
    if reduction == "sum":
        return 1.0
    if reduction == "mean":
        return 1.0 / max(n, 1)
    raise ParameterError(f"reduction must be 'sum' or 'mean', got {reduction!r}")


@dataclass
class BatchLoss:
    value: float
    grads: dict
    sigma_grad: np.ndarray
    per_sample: np.ndarray
    trace: object
    isda: IsdaGradients
    sample_weights: np.ndarray


def weighted_batch_loss(params, x, y, sigmas, class_weights, lam, base=CE, reduction="sum", strict=False):
    """L_B = sum_i eps_{y_i} L_inf_i (or its mean) with gradients for every
    parameter tensor and for the covariance bank."""
    y = np.asarray(y, dtype=np.int64)
    trace = model.forward(params, x)
    scale = reduce_scale(y.size, reduction)
    if class_weights is None:
        w = np.full(y.size, scale)
    else:
        w = np.asarray(class_weights, dtype=np.float64)[y] * scale
    W, b = params["fc.weight"], params["fc.bias"]
    ig = isda_gradients(trace.features, y, W, b, sigmas, lam, base, w, strict)
    grads = model.backward(params, trace, ig.dlogits)
    grads["fc.weight"] = ig.W
    return BatchLoss(float(np.dot(w, ig.loss)), grads, ig.sigma, ig.loss, trace, ig, w)


@dataclass
class BoundCheckRow:
    sample: int
    linf: float
    mc_mean: float
    mc_se: float
    bound_ok: bool
    moment_max_z: float
    moment_ok: bool

    @property
    def gap(self):
        return self.linf - self.mc_mean


def monte_carlo_bound_check(features, y, W, b, sigmas, lam, n_samples, rng, bound_k=3.0, moment_k=4.0):
    """Compare the closed-form bound with sampled augmentation, per sample.

    For each sample draws delta ~ N(0, lam * Sigma_y), averages CE over the
    augmented features, and checks E[exp(dw^T delta)] against
    exp((lam/2) dw^T Sigma dw) for every competing class.
    """
    features = np.asarray(features, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    linf = isda_linf(features, y, W, b, sigmas, lam).loss
    offsets = isda_offsets(W, y, sigmas, lam)
    rows = []
    for i in range(y.size):
        k = y[i]
        z = features[i] @ W.T + b
        if lam == 0:
            ce = ce_loss(z[None, :], y[i : i + 1])[0][0]
            rows.append(BoundCheckRow(i, float(linf[i]), float(ce), 0.0, True, 0.0, True))
            continue
        delta = sample_gaussian(np.zeros(W.shape[1]), sigmas[k], lam, n_samples, rng)
        shifts = delta @ W.T
        aug = z + shifts
        ce, _ = ce_loss(aug, np.full(n_samples, k))
        mean, se = float(ce.mean()), float(ce.std(ddof=1) / np.sqrt(n_samples))
        zmax = 0.0
        for c in range(W.shape[0]):
            if c == k:
                continue
            e = np.exp(shifts[:, c] - shifts[:, k])
            e_se = float(e.std(ddof=1) / np.sqrt(n_samples))
            target = float(np.exp(offsets[i, c]))
            zscore = abs(float(e.mean()) - target) / e_se if e_se > 0 else 0.0
            zmax = max(zmax, zscore)
        rows.append(
            BoundCheckRow(i, float(linf[i]), mean, se, mean <= linf[i] + bound_k * se, zmax, zmax <= moment_k)
        )
    return rows
