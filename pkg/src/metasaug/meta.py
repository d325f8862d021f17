"""One-step bilevel learning of the covariance bank and the two-phase loop.

Inner problem: class-weighted ISDA loss on a training batch. Outer problem:
plain cross-entropy on a balanced validation batch after one virtual SGD
step. The covariance bank receives the gradient of the outer loss through
that virtual step.
"""

import json
import logging
from dataclasses import dataclass, replace

import numpy as np

from . import covariance as cov
from . import kernels, losses, model
from .datagen import sample_stratified
from .errors import ConfigError, ParameterError, UnsupportedConfigurationError
from .numerics import child_rngs

log = logging.getLogger(__name__)

HYPERGRAD_METHODS = ("analytic", "fd")


@dataclass(frozen=True)
class MetaStepConfig:
    alpha: float
    gamma: float
    lam: float
    base: losses.BaseLoss = losses.CE
    reduction: str = "sum"
    hypergrad: str = "analytic"
    fd_h: float = 1e-5
    trainable: tuple = model.HEAD
    plain_final_step: bool = False

    def __post_init__(self):
        if self.alpha < 0 or self.gamma < 0:
            raise ParameterError("step sizes must be non-negative")
        if self.hypergrad not in HYPERGRAD_METHODS:
            raise ParameterError(f"hypergrad must be one of {HYPERGRAD_METHODS}")
        if self.hypergrad == "fd" and self.fd_h <= 0:
            raise ParameterError("finite-difference step must be positive")


def lookahead(params, x, y, sigmas, weights, alpha, lam, base=losses.CE, reduction="sum", trainable=model.HEAD):
    """Virtual plain gradient step; ``params`` is left untouched."""
    bl = losses.weighted_batch_loss(params, x, y, sigmas, weights, lam, base, reduction)
    return _step(params, bl.grads, alpha, trainable), bl


def _step(params, grads, alpha, trainable):
    out = dict(params)
    for name in trainable:
        out[name] = params[name] - alpha * grads[name]
    return out


def validation_loss(params, x, y, reduction="sum"):
    """Cross-entropy on the meta-validation batch and its head gradient."""
    trace = model.forward(params, x)
    loss, g = losses.ce_loss(trace.logits, y)
    s = losses.reduce_scale(len(y), reduction)
    g = g * s
    return float(s * loss.sum()), model.backward(params, trace, g)


def _analytic_hypergradient(params, bl, y, sigmas, v_w, v_b, cfg):
    """-alpha times the derivative of grad_Sigma L_B along v = grad L_val.

    Mixed partials commute, so this equals the chain rule through the
    lookahead step. Everything is closed form in the pairwise differences
    D_kc = w_c - w_k and their directional change v_c - v_k.
    """
    W = params["fc.weight"]
    C = W.shape[0]
    lam = cfg.lam
    onehot = np.zeros((y.size, C))
    onehot[np.arange(y.size), y] = 1.0
    r = kernels.pair_sigma_apply(W, sigmas)
    dv = v_w[None, :, :] - v_w[:, None, :]
    doffset = lam * np.einsum("kci,kci->kc", r, dv)
    du = bl.trace.features @ v_w.T + v_b + doffset[y]
    dg = bl.sample_weights[:, None] * cfg.base.hvp(bl.isda.adjusted, y, du)
    dcoef = onehot.T @ dg
    dgrad = 0.5 * lam * (kernels.pair_outer_sum(W, dcoef) + kernels.pair_cross_sum(W, v_w, bl.isda.class_coef))
    return -cfg.alpha * dgrad


def hypergradient(params, x, y, xv, yv, sigmas, weights, cfg):
    """Gradient of the validation loss at the lookahead parameters with
    respect to every class covariance, shape (C, d, d)."""
    y = np.asarray(y, dtype=np.int64)
    sigmas = np.asarray(sigmas, dtype=np.float64)
    C, d = params["fc.weight"].shape
    if cfg.alpha == 0 or cfg.lam == 0:
        return np.zeros((C, d, d))
    if cfg.hypergrad == "analytic":
        if set(cfg.trainable) != set(model.HEAD):
            raise UnsupportedConfigurationError(
                "analytic hypergradient covers the classifier head only; use hypergrad='fd'"
            )
        tilde, bl = lookahead(params, x, y, sigmas, weights, cfg.alpha, cfg.lam, cfg.base, cfg.reduction, cfg.trainable)
        _, vgrads = validation_loss(tilde, xv, yv, cfg.reduction)
        return _analytic_hypergradient(params, bl, y, sigmas, vgrads["fc.weight"], vgrads["fc.bias"], cfg)
    return fd_hypergradient(params, x, y, xv, yv, sigmas, weights, cfg)


def fd_hypergradient(params, x, y, xv, yv, sigmas, weights, cfg, h=None):
    """Central differences of the full lookahead + validation pipeline in each
    covariance entry. Classes absent from the batch are exactly zero."""
    h = cfg.fd_h if h is None else h
    y = np.asarray(y, dtype=np.int64)
    sigmas = np.asarray(sigmas, dtype=np.float64)
    out = np.zeros_like(sigmas)

    def outer(s):
        tilde, _ = lookahead(params, x, y, s, weights, cfg.alpha, cfg.lam, cfg.base, cfg.reduction, cfg.trainable)
        return validation_loss(tilde, xv, yv, cfg.reduction)[0]

    for k in np.unique(y):
        for idx in np.ndindex(sigmas.shape[1:]):
            sp = sigmas.copy()
            sm = sigmas.copy()
            sp[(k, *idx)] += h
            sm[(k, *idx)] -= h
            out[(k, *idx)] = (outer(sp) - outer(sm)) / (2.0 * h)
    return out


@dataclass
class MetaTrace:
    loss_train: float
    params_lookahead: dict
    loss_val: float
    sigma_grad: np.ndarray
    bank: cov.CovarianceBank
    loss_train_updated: float
    params: dict


def meta_step(params, x, y, xv, yv, bank, weights, cfg, sgd_state):
    """One phase-2 iteration: lookahead, hypergradient, covariance update and
    the real parameter update under the updated covariances."""
    y = np.asarray(y, dtype=np.int64)
    tilde, bl = lookahead(params, x, y, bank.sigmas, weights, cfg.alpha, cfg.lam, cfg.base, cfg.reduction, cfg.trainable)
    loss_val, vgrads = validation_loss(tilde, xv, yv, cfg.reduction)
    C, d = params["fc.weight"].shape
    if cfg.alpha == 0 or cfg.lam == 0:
        g_sigma = np.zeros((C, d, d))
    elif cfg.hypergrad == "analytic":
        if set(cfg.trainable) != set(model.HEAD):
            raise UnsupportedConfigurationError(
                "analytic hypergradient covers the classifier head only; use hypergrad='fd'"
            )
        g_sigma = _analytic_hypergradient(params, bl, y, bank.sigmas, vgrads["fc.weight"], vgrads["fc.bias"], cfg)
    else:
        g_sigma = fd_hypergradient(params, x, y, xv, yv, bank.sigmas, weights, cfg)
    new_bank = cov.apply_sigma_gradient(bank, g_sigma, cfg.gamma)
    bl2 = losses.weighted_batch_loss(params, x, y, new_bank.sigmas, weights, cfg.lam, cfg.base, cfg.reduction)
    grads = {k: bl2.grads[k] for k in cfg.trainable}
    if cfg.plain_final_step:
        new_params = _step(params, grads, cfg.alpha, cfg.trainable)
    else:
        new_params = model.sgd_step(params, grads, sgd_state)
    return MetaTrace(bl.value, tilde, loss_val, g_sigma, new_bank, bl2.value, new_params)


def _lr_at(cfg, t):
    lr = cfg.lr
    for step, factor in cfg.schedule:
        if t > step:
            lr *= factor
    return lr


def _base_loss(cfg, counts):
    if cfg.base_loss == "focal":
        return losses.BaseLoss("focal", cfg.focal_gamma)
    if cfg.base_loss == "ldam":
        return losses.BaseLoss.ldam(np.maximum(counts, 1), cfg.ldam_max_margin)
    return losses.CE


def class_weights_for(cfg, counts):
    """Effective-number weights for a config; None when re-weighting is off."""
    if not cfg.reweight:
        return None
    beta = cfg.beta
    if beta is None:
        n = int(np.sum(counts))
        beta = (n - 1) / n
    return losses.effective_number_weights(np.maximum(counts, 1), beta, cfg.normalize_weights)


class BatchStream:
    """Epoch-wise shuffled mini-batches; the last short batch of an epoch is kept."""

    def __init__(self, n, batch_size, rng):
        self.n, self.batch_size, self.rng = n, batch_size, rng
        self._order = np.zeros(0, dtype=np.int64)
        self._pos = 0

    def next(self):
        if self._pos >= self._order.size:
            self._order = self.rng.permutation(self.n)
            self._pos = 0
        rows = self._order[self._pos : self._pos + self.batch_size]
        self._pos += self.batch_size
        return rows


@dataclass
class TrainResult:
    params: dict
    bank: cov.CovarianceBank
    history: list
    stats: cov.ClassStats
    estimated_bank: cov.CovarianceBank
    config: object
    weights: np.ndarray = None


def _record(t, phase, loss_b, loss_val, lr, traces):
    return {
        "step": t,
        "phase": phase,
        "L_B": loss_b,
        "L_val": loss_val,
        "lr": lr,
        "sigma_trace_norms": [float(v) for v in traces],
    }


def train(split, cfg, on_record=None):
    """Two-phase schedule: plain training up to ``t1``, then ISDA (fixed or
    meta-learned covariances) up to ``t2``.

    Streaming class statistics are collected throughout; at the phase switch
    they seed the covariance bank. ``on_record`` receives each history record
    as it is produced.
    """
    cfg = cfg.validate().resolved()
    train_set, val_set = split.train, split.meta_val
    if len(train_set) == 0:
        raise ConfigError(["data: training split is empty"])
    needs_val = cfg.isda == "meta" and cfg.t2 > cfg.t1
    if needs_val and (val_set is None or len(val_set) == 0):
        raise ConfigError(["meta_val: meta phase needs a non-empty meta-validation split"])
    C = train_set.num_classes
    counts = train_set.class_counts
    rng_init, rng_batch, rng_val = child_rngs(cfg.seed, 3)
    params = model.init_params(train_set.dim, C, rng_init, cfg.hidden)
    feat_dim = params["fc.weight"].shape[1]
    sgd = model.SgdState(cfg.lr, cfg.momentum, cfg.weight_decay)
    stats = cov.ClassStats(C, feat_dim)
    weights = class_weights_for(cfg, counts)
    reweight_start = cfg.t1 if cfg.reweight_start is None else cfg.reweight_start
    base = _base_loss(cfg, counts)
    warm = losses.CE if cfg.warmup_loss == "ce" else base
    stream = BatchStream(len(train_set), cfg.batch_size, rng_batch)
    val_size = cfg.val_batch_size or min(10 * C, len(val_set) if val_set is not None else 0)
    head_only = cfg.freeze_features or not cfg.hidden
    phase2_trainable = model.HEAD if head_only else tuple(params)
    bank = None
    history = []

    for t in range(1, cfg.t2 + 1):
        lr = _lr_at(cfg, t)
        sgd.lr = lr
        rows = stream.next()
        x, y = train_set.features[rows], train_set.labels[rows]
        eps = weights if (weights is not None and t > reweight_start) else None
        loss_val = None
        if t <= cfg.t1 or cfg.isda == "off":
            phase = 1 if t <= cfg.t1 else 2
            loss_fn = warm if t <= cfg.t1 else base
            bl = losses.weighted_batch_loss(params, x, y, None, eps, 0.0, loss_fn, cfg.reduction)
            stats.update(bl.trace.features, y)
            trainable = tuple(params) if t <= cfg.t1 else phase2_trainable
            params = model.sgd_step(params, {k: bl.grads[k] for k in trainable}, sgd)
            loss_b = bl.value
            traces = np.trace(stats.covariance(cfg.unbiased_cov), axis1=1, axis2=2)
        else:
            phase = 2
            feats = model.extract_features(params, x)
            if cfg.isda == "estimated":
                stats.update(feats, y)
                bank = cov.get_bank(stats, cfg.lam, cfg.unbiased_cov)
                bl = losses.weighted_batch_loss(params, x, y, bank.sigmas, eps, cfg.lam, base, cfg.reduction)
                params = model.sgd_step(params, {k: bl.grads[k] for k in phase2_trainable}, sgd)
                loss_b = bl.value
            else:
                if bank is None:
                    bank = cov.get_bank(stats, cfg.lam, cfg.unbiased_cov, cfg.psd_policy)
                    if cfg.isda == "meta":
                        bank = cov.learnable_bank(bank, cfg.psd_policy, cfg.sigma_init)
                stats.update(feats, y)
                if cfg.isda == "frozen":
                    bl = losses.weighted_batch_loss(params, x, y, bank.sigmas, eps, cfg.lam, base, cfg.reduction)
                    params = model.sgd_step(params, {k: bl.grads[k] for k in phase2_trainable}, sgd)
                    loss_b = bl.value
                else:
                    vrows = sample_stratified(val_set, val_size, rng_val)
                    mcfg = MetaStepConfig(
                        alpha=lr,
                        gamma=cfg.gamma,
                        lam=cfg.lam,
                        base=base,
                        reduction=cfg.reduction,
                        hypergrad=cfg.hypergrad,
                        fd_h=cfg.fd_h,
                        trainable=phase2_trainable,
                        plain_final_step=cfg.plain_final_step,
                    )
                    tr = meta_step(
                        params, x, y, val_set.features[vrows], val_set.labels[vrows], bank, eps, mcfg, sgd
                    )
                    params, bank = tr.params, tr.bank
                    loss_b, loss_val = tr.loss_train, tr.loss_val
            traces = bank.traces()
        rec = _record(t, phase, loss_b, loss_val, lr, traces)
        history.append(rec)
        if on_record is not None:
            on_record(rec)

    estimated = cov.get_bank(stats, cfg.lam, cfg.unbiased_cov, cfg.psd_policy)
    if bank is None:
        bank = estimated
    return TrainResult(params, bank, history, stats, estimated, cfg, weights)


def history_lines(history):
    return "".join(json.dumps(r, sort_keys=True) + "\n" for r in history)


ABLATION_VARIANTS = {
    "metasaug": {},
    "no-reweight": {"reweight": False},
    "no-meta": {"isda": "frozen"},
    "isda-cb": {"isda": "estimated", "reweight": True},
}


def ablation_modes(cfg):
    """Configurations for the ablation grid built around a meta config."""
    return {name: replace(cfg, ablation="none", **delta) for name, delta in ABLATION_VARIANTS.items()}
