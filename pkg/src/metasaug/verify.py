"""Numerical self-checks behind ``metasaug verify``.

Each check draws random small instances, compares an analytic quantity
with an independent route (finite differences, Monte Carlo, two-pass
statistics, decimal arithmetic) and returns a :class:`CheckResult`.
"""

import time
from dataclasses import asdict, dataclass, field
from decimal import Decimal, getcontext

import numpy as np

from . import covariance as cov
from . import losses, meta, model
from .numerics import child_rngs, make_rng


@dataclass
class CheckResult:
    name: str
    measured: float
    threshold: float
    passed: bool
    instances: int
    seconds: float = 0.0
    details: dict = field(default_factory=dict)

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] {self.name}: measured {self.measured:.3e} vs threshold {self.threshold:.3e} ({self.instances} instances, {self.seconds:.1f}s)"

    def to_dict(self):
        return asdict(self)


def random_psd(d, rng, scale=1.0):
    a = rng.standard_normal((d, d))
    s = a @ a.T / d * scale
    return 0.5 * (s + s.T)


def random_instance(rng, max_d=6, max_c=5, n=None, sigma_scale=1.0, w_scale=1.0):
    """Small ISDA problem: features, labels, head, PSD bank and strength."""
    d = int(rng.integers(1, max_d + 1))
    C = int(rng.integers(2, max_c + 1))
    n = int(rng.integers(1, 8)) if n is None else n
    return dict(
        features=rng.standard_normal((n, d)),
        y=rng.integers(0, C, n),
        W=w_scale * rng.standard_normal((C, d)),
        b=rng.standard_normal(C),
        sigmas=np.stack([random_psd(d, rng, sigma_scale) for _ in range(C)]),
        lam=float(rng.choice([0.25, 0.5, 0.75, 1.0])),
        counts=rng.integers(1, 500, C),
    )


def central_diff(fn, x, h):
    x = np.array(x, dtype=np.float64)
    out = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        xp = x.copy()
        xm = x.copy()
        xp[idx] += h
        xm[idx] -= h
        out[idx] = (fn(xp) - fn(xm)) / (2.0 * h)
    return out


def scaled_error(analytic, reference, rtol, atol):
    """max |a - r| / max(rtol |r|, atol); <= 1 means within tolerance."""
    a = np.asarray(analytic, dtype=np.float64)
    r = np.asarray(reference, dtype=np.float64)
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(a - r) / np.maximum(rtol * np.abs(r), atol)))


def _bases(inst, rng):
    return [
        losses.CE,
        losses.BaseLoss("focal", float(rng.choice([0.5, 1.0, 2.0]))),
        losses.BaseLoss.ldam(inst["counts"]),
    ]


def check_isda_gradients(instances=50, seed=0, rtol=1e-6, atol=1e-8, h=1e-6):
    """Analytic W, b, Sigma gradients of the (weighted) ISDA loss against
    central differences, for the CE, focal and LDAM bases."""
    t0 = time.perf_counter()
    rng = make_rng(seed)
    worst = 0.0
    for _ in range(instances):
        inst = random_instance(rng)
        sw = rng.uniform(0.5, 2.0, inst["y"].size)
        for base in _bases(inst, rng):
            g = losses.isda_gradients(
                inst["features"], inst["y"], inst["W"], inst["b"], inst["sigmas"], inst["lam"], base, sw
            )

            def total(W=inst["W"], b=inst["b"], S=inst["sigmas"], base=base):
                return float(np.dot(sw, losses.isda_linf(inst["features"], inst["y"], W, b, S, inst["lam"], base).loss))

            worst = max(
                worst,
                scaled_error(g.W, central_diff(lambda W: total(W=W), inst["W"], h), rtol, atol),
                scaled_error(g.b, central_diff(lambda b: total(b=b), inst["b"], h), rtol, atol),
                scaled_error(g.sigma, central_diff(lambda S: total(S=S), inst["sigmas"], h), rtol, atol),
            )
    return CheckResult("grad", worst, 1.0, worst <= 1.0, instances, time.perf_counter() - t0,
                       {"rtol": rtol, "atol": atol, "h": h, "bases": ["ce", "focal", "ldam"]})


def check_model_gradients(instances=20, seed=0, rtol=1e-6, atol=1e-8, h=1e-6):
    """MLP backward pass against central differences of a random linear
    functional of the logits."""
    t0 = time.perf_counter()
    rng = make_rng(seed)
    worst = 0.0
    for _ in range(instances):
        d_in = int(rng.integers(1, 5))
        hidden = tuple(int(v) for v in rng.integers(1, 5, int(rng.integers(0, 3))))
        C = int(rng.integers(2, 5))
        params = model.init_params(d_in, C, rng, hidden)
        for k in params:
            params[k] = params[k] + 0.3 * rng.standard_normal(params[k].shape)
        x = rng.standard_normal((int(rng.integers(1, 6)), d_in))
        probe = rng.standard_normal((x.shape[0], C))
        trace = model.forward(params, x)
        grads = model.backward(params, trace, probe)
        for name in params:

            def f(v, name=name):
                p = dict(params)
                p[name] = v
                return float(np.sum(probe * model.forward(p, x).logits))

            worst = max(worst, scaled_error(grads[name], central_diff(f, params[name], h), rtol, atol))
    return CheckResult("model-grad", worst, 1.0, worst <= 1.0, instances, time.perf_counter() - t0,
                       {"rtol": rtol, "atol": atol, "h": h})


def hypergrad_instance(rng, max_d=4, max_c=3):
    d = int(rng.integers(1, max_d + 1))
    C = int(rng.integers(2, max_c + 1))
    params = {
        "fc.weight": rng.standard_normal((C, d)),
        "fc.bias": rng.standard_normal(C),
    }
    n, nv = int(rng.integers(2, 9)), int(rng.integers(2, 7))
    return dict(
        params=params,
        x=rng.standard_normal((n, d)),
        y=rng.integers(0, C, n),
        xv=rng.standard_normal((nv, d)),
        yv=rng.integers(0, C, nv),
        sigmas=np.stack([random_psd(d, rng) for _ in range(C)]),
        weights=rng.uniform(0.2, 3.0, C),
        counts=rng.integers(1, 300, C),
        alpha=float(rng.uniform(0.05, 0.5)),
        lam=float(rng.choice([0.25, 0.5, 0.75, 1.0])),
        reduction=str(rng.choice(["sum", "mean"])),
    )


def check_hypergradient(instances=30, seed=0, rtol=1e-4, atol=1e-8, h=1e-5):
    """Closed-form covariance hypergradient against central differences of the
    full lookahead + validation pipeline; exact zeros when alpha or lambda is 0."""
    t0 = time.perf_counter()
    rng = make_rng(seed)
    worst = 0.0
    zeros_ok = True
    for i in range(instances):
        inst = hypergrad_instance(rng)
        bases = [losses.CE, losses.BaseLoss("focal", 2.0), losses.BaseLoss.ldam(inst["counts"])]
        base = bases[i % 3]
        cfg = meta.MetaStepConfig(alpha=inst["alpha"], gamma=1.0, lam=inst["lam"], base=base,
                                  reduction=inst["reduction"], fd_h=h)
        args = (inst["params"], inst["x"], inst["y"], inst["xv"], inst["yv"], inst["sigmas"], inst["weights"])
        analytic = meta.hypergradient(*args, cfg)
        fd = meta.fd_hypergradient(*args, cfg)
        worst = max(worst, scaled_error(analytic, fd, rtol, atol))
        for zero_cfg in (meta.MetaStepConfig(0.0, 1.0, inst["lam"], base), meta.MetaStepConfig(inst["alpha"], 1.0, 0.0, base)):
            if np.any(meta.hypergradient(*args, zero_cfg) != 0.0):
                zeros_ok = False
    return CheckResult("hypergrad", worst, 1.0, worst <= 1.0 and zeros_ok, instances, time.perf_counter() - t0,
                       {"rtol": rtol, "atol": atol, "h": h, "exact_zeros": zeros_ok})


def check_mc_bound(instances=50, samples=100_000, seed=0, bound_k=3.0, moment_k=4.0):
    """Sampled augmentation against the closed-form bound and the Gaussian
    moment identity."""
    t0 = time.perf_counter()
    rng_inst, rng_draw = child_rngs(seed, 2)
    bound_ok = moment_ok = True
    worst_excess = -np.inf
    worst_z = 0.0
    for _ in range(instances):
        inst = random_instance(rng_inst, max_d=4, max_c=4, n=1, sigma_scale=0.5, w_scale=0.7)
        rows = losses.monte_carlo_bound_check(
            inst["features"], inst["y"], inst["W"], inst["b"], inst["sigmas"], inst["lam"], samples, rng_draw,
            bound_k, moment_k,
        )
        for r in rows:
            bound_ok &= r.bound_ok
            moment_ok &= r.moment_ok
            se = max(r.mc_se, 1e-300)
            worst_excess = max(worst_excess, (r.mc_mean - r.linf) / se)
            worst_z = max(worst_z, r.moment_max_z)
    return CheckResult("mc-bound", float(worst_excess), bound_k, bound_ok and moment_ok, instances,
                       time.perf_counter() - t0,
                       {"samples": samples, "bound_ok": bool(bound_ok), "moment_ok": bool(moment_ok),
                        "worst_bound_excess_in_se": float(worst_excess), "worst_moment_z": float(worst_z),
                        "moment_threshold": moment_k})


def two_pass_stats(features, labels, num_classes):
    d = features.shape[1]
    counts = np.zeros(num_classes, dtype=np.int64)
    means = np.zeros((num_classes, d))
    covs = np.zeros((num_classes, d, d))
    for c in range(num_classes):
        xc = features[labels == c]
        counts[c] = xc.shape[0]
        if xc.shape[0]:
            means[c] = xc.sum(axis=0) / xc.shape[0]
            centered = xc - means[c]
            covs[c] = centered.T @ centered / xc.shape[0]
    return counts, means, covs


def random_partition(n, parts, rng):
    cuts = np.sort(rng.choice(np.arange(1, n), size=min(parts - 1, n - 1), replace=False)) if n > 1 else []
    return np.split(np.arange(n), cuts)


def check_streaming_covariance(streams=20, partitions=5, seed=0, tol=1e-8):
    """Streaming per-class statistics against the two-pass oracle under
    several random batch partitions of the same stream."""
    t0 = time.perf_counter()
    rng = make_rng(seed)
    worst = 0.0
    for _ in range(streams):
        C = int(rng.integers(1, 6))
        d = int(rng.integers(1, 6))
        n = int(rng.integers(1, 300))
        x = rng.standard_normal((n, d)) * rng.uniform(0.1, 5.0) + rng.uniform(-10, 10, d)
        y = rng.integers(0, C, n)
        counts, means, covs = two_pass_stats(x, y, C)
        for _ in range(partitions):
            stats = cov.ClassStats(C, d)
            for chunk in random_partition(n, int(rng.integers(1, 12)), rng):
                stats.update(x[chunk], y[chunk])
            if not np.array_equal(stats.counts, counts):
                worst = np.inf
            worst = max(worst, float(np.max(np.abs(stats.means - means))),
                        float(np.max(np.abs(stats.covariance() - covs))))
    return CheckResult("streaming-cov", worst, tol, worst <= tol, streams, time.perf_counter() - t0,
                       {"partitions": partitions})


def decimal_class_weight(beta, n, digits=60):
    getcontext().prec = digits
    b = Decimal(float(beta))
    return (1 - b) / (1 - b ** int(n))


def check_class_weights(pairs=100, seed=0, tol=4e-15):
    """Effective-number weights against 60-digit decimal evaluation."""
    t0 = time.perf_counter()
    rng = make_rng(seed)
    betas = np.concatenate([1.0 - 10.0 ** -rng.uniform(0.3, 6, pairs // 2), rng.uniform(0, 1, pairs - pairs // 2)])
    counts = rng.integers(1, 100_000, pairs)
    counts[:5] = 1
    worst = 0.0
    for beta, n in zip(betas, counts):
        got = losses.effective_number_weights([n], float(beta))[0]
        ref = decimal_class_weight(beta, n)
        worst = max(worst, float(abs((Decimal(float(got)) - ref) / ref)))
    ones = losses.effective_number_weights(np.ones(5), 0.9999)
    exact_one = bool(np.all(ones == 1.0))
    return CheckResult("weights", worst, tol, worst <= tol and exact_one, pairs, time.perf_counter() - t0,
                       {"n1_exactly_one": exact_one})


def check_collapse(instances=1000, seed=0, tol=1e-12):
    """ISDA loss with zero covariance or zero strength equals the base loss."""
    t0 = time.perf_counter()
    rng = make_rng(seed)
    worst = 0.0
    for _ in range(instances):
        inst = random_instance(rng, max_d=8, max_c=10)
        for base in _bases(inst, rng):
            raw = inst["features"] @ inst["W"].T + inst["b"]
            ref, _ = base.value_and_grad(raw, inst["y"])
            zero = losses.isda_linf(inst["features"], inst["y"], inst["W"], inst["b"],
                                    np.zeros_like(inst["sigmas"]), inst["lam"], base).loss
            nolam = losses.isda_linf(inst["features"], inst["y"], inst["W"], inst["b"], inst["sigmas"], 0.0, base).loss
            worst = max(worst, float(np.max(np.abs(zero - ref))), float(np.max(np.abs(nolam - ref))))
    return CheckResult("collapse", worst, tol, worst <= tol, instances, time.perf_counter() - t0)


CHECKS = {
    "grad": check_isda_gradients,
    "model-grad": check_model_gradients,
    "hypergrad": check_hypergradient,
    "mc-bound": check_mc_bound,
    "streaming-cov": check_streaming_covariance,
    "weights": check_class_weights,
    "collapse": check_collapse,
}
