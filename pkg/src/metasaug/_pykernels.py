"""Numpy implementations of the compiled kernels.

Every function here has a twin in ``_ckernels.pyx`` with the same signature
and semantics. Pair kernels index a difference ``D[k, c] = w[c] - w[k]``.
"""

import math

import numpy as np


def jacobi_eigh(a, tol, max_sweeps):
    """Cyclic Jacobi sweeps on a symmetric matrix.

    Returns ``(eigenvalues, eigenvectors, sweeps)`` unsorted, or ``None`` if
    ``max_sweeps`` is exhausted before the off-diagonal norm drops below
    ``tol * ||a||_F``.
    """
    a = np.array(a, dtype=np.float64, copy=True)
    n = a.shape[0]
    v = np.eye(n)
    norm = math.sqrt(float(np.sum(a * a)))
    sweep = 0
    while True:
        offdiag = a - np.diag(np.diagonal(a))
        if math.sqrt(float(np.sum(offdiag * offdiag))) <= tol * norm:
            break
        if sweep >= max_sweeps:
            return None
        sweep += 1
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                if abs(theta) > 1e150:
                    t = 0.5 / theta
                else:
                    t = math.copysign(1.0 / (abs(theta) + math.sqrt(theta * theta + 1.0)), theta)
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                app, aqq = a[p, p], a[q, q]
                col_p = a[:, p].copy()
                col_q = a[:, q].copy()
                a[:, p] = c * col_p - s * col_q
                a[:, q] = s * col_p + c * col_q
                a[p, :] = a[:, p]
                a[q, :] = a[:, q]
                a[p, p] = app - t * apq
                a[q, q] = aqq + t * apq
                a[p, q] = a[q, p] = 0.0
                vp = v[:, p].copy()
                vq = v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    return np.diagonal(a).copy(), v, sweep


def _diffs(w):
    return w[None, :, :] - w[:, None, :]


def pair_quadratic(w, sig):
    d = _diffs(w)
    return np.einsum("kci,kij,kcj->kc", d, sig, d)


def pair_outer_sum(w, coef):
    d = _diffs(w)
    out = np.einsum("kc,kci,kcj->kij", coef, d, d)
    return 0.5 * (out + out.transpose(0, 2, 1))


def pair_cross_sum(w, dw, coef):
    d = _diffs(w)
    dd = _diffs(dw)
    half = np.einsum("kc,kci,kcj->kij", coef, dd, d)
    return half + half.transpose(0, 2, 1)


def pair_sigma_apply(w, sig):
    sym = 0.5 * (sig + sig.transpose(0, 2, 1))
    return np.einsum("kij,kcj->kci", sym, _diffs(w))
