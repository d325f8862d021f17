# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops. Signatures mirror ``metasaug._pykernels``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs

cnp.import_array()


def jacobi_eigh(const double[:, ::1] a_in, double tol, int max_sweeps):
    cdef Py_ssize_t n = a_in.shape[0]
    a_np = np.array(a_in, dtype=np.float64, copy=True)
    v_np = np.eye(n, dtype=np.float64)
    cdef double[:, ::1] a = a_np
    cdef double[:, ::1] v = v_np
    cdef Py_ssize_t p, q, k
    cdef double norm = 0.0, off, apq, theta, t, c, s, akp, akq
    cdef int sweep = 0
    for p in range(n):
        for q in range(n):
            norm += a[p, q] * a[p, q]
    norm = sqrt(norm)
    while True:
        off = 0.0
        for p in range(n):
            for q in range(n):
                if p != q:
                    off += a[p, q] * a[p, q]
        if sqrt(off) <= tol * norm:
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
                if fabs(theta) > 1e150:
                    t = 0.5 / theta
                else:
                    t = 1.0 / (fabs(theta) + sqrt(theta * theta + 1.0))
                    if theta < 0.0:
                        t = -t
                c = 1.0 / sqrt(t * t + 1.0)
                s = t * c
                for k in range(n):
                    if k != p and k != q:
                        akp = a[k, p]
                        akq = a[k, q]
                        a[k, p] = c * akp - s * akq
                        a[p, k] = a[k, p]
                        a[k, q] = s * akp + c * akq
                        a[q, k] = a[k, q]
                a[p, p] = a[p, p] - t * apq
                a[q, q] = a[q, q] + t * apq
                a[p, q] = 0.0
                a[q, p] = 0.0
                for k in range(n):
                    akp = v[k, p]
                    akq = v[k, q]
                    v[k, p] = c * akp - s * akq
                    v[k, q] = s * akp + c * akq
    return np.diagonal(a_np).copy(), v_np, sweep


def pair_quadratic(const double[:, ::1] w, const double[:, :, ::1] sig):
    cdef Py_ssize_t C = w.shape[0], d = w.shape[1]
    out_np = np.zeros((C, C), dtype=np.float64)
    cdef double[:, ::1] out = out_np
    cdef double[::1] diff = np.empty(d, dtype=np.float64)
    cdef Py_ssize_t k, c, i, j
    cdef double acc, row
    for k in range(C):
        for c in range(C):
            if c == k:
                continue
            for i in range(d):
                diff[i] = w[c, i] - w[k, i]
            acc = 0.0
            for i in range(d):
                row = 0.0
                for j in range(d):
                    row += sig[k, i, j] * diff[j]
                acc += diff[i] * row
            out[k, c] = acc
    return out_np


def pair_outer_sum(const double[:, ::1] w, const double[:, ::1] coef):
    cdef Py_ssize_t C = w.shape[0], d = w.shape[1]
    out_np = np.zeros((C, d, d), dtype=np.float64)
    cdef double[:, :, ::1] out = out_np
    cdef double[::1] diff = np.empty(d, dtype=np.float64)
    cdef Py_ssize_t k, c, i, j
    cdef double s
    for k in range(C):
        for c in range(C):
            s = coef[k, c]
            if c == k or s == 0.0:
                continue
            for i in range(d):
                diff[i] = w[c, i] - w[k, i]
            for i in range(d):
                for j in range(i, d):
                    out[k, i, j] += s * diff[i] * diff[j]
        for i in range(d):
            for j in range(i + 1, d):
                out[k, j, i] = out[k, i, j]
    return out_np


def pair_cross_sum(const double[:, ::1] w, const double[:, ::1] dw, const double[:, ::1] coef):
    cdef Py_ssize_t C = w.shape[0], d = w.shape[1]
    out_np = np.zeros((C, d, d), dtype=np.float64)
    cdef double[:, :, ::1] out = out_np
    cdef double[::1] diff = np.empty(d, dtype=np.float64)
    cdef double[::1] ddiff = np.empty(d, dtype=np.float64)
    cdef Py_ssize_t k, c, i, j
    cdef double s
    for k in range(C):
        for c in range(C):
            s = coef[k, c]
            if c == k or s == 0.0:
                continue
            for i in range(d):
                diff[i] = w[c, i] - w[k, i]
                ddiff[i] = dw[c, i] - dw[k, i]
            for i in range(d):
                for j in range(i, d):
                    out[k, i, j] += s * (ddiff[i] * diff[j] + diff[i] * ddiff[j])
        for i in range(d):
            for j in range(i + 1, d):
                out[k, j, i] = out[k, i, j]
    return out_np


def pair_sigma_apply(const double[:, ::1] w, const double[:, :, ::1] sig):
    cdef Py_ssize_t C = w.shape[0], d = w.shape[1]
    out_np = np.zeros((C, C, d), dtype=np.float64)
    cdef double[:, :, ::1] out = out_np
    cdef double[::1] diff = np.empty(d, dtype=np.float64)
    cdef Py_ssize_t k, c, i, j
    cdef double row
    for k in range(C):
        for c in range(C):
            if c == k:
                continue
            for i in range(d):
                diff[i] = w[c, i] - w[k, i]
            for i in range(d):
                row = 0.0
                for j in range(d):
                    row += 0.5 * (sig[k, i, j] + sig[k, j, i]) * diff[j]
                out[k, c, i] = row
    return out_np
