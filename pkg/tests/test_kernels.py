import os
import subprocess
import sys

import numpy as np
import pytest

from metasaug import _pykernels, kernels

from .conftest import random_psd

BACKENDS = kernels.available_backends()


def brute_pairs(w, sig):
    C, d = w.shape
    q = np.zeros((C, C))
    r = np.zeros((C, C, d))
    for k in range(C):
        for c in range(C):
            diff = w[c] - w[k]
            q[k, c] = diff @ sig[k] @ diff
            r[k, c] = 0.5 * (sig[k] + sig[k].T) @ diff
    return q, r


@pytest.fixture
def problem(rng):
    C, d = 4, 3
    w = rng.standard_normal((C, d))
    sig = np.stack([random_psd(d, rng) for _ in range(C)])
    sig[1] += rng.standard_normal((d, d)) * 0.1  # asymmetric entry
    return w, sig, rng.standard_normal((C, C)), rng.standard_normal((C, d))


@pytest.mark.parametrize("backend", BACKENDS)
def test_pair_kernels_match_brute_force(backend, problem):
    mod = kernels.module_for(backend)
    w, sig, coef, dw = problem
    q, r = brute_pairs(w, sig)
    np.testing.assert_allclose(mod.pair_quadratic(w, sig), q, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(mod.pair_sigma_apply(w, sig), r, rtol=1e-12, atol=1e-12)
    outer = np.zeros((w.shape[0], w.shape[1], w.shape[1]))
    cross = np.zeros_like(outer)
    for k in range(w.shape[0]):
        for c in range(w.shape[0]):
            diff, ddiff = w[c] - w[k], dw[c] - dw[k]
            outer[k] += coef[k, c] * np.outer(diff, diff)
            cross[k] += coef[k, c] * (np.outer(ddiff, diff) + np.outer(diff, ddiff))
    got_outer = mod.pair_outer_sum(w, coef)
    got_cross = mod.pair_cross_sum(w, dw, coef)
    np.testing.assert_allclose(got_outer, outer, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(got_cross, cross, rtol=1e-12, atol=1e-12)
    for g in (got_outer, got_cross):
        assert np.array_equal(g, g.transpose(0, 2, 1))


@pytest.mark.parametrize("backend", BACKENDS)
@pytest.mark.parametrize("d", [1, 2, 5, 30])
def test_jacobi_backends_agree_with_lapack(backend, d, rng):
    a = rng.standard_normal((d, d))
    a = a + a.T
    vals, vecs, sweeps = kernels.module_for(backend).jacobi_eigh(np.ascontiguousarray(a), 1e-12, 100)
    np.testing.assert_allclose(np.sort(vals), np.linalg.eigvalsh(a), atol=1e-10)
    np.testing.assert_allclose((vecs * vals) @ vecs.T, a, atol=1e-10)


def test_jacobi_reports_non_convergence(rng):
    a = rng.standard_normal((6, 6))
    assert _pykernels.jacobi_eigh(a + a.T, 1e-12, 0) is None


def test_env_var_forces_python_backend():
    env = dict(os.environ, METASAUG_BACKEND="python")
    out = subprocess.run([sys.executable, "-c", "import metasaug.kernels as k; print(k.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


def test_default_backend_is_compiled_when_built():
    assert kernels.BACKEND == ("cython" if "cython" in BACKENDS else "python")
