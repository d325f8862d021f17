"""Small dense linear algebra and seeded randomness.

Matrices are plain ``float64`` numpy arrays. Every entry point validates
shape and finiteness, so downstream code can assume clean inputs.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import DecompositionError, DimensionError

SYMMETRY_TOL = 1e-10
JACOBI_TOL = 1e-12
JACOBI_MAX_SWEEPS = 100


def as_matrix(a, name="matrix"):
    """Coerce to a finite 2-D float64 array."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise DimensionError(f"{name} has non-finite entries")
    return a


def check_symmetric(a, tol=SYMMETRY_TOL, name="matrix"):
    a = as_matrix(a, name)
    if a.shape[0] != a.shape[1]:
        raise DimensionError(f"{name} must be square, got shape {a.shape}")
    scale = max(1.0, float(np.max(np.abs(a)))) if a.size else 1.0
    if a.size and float(np.max(np.abs(a - a.T))) > tol * scale:
        raise DimensionError(f"{name} is not symmetric within {tol:g}")
    return a


@dataclass(frozen=True)
class SymSpectrum:
    """Eigenpairs of a symmetric matrix, eigenvalues in descending order.

    Column ``i`` of ``eigenvectors`` pairs with ``eigenvalues[i]``.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    sweeps: int = 0

    def reconstruct(self):
        q = self.eigenvectors
        return (q * self.eigenvalues) @ q.T


def sym_eig(a):
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations."""
    a = check_symmetric(a)
    n = a.shape[0]
    if n == 0:
        return SymSpectrum(np.zeros(0), np.zeros((0, 0)))
    # exact symmetry so the rotations see one triangle
    a = 0.5 * (a + a.T)
    result = kernels.jacobi_eigh(a, JACOBI_TOL, JACOBI_MAX_SWEEPS)
    if result is None:
        raise DecompositionError(f"Jacobi did not converge in {JACOBI_MAX_SWEEPS} sweeps")
    values, vectors, sweeps = result
    order = np.argsort(-values, kind="stable")
    return SymSpectrum(values[order], np.ascontiguousarray(vectors[:, order]), sweeps)


PSD_TOL = 1e-12


def psd_project(a):
    """Nearest PSD matrix in Frobenius norm: clip negative eigenvalues to 0.

    Inputs whose smallest eigenvalue is above ``-PSD_TOL`` (relative to the
    largest magnitude, floor 1) come back unchanged, which makes the map
    exactly idempotent.
    """
    a = check_symmetric(a)
    a = 0.5 * (a + a.T)
    spec = sym_eig(a)
    if spec.eigenvalues.size == 0:
        return a
    scale = max(1.0, float(np.max(np.abs(spec.eigenvalues))))
    if float(spec.eigenvalues[-1]) >= -PSD_TOL * scale:
        return a
    clipped = np.maximum(spec.eigenvalues, 0.0)
    q = spec.eigenvectors
    out = (q * clipped) @ q.T
    return 0.5 * (out + out.T)


def is_psd(a, tol=1e-10):
    spec = sym_eig(a)
    if spec.eigenvalues.size == 0:
        return True
    scale = max(1.0, abs(float(spec.eigenvalues[0])))
    return float(spec.eigenvalues[-1]) >= -tol * scale


def cholesky_jittered(cov, retries=3):
    """Cholesky factor of a PSD matrix.

    On failure adds ``1e-12 * trace/d`` to the diagonal and retries with 10x
    growth, up to ``retries`` times.
    """
    cov = check_symmetric(cov, name="covariance")
    d = cov.shape[0]
    cov = 0.5 * (cov + cov.T)
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        pass
    base = 1e-12 * float(np.trace(cov)) / max(d, 1)
    if base > 0.0:
        for attempt in range(retries):
            jitter = base * 10.0**attempt
            try:
                return np.linalg.cholesky(cov + jitter * np.eye(d))
            except np.linalg.LinAlgError:
                continue
    raise DecompositionError("covariance is not positive semi-definite")


def make_rng(seed):
    return np.random.default_rng(np.random.SeedSequence(int(seed)))


def child_rngs(seed, n):
    """``n`` independent generators derived from one seed."""
    return [np.random.default_rng(s) for s in np.random.SeedSequence(int(seed)).spawn(n)]


def sample_gaussian(mean, cov, scale, n, rng):
    """Draw ``n`` rows from N(mean, scale * cov)."""
    mean = np.asarray(mean, dtype=np.float64).ravel()
    cov = check_symmetric(cov, name="covariance")
    if cov.shape[0] != mean.size:
        raise DimensionError(f"mean has {mean.size} entries but covariance is {cov.shape}")
    if scale < 0:
        raise DimensionError("scale must be non-negative")
    if scale == 0 or not np.any(cov):
        return np.tile(mean, (n, 1))
    factor = cholesky_jittered(cov)
    z = rng.standard_normal((n, mean.size))
    return mean + np.sqrt(scale) * (z @ factor.T)
