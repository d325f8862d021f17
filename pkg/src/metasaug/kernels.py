"""Backend selection for the hot kernels.

The compiled extension is used when it imports; ``METASAUG_BACKEND=python``
forces the numpy fallback.
"""

import os

import numpy as np

from . import _pykernels

_FORCE = os.environ.get("METASAUG_BACKEND", "").strip().lower()

_compiled = None
if _FORCE != "python":
    try:
        from . import _ckernels as _compiled
    except ImportError:
        if _FORCE == "cython":
            raise

BACKEND = "cython" if _compiled is not None else "python"
_impl = _compiled if _compiled is not None else _pykernels


def _c(x):
    return np.ascontiguousarray(x, dtype=np.float64)


def jacobi_eigh(a, tol, max_sweeps):
    return _impl.jacobi_eigh(_c(a), float(tol), int(max_sweeps))


def pair_quadratic(w, sig):
    return _impl.pair_quadratic(_c(w), _c(sig))


def pair_outer_sum(w, coef):
    return _impl.pair_outer_sum(_c(w), _c(coef))


def pair_cross_sum(w, dw, coef):
    return _impl.pair_cross_sum(_c(w), _c(dw), _c(coef))


def pair_sigma_apply(w, sig):
    return _impl.pair_sigma_apply(_c(w), _c(sig))


def available_backends():
    names = ["python"]
    if _compiled is not None:
        names.append("cython")
    return names


def module_for(name):
    """Kernel module by name, for benchmarks and cross-backend tests."""
    if name == "python":
        return _pykernels
    if name == "cython" and _compiled is not None:
        return _compiled
    raise ValueError(f"backend {name!r} not available")
