"""Anisotropic squared-exponential kernel, with a compiled fast path.

At import time the Cython extension ``dosebo._sqexp`` is preferred; if it is
not built (or fails to load) the NumPy implementation in
``dosebo._sqexp_py`` is used instead. Both expose the same three routines and
produce identical results to floating-point roundoff.
"""

from __future__ import annotations

import numpy as np

from . import _sqexp_py

try:
    from . import _sqexp as _impl

    USING_EXTENSION = True
except ImportError:  # pragma: no cover - depends on build environment
    _impl = _sqexp_py
    USING_EXTENSION = False

# Kept importable so the benchmark (and parity tests) can compare both paths.
PY_IMPL = _sqexp_py
ACTIVE_IMPL = _impl


def _as_c_double(a) -> np.ndarray:
    return np.ascontiguousarray(a, dtype=np.float64)


def cross_correlation(x, y, lengthscales) -> np.ndarray:
    """exp(-sum_m (x_im - y_jm)^2 / (2 l_m^2)) for every pair, shape (n, m)."""
    x = _as_c_double(x)
    y = _as_c_double(y)
    ls = _as_c_double(lengthscales)
    if x.shape[1] != y.shape[1] or x.shape[1] != ls.shape[0]:
        raise ValueError(
            f"dimension mismatch: points have {x.shape[1]}/{y.shape[1]} coordinates, "
            f"{ls.shape[0]} lengthscales given"
        )
    return _impl.cross_correlation(x, y, ls)


def self_correlation(x, lengthscales) -> np.ndarray:
    """Symmetric correlation matrix of one point set (unit diagonal)."""
    x = _as_c_double(x)
    ls = _as_c_double(lengthscales)
    if x.shape[1] != ls.shape[0]:
        raise ValueError(
            f"dimension mismatch: points have {x.shape[1]} coordinates, "
            f"{ls.shape[0]} lengthscales given"
        )
    return _impl.self_correlation(x, ls)


def lengthscale_grad_terms(x, weight, corr, lengthscales) -> np.ndarray:
    """Per-lengthscale contractions used by the marginal-likelihood gradient."""
    return _impl.lengthscale_grad_terms(
        _as_c_double(x), _as_c_double(weight), _as_c_double(corr), _as_c_double(lengthscales)
    )
