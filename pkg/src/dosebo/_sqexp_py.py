"""NumPy fallback for the compiled squared-exponential kernel routines.

Signatures mirror ``dosebo._sqexp`` exactly; ``dosebo.kernels`` picks one of
the two implementations at import time.
"""

import numpy as np


def cross_correlation(x, y, lengthscales):
    """Correlation matrix exp(-sum_m (x_im - y_jm)^2 / (2 l_m^2)), shape (n, m)."""
    diff = x[:, None, :] - y[None, :, :]
    sq = (diff * diff) / (2.0 * lengthscales**2)
    return np.exp(-sq.sum(axis=2))


def self_correlation(x, lengthscales):
    """Symmetric correlation matrix of one point set, unit diagonal."""
    k = cross_correlation(x, x, lengthscales)
    np.fill_diagonal(k, 1.0)
    return k


def lengthscale_grad_terms(x, weight, corr, lengthscales):
    """Per-lengthscale sums 0.5 * sum_ij weight_ij * corr_ij * (x_im - x_jm)^2 / l_m^2."""
    wc = weight * corr
    d = x.shape[1]
    out = np.empty(d)
    for m in range(d):
        dm = x[:, m, None] - x[None, :, m]
        out[m] = 0.5 * np.sum(wc * dm * dm) / lengthscales[m] ** 2
    return out
