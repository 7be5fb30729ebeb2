# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops for the anisotropic squared-exponential kernel.

The three routines below sit inside the marginal-likelihood optimizer and are
evaluated thousands of times per simulated trial, so they avoid the temporary
(n, m, dim) arrays a NumPy broadcast would allocate.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp

cnp.import_array()


def cross_correlation(double[:, ::1] x, double[:, ::1] y, double[::1] lengthscales):
    """Correlation matrix exp(-sum_m (x_im - y_jm)^2 / (2 l_m^2)), shape (n, m)."""
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t m = y.shape[0]
    cdef Py_ssize_t d = x.shape[1]
    cdef Py_ssize_t i, j, k
    cdef double acc, diff
    cdef double[::1] inv2 = np.empty(d)
    for k in range(d):
        inv2[k] = 0.5 / (lengthscales[k] * lengthscales[k])
    out_arr = np.empty((n, m))
    cdef double[:, ::1] out = out_arr
    for i in range(n):
        for j in range(m):
            acc = 0.0
            for k in range(d):
                diff = x[i, k] - y[j, k]
                acc += diff * diff * inv2[k]
            out[i, j] = exp(-acc)
    return out_arr


def self_correlation(double[:, ::1] x, double[::1] lengthscales):
    """Symmetric correlation matrix of one point set, unit diagonal."""
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t d = x.shape[1]
    cdef Py_ssize_t i, j, k
    cdef double acc, diff, v
    cdef double[::1] inv2 = np.empty(d)
    for k in range(d):
        inv2[k] = 0.5 / (lengthscales[k] * lengthscales[k])
    out_arr = np.empty((n, n))
    cdef double[:, ::1] out = out_arr
    for i in range(n):
        out[i, i] = 1.0
        for j in range(i + 1, n):
            acc = 0.0
            for k in range(d):
                diff = x[i, k] - x[j, k]
                acc += diff * diff * inv2[k]
            v = exp(-acc)
            out[i, j] = v
            out[j, i] = v
    return out_arr


def lengthscale_grad_terms(double[:, ::1] x, double[:, ::1] weight,
                           double[:, ::1] corr, double[::1] lengthscales):
    """Per-lengthscale sums 0.5 * sum_ij weight_ij * corr_ij * (x_im - x_jm)^2 / l_m^2.

    `weight` must be symmetric; only the strict upper triangle is visited
    (diagonal terms vanish because the squared difference is zero).
    """
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t d = x.shape[1]
    cdef Py_ssize_t i, j, k
    cdef double wc, diff
    cdef double[::1] invsq = np.empty(d)
    for k in range(d):
        invsq[k] = 1.0 / (lengthscales[k] * lengthscales[k])
    out_arr = np.zeros(d)
    cdef double[::1] out = out_arr
    for i in range(n):
        for j in range(i + 1, n):
            wc = weight[i, j] * corr[i, j]
            for k in range(d):
                diff = x[i, k] - x[j, k]
                out[k] += wc * diff * diff * invsq[k]
    return out_arr
