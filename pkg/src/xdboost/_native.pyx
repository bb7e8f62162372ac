# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels for the training inner loop.

Semantics (including summation order) mirror the numpy fallback in
``xdboost.kernels`` exactly; both paths must produce bit-identical floats.
Source operands may be strided views (column slices); the accumulation
targets must be C-contiguous.
"""

from libc.math cimport sqrt


def scatter_add_rows(double[:, ::1] out, const long long[:] idx,
                     const double[:, :] rows):
    """out[idx[i], :] += rows[i, :], accumulated in row order."""
    cdef Py_ssize_t n = idx.shape[0]
    cdef Py_ssize_t dim = rows.shape[1]
    cdef Py_ssize_t i, j, r
    for i in range(n):
        r = idx[i]
        for j in range(dim):
            out[r, j] = out[r, j] + rows[i, j]


def scatter_add_scalars(double[::1] out, const long long[:] idx,
                        const double[:] vals):
    """out[idx[i]] += vals[i], accumulated in order."""
    cdef Py_ssize_t n = idx.shape[0]
    cdef Py_ssize_t i
    for i in range(n):
        out[idx[i]] = out[idx[i]] + vals[i]


def adam_update(double[::1] param, const double[::1] grad,
                double[::1] m, double[::1] v,
                double lr, double beta1, double beta2, double eps,
                double bc1, double bc2):
    """Fused in-place Adam step on flattened tensors.

    ``bc1``/``bc2`` are the precomputed bias corrections (1 - beta^t).
    """
    cdef Py_ssize_t n = param.shape[0]
    cdef Py_ssize_t i
    cdef double g, g2, mhat, vhat
    for i in range(n):
        g = grad[i]
        g2 = g * g
        m[i] = beta1 * m[i] + (1.0 - beta1) * g
        v[i] = beta2 * v[i] + (1.0 - beta2) * g2
        mhat = m[i] / bc1
        vhat = v[i] / bc2
        param[i] = param[i] - lr * mhat / (sqrt(vhat) + eps)
