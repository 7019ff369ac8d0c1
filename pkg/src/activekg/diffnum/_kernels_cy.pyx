# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Cython twin of `_kernels_py`: small dense float64 kernels for the tape.

Shapes are tiny (vectors of dim <= a few hundred) and calls are frequent,
so the win over numpy is per-call overhead, not asymptotics.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, expm1, fabs, log, log1p, tanh

cnp.import_array()

NAME = "cython"


def affine(cnp.ndarray[cnp.float64_t, ndim=2] w,
           cnp.ndarray[cnp.float64_t, ndim=1] x,
           cnp.ndarray[cnp.float64_t, ndim=1] b):
    cdef Py_ssize_t m = w.shape[0], n = w.shape[1], i, j
    cdef cnp.ndarray[cnp.float64_t, ndim=1] y = np.empty(m, dtype=np.float64)
    cdef double acc
    cdef double[:, ::1] wv = w
    cdef double[::1] xv = x, bv = b, yv = y
    for i in range(m):
        acc = bv[i]
        for j in range(n):
            acc += wv[i, j] * xv[j]
        yv[i] = acc
    return y


def affine_bw(cnp.ndarray[cnp.float64_t, ndim=2] w,
              cnp.ndarray[cnp.float64_t, ndim=1] x,
              cnp.ndarray[cnp.float64_t, ndim=1] gy):
    cdef Py_ssize_t m = w.shape[0], n = w.shape[1], i, j
    cdef cnp.ndarray[cnp.float64_t, ndim=2] gw = np.empty((m, n), dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] gx = np.zeros(n, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] gb = np.empty(m, dtype=np.float64)
    cdef double[:, ::1] wv = w, gwv = gw
    cdef double[::1] xv = x, gyv = gy, gxv = gx, gbv = gb
    cdef double g
    for i in range(m):
        g = gyv[i]
        gbv[i] = g
        for j in range(n):
            gwv[i, j] = g * xv[j]
            gxv[j] += g * wv[i, j]
    return gw, gx, gb


def softmax(cnp.ndarray[cnp.float64_t, ndim=1] x):
    cdef Py_ssize_t n = x.shape[0], i
    cdef cnp.ndarray[cnp.float64_t, ndim=1] y = np.empty(n, dtype=np.float64)
    cdef double[::1] xv = x, yv = y
    cdef double m = xv[0], s = 0.0
    for i in range(1, n):
        if xv[i] > m:
            m = xv[i]
    for i in range(n):
        yv[i] = exp(xv[i] - m)
        s += yv[i]
    for i in range(n):
        yv[i] /= s
    return y


def softmax_bw(cnp.ndarray[cnp.float64_t, ndim=1] y,
               cnp.ndarray[cnp.float64_t, ndim=1] gy):
    cdef Py_ssize_t n = y.shape[0], i
    cdef cnp.ndarray[cnp.float64_t, ndim=1] gx = np.empty(n, dtype=np.float64)
    cdef double[::1] yv = y, gyv = gy, gxv = gx
    cdef double dot = 0.0
    for i in range(n):
        dot += yv[i] * gyv[i]
    for i in range(n):
        gxv[i] = yv[i] * (gyv[i] - dot)
    return gx


def log_softmax(cnp.ndarray[cnp.float64_t, ndim=1] x):
    cdef Py_ssize_t n = x.shape[0], i
    cdef cnp.ndarray[cnp.float64_t, ndim=1] y = np.empty(n, dtype=np.float64)
    cdef double[::1] xv = x, yv = y
    cdef double m = xv[0], s = 0.0
    for i in range(1, n):
        if xv[i] > m:
            m = xv[i]
    for i in range(n):
        s += exp(xv[i] - m)
    s = m + log(s)
    for i in range(n):
        yv[i] = xv[i] - s
    return y


def log_softmax_bw(cnp.ndarray[cnp.float64_t, ndim=1] y,
                   cnp.ndarray[cnp.float64_t, ndim=1] gy):
    cdef Py_ssize_t n = y.shape[0], i
    cdef cnp.ndarray[cnp.float64_t, ndim=1] gx = np.empty(n, dtype=np.float64)
    cdef double[::1] yv = y, gyv = gy, gxv = gx
    cdef double s = 0.0
    for i in range(n):
        s += gyv[i]
    for i in range(n):
        gxv[i] = gyv[i] - exp(yv[i]) * s
    return gx


def logsumexp(cnp.ndarray[cnp.float64_t, ndim=1] x):
    cdef Py_ssize_t n = x.shape[0], i
    cdef double[::1] xv = x
    cdef double m = xv[0], s = 0.0
    for i in range(1, n):
        if xv[i] > m:
            m = xv[i]
    for i in range(n):
        s += exp(xv[i] - m)
    return m + log(s)


cdef inline double _sigmoid(double v) nogil:
    cdef double e
    if v >= 0.0:
        return 1.0 / (1.0 + exp(-v))
    e = exp(v)
    return e / (1.0 + e)


def sigmoid(cnp.ndarray[cnp.float64_t, ndim=1] x):
    cdef Py_ssize_t n = x.shape[0], i
    cdef cnp.ndarray[cnp.float64_t, ndim=1] y = np.empty(n, dtype=np.float64)
    cdef double[::1] xv = x, yv = y
    for i in range(n):
        yv[i] = _sigmoid(xv[i])
    return y


def sigmoid_bw(cnp.ndarray[cnp.float64_t, ndim=1] y,
               cnp.ndarray[cnp.float64_t, ndim=1] gy):
    cdef Py_ssize_t n = y.shape[0], i
    cdef cnp.ndarray[cnp.float64_t, ndim=1] gx = np.empty(n, dtype=np.float64)
    cdef double[::1] yv = y, gyv = gy, gxv = gx
    for i in range(n):
        gxv[i] = yv[i] * (1.0 - yv[i]) * gyv[i]
    return gx


def tanh_(cnp.ndarray[cnp.float64_t, ndim=1] x):
    cdef Py_ssize_t n = x.shape[0], i
    cdef cnp.ndarray[cnp.float64_t, ndim=1] y = np.empty(n, dtype=np.float64)
    cdef double[::1] xv = x, yv = y
    for i in range(n):
        yv[i] = tanh(xv[i])
    return y


def tanh_bw(cnp.ndarray[cnp.float64_t, ndim=1] y,
            cnp.ndarray[cnp.float64_t, ndim=1] gy):
    cdef Py_ssize_t n = y.shape[0], i
    cdef cnp.ndarray[cnp.float64_t, ndim=1] gx = np.empty(n, dtype=np.float64)
    cdef double[::1] yv = y, gyv = gy, gxv = gx
    for i in range(n):
        gxv[i] = (1.0 - yv[i] * yv[i]) * gyv[i]
    return gx


def softplus(cnp.ndarray[cnp.float64_t, ndim=1] x):
    cdef Py_ssize_t n = x.shape[0], i
    cdef cnp.ndarray[cnp.float64_t, ndim=1] y = np.empty(n, dtype=np.float64)
    cdef double[::1] xv = x, yv = y
    cdef double v
    for i in range(n):
        v = xv[i]
        yv[i] = (v if v > 0.0 else 0.0) + log1p(exp(-fabs(v)))
    return y


def softplus_bw(cnp.ndarray[cnp.float64_t, ndim=1] x,
                cnp.ndarray[cnp.float64_t, ndim=1] gy):
    cdef Py_ssize_t n = x.shape[0], i
    cdef cnp.ndarray[cnp.float64_t, ndim=1] gx = np.empty(n, dtype=np.float64)
    cdef double[::1] xv = x, gyv = gy, gxv = gx
    for i in range(n):
        gxv[i] = _sigmoid(xv[i]) * gy[i]
    return gx
