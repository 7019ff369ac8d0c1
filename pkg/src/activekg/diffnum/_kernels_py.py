"""Reference numpy implementations of the hot tape kernels.

Mirrors `_kernels_cy` exactly; selected by `backend` when the compiled
extension is unavailable or ACTIVEKG_PURE_PY=1.
"""

import numpy as np

NAME = "python"


def affine(w, x, b):
    return w @ x + b


def affine_bw(w, x, gy):
    gw = np.outer(gy, x)
    gx = w.T @ gy
    gb = gy.copy()
    return gw, gx, gb


def softmax(x):
    z = x - x.max()
    e = np.exp(z)
    return e / e.sum()


def softmax_bw(y, gy):
    return y * (gy - float(y @ gy))


def log_softmax(x):
    z = x - x.max()
    return z - np.log(np.exp(z).sum())


def log_softmax_bw(y, gy):
    return gy - np.exp(y) * gy.sum()


def logsumexp(x):
    m = float(x.max())
    return m + float(np.log(np.exp(x - m).sum()))


def sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid_bw(y, gy):
    return y * (1.0 - y) * gy


def tanh_(x):
    return np.tanh(x)


def tanh_bw(y, gy):
    return (1.0 - y * y) * gy


def softplus(x):
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def softplus_bw(x, gy):
    return sigmoid(x) * gy
