"""Numba-jitted kernels, mirroring ``_kernels_numpy`` exactly.

All array arguments must be C-contiguous float64 (1-D for the elementwise
kernels, 2-D for the matrix ones); the dispatch wrappers take care of that.
"""

import numpy as np
from numba import njit

BACKEND_NAME = "numba"


@njit(cache=True)
def _sigmoid_scalar(x):
    if x >= 0.0:
        z = np.exp(-x)
        return 1.0 / (1.0 + z)
    z = np.exp(x)
    return z / (1.0 + z)


@njit(cache=True)
def sigmoid(x):
    out = np.empty_like(x)
    for i in range(x.size):
        out[i] = _sigmoid_scalar(x[i])
    return out


@njit(cache=True)
def psi(w, inv_t):
    out = np.empty_like(w)
    for i in range(w.size):
        out[i] = 2.0 * _sigmoid_scalar(w[i] * w[i] * inv_t) - 1.0
    return out


@njit(cache=True)
def psi_grad(w, inv_t):
    out = np.empty_like(w)
    for i in range(w.size):
        s = _sigmoid_scalar(w[i] * w[i] * inv_t)
        out[i] = 4.0 * w[i] * inv_t * s * (1.0 - s)
    return out


@njit(cache=True)
def binarize(soft, threshold):
    out = np.empty_like(soft)
    for i in range(soft.size):
        out[i] = 1.0 if soft[i] >= threshold else 0.0
    return out


@njit(cache=True)
def reach_forward(mat, vec):
    n_in, n_out = mat.shape
    out = np.zeros(n_out)
    for j in range(n_out):
        acc = 0.0
        for i in range(n_in):
            acc += mat[i, j] * vec[i]
        if acc > 0.0:
            out[j] = 1.0
    return out


@njit(cache=True)
def reach_backward(mat, vec):
    n_in, n_out = mat.shape
    out = np.zeros(n_in)
    for i in range(n_in):
        acc = 0.0
        for j in range(n_out):
            acc += mat[i, j] * vec[j]
        if acc > 0.0:
            out[i] = 1.0
    return out


@njit(cache=True)
def adam_step(w, g, m, v, step, lr, beta1, beta2, eps):
    bc1 = 1.0 - beta1**step
    bc2 = 1.0 - beta2**step
    for i in range(w.size):
        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i]
        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i]
        m_hat = m[i] / bc1
        v_hat = v[i] / bc2
        w[i] -= lr * m_hat / (np.sqrt(v_hat) + eps)


@njit(cache=True)
def softmax_xent(logits, labels):
    b, c = logits.shape
    grad = np.empty_like(logits)
    loss_sum = 0.0
    for r in range(b):
        hi = logits[r, 0]
        for j in range(1, c):
            if logits[r, j] > hi:
                hi = logits[r, j]
        denom = 0.0
        for j in range(c):
            e = np.exp(logits[r, j] - hi)
            grad[r, j] = e
            denom += e
        y = labels[r]
        loss_sum += np.log(denom) - (logits[r, y] - hi)
        for j in range(c):
            grad[r, j] /= denom
        grad[r, y] -= 1.0
    return loss_sum, grad
