"""Pure-numpy reference kernels.

Every function here has a numba twin in ``_kernels_numba`` with identical
semantics; ``backend`` picks one set at import time. Keep signatures flat
(arrays + scalars) so both variants stay interchangeable.
"""

import numpy as np

BACKEND_NAME = "numpy"


def sigmoid(x):
    # exp(-|x|) never overflows; both branches are algebraically identical.
    z = np.exp(-np.abs(x))
    return np.where(x >= 0.0, 1.0 / (1.0 + z), z / (1.0 + z))


def psi(w, inv_t):
    """Elementwise soft keep-mask 2*sigmoid(w^2/t) - 1, in [0, 1)."""
    return 2.0 * sigmoid(w * w * inv_t) - 1.0


def psi_grad(w, inv_t):
    """Elementwise derivative of ``psi`` w.r.t. w."""
    s = sigmoid(w * w * inv_t)
    return 4.0 * w * inv_t * s * (1.0 - s)


def binarize(soft, threshold):
    """Crisp {0,1} mask: 1.0 where soft >= threshold."""
    return (soft >= threshold).astype(np.float64)


def reach_forward(mat, vec):
    """h(mat^T @ vec) with h(x) = 1 iff x > 0; mat, vec are 0/1-valued."""
    return (mat.T @ vec > 0.0).astype(np.float64)


def reach_backward(mat, vec):
    """h(mat @ vec) with h(x) = 1 iff x > 0; mat, vec are 0/1-valued."""
    return (mat @ vec > 0.0).astype(np.float64)


def adam_step(w, g, m, v, step, lr, beta1, beta2, eps):
    """In-place Adam update on flat float64 arrays."""
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * g * g
    m_hat = m / (1.0 - beta1**step)
    v_hat = v / (1.0 - beta2**step)
    w -= lr * m_hat / (np.sqrt(v_hat) + eps)


def softmax_xent(logits, labels):
    """Summed cross entropy over rows plus the gradient w.r.t. logits.

    Returns (loss_sum, grad) where grad rows are softmax(row) - onehot(label);
    the caller is responsible for the 1/batch factor.
    """
    shifted = logits - logits.max(axis=1, keepdims=True)
    ex = np.exp(shifted)
    denom = ex.sum(axis=1, keepdims=True)
    probs = ex / denom
    rows = np.arange(logits.shape[0])
    loss_sum = float(np.sum(np.log(denom[:, 0]) - shifted[rows, labels]))
    grad = probs
    grad[rows, labels] -= 1.0
    return loss_sum, grad
