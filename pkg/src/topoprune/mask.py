"""Differentiable keep-mask reparametrization.

The soft mask of a latent weight w is psi_T(w) = 2*sigmoid(w^2 / T) - 1:
symmetric in w, bounded in [0, 1), monotone in |w|, and sharpening toward a
0/1 indicator as the temperature T is annealed down. Masks are always derived
from the latent weights on the fly, never stored as separate parameters.
"""

from dataclasses import dataclass

import numpy as np

from .backend import as_flat64, kernels


def _check_finite(w, name):
    if not np.all(np.isfinite(w)):
        idx = np.argwhere(~np.isfinite(np.asarray(w, dtype=np.float64)))[0]
        pos = tuple(int(i) for i in idx)
        raise ValueError(f"non-finite entry in {name} at index {pos}")


def _check_temperature(t):
    if not (np.isfinite(t) and t > 0.0):
        raise ValueError(f"temperature must be a positive real, got {t!r}")


def psi_apply(w, t, name="W"):
    """Elementwise soft mask 2*sigmoid(w^2/t) - 1.

    Rejects non-finite entries with a diagnostic naming `name` and the
    offending index. Returns an array of the same shape with values in [0, 1).
    """
    _check_temperature(t)
    _check_finite(w, name)
    flat, shape = as_flat64(w)
    return kernels().psi(flat, 1.0 / float(t)).reshape(shape)


def psi_grad(w, t, name="W"):
    """Elementwise derivative of psi_apply w.r.t. w: (4w/t)*s*(1-s), s=sigmoid(w^2/t)."""
    _check_temperature(t)
    _check_finite(w, name)
    flat, shape = as_flat64(w)
    return kernels().psi_grad(flat, 1.0 / float(t)).reshape(shape)


def binarize(soft_mask, threshold=0.5):
    """Crisp a soft mask: entry = 1.0 iff soft entry >= threshold (ties keep)."""
    if not (0.0 < threshold < 1.0):
        raise ValueError(f"threshold must lie in (0, 1), got {threshold!r}")
    flat, shape = as_flat64(soft_mask)
    return kernels().binarize(flat, float(threshold)).reshape(shape)


def ones_count(mask):
    """Number of kept (nonzero) entries of a crisp mask or list of masks."""
    if isinstance(mask, (list, tuple)):
        return sum(ones_count(m) for m in mask)
    return int(np.count_nonzero(mask))


@dataclass(frozen=True)
class AnnealSchedule:
    """Geometric temperature decay with a floor: T(e) = max(t_min, t0 * decay^e).

    The temperature has the units of a squared weight (it divides w^2), so
    the starting value must sit at the scale of the initial weights; the
    defaults match the uniform fan-based init, where E[w^2] is about 0.03.
    """

    t0: float = 0.05
    decay: float = 0.99
    t_min: float = 2e-3

    def __post_init__(self):
        if self.t0 <= 0.0 or self.t_min <= 0.0:
            raise ValueError("temperatures must be positive")
        if not (0.0 < self.decay < 1.0):
            raise ValueError("decay must lie in (0, 1)")

    def temperature(self, epoch):
        return max(self.t_min, self.t0 * self.decay**epoch)
