"""Kernel backend selection.

The hot inner kernels exist twice: a numba-jitted version and a pure-numpy
reference. The environment variable ``TOPOPRUNE_BACKEND`` picks one:

* ``auto`` (default) - numba when importable, numpy otherwise
* ``numba``          - force numba, fail loudly if unavailable
* ``numpy``          - force the pure-numpy path

``benchmarks/bench_backends.py`` compares the two for speed and agreement.
"""

import os

import numpy as np

from . import _kernels_numpy

_ENV_VAR = "TOPOPRUNE_BACKEND"
_kernels = None


def _load(name):
    if name == "numpy":
        return _kernels_numpy
    if name == "numba":
        from . import _kernels_numba

        return _kernels_numba
    if name == "auto":
        try:
            from . import _kernels_numba

            return _kernels_numba
        except ImportError:
            return _kernels_numpy
    raise ValueError(
        f"unknown backend {name!r} (expected 'auto', 'numba' or 'numpy')"
    )


def set_backend(name):
    """Force a backend programmatically; mainly for tests and benchmarks."""
    global _kernels
    _kernels = _load(name)
    return _kernels


def kernels():
    """Return the active kernel module, loading it on first use."""
    global _kernels
    if _kernels is None:
        _kernels = _load(os.environ.get(_ENV_VAR, "auto").lower())
    return _kernels


def backend_name():
    return kernels().BACKEND_NAME


def as_flat64(a):
    """Contiguous float64 1-D view/copy plus the original shape."""
    arr = np.ascontiguousarray(a, dtype=np.float64)
    return arr.reshape(-1), arr.shape
