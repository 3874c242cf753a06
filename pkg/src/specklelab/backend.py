"""Kernel backend selection.

The hot numeric inner loops (2-D convolution passes and bulk Gamma sampling)
exist twice: a numba ``@njit`` implementation and a pure-numpy one.  The
environment variable ``SPECKLELAB_BACKEND`` picks the lane:

* unset or ``auto`` -- numba when importable, numpy otherwise
* ``numba``         -- require numba, fail loudly if missing
* ``numpy``         -- force the pure-numpy fallback

The flag is read once, at first use.  Both lanes implement the same
documented algorithms; results agree to floating tolerance (conv: summation
order differs, Gamma: last-ulp libm differences).  See
``benchmarks/bench_backends.py`` for a timing comparison.
"""

from __future__ import annotations

import os

_kernels = None
_name = None


def _select():
    global _kernels, _name
    choice = os.environ.get("SPECKLELAB_BACKEND", "auto").strip().lower()
    if choice not in ("auto", "numba", "numpy"):
        raise ValueError(
            f"SPECKLELAB_BACKEND must be 'auto', 'numba' or 'numpy', got {choice!r}"
        )
    if choice in ("auto", "numba"):
        try:
            from . import _kernels_numba as mod
            _kernels, _name = mod, "numba"
            return
        except ImportError:
            if choice == "numba":
                raise
    from . import _kernels_numpy as mod
    _kernels, _name = mod, "numpy"


def kernels():
    """Active kernel module (conv2d_fwd, conv2d_grad_kernel, gamma_field)."""
    if _kernels is None:
        _select()
    return _kernels


def backend_name() -> str:
    """Name of the active lane: 'numba' or 'numpy'."""
    if _kernels is None:
        _select()
    return _name
