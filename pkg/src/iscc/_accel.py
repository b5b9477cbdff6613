"""Backend selection for the compiled kernels.

Set ``ISCC_NUMBA=0`` before import to force the pure-numpy path.
"""
from __future__ import annotations

import os

try:
    import numba
except ImportError:  # pragma: no cover - numba is a hard dependency in practice
    numba = None

HAS_NUMBA = numba is not None
USE_NUMBA = HAS_NUMBA and os.environ.get("ISCC_NUMBA", "1").strip().lower() not in {"0", "false", "no", "off"}


def njit(func):
    """``numba.njit(cache=True)`` when numba is available, identity otherwise."""
    if not HAS_NUMBA:
        return func
    return numba.njit(cache=True)(func)


def backend_name() -> str:
    return "numba" if USE_NUMBA else "numpy"
