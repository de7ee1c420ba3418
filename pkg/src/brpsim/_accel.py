"""Numba switch shared by the hot kernels.

Set ``BRPSIM_DISABLE_NUMBA=1`` to run every kernel on its pure-numpy path.
The flag is read once at import time.
"""
import os

_DISABLED = os.environ.get("BRPSIM_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes")

try:
    from numba import njit as _njit
    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAS_NUMBA = False

USE_NUMBA = HAS_NUMBA and not _DISABLED


def njit(*args, **kwargs):
    """``numba.njit`` that never fails: returns the plain function when numba is off."""
    if HAS_NUMBA:
        return _njit(*args, cache=True, **kwargs)

    if len(args) == 1 and callable(args[0]):
        return args[0]
    return lambda f: f
