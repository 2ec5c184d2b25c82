"""Kernel backend selection.

Hot loops are written twice: a numba ``@njit`` version and a pure
numpy/scipy version.  ``PCGSSL_BACKEND=numpy`` forces the fallback; the
default is numba when it imports, numpy otherwise.
"""
import os
import warnings

_requested = os.environ.get("PCGSSL_BACKEND", "numba").strip().lower()
if _requested not in ("numba", "numpy"):
    warnings.warn(f"unknown PCGSSL_BACKEND={_requested!r}, using numpy")
    _requested = "numpy"

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and _requested == "numba"
BACKEND = "numba" if USE_NUMBA else "numpy"


def njit(*args, **kwargs):
    """``numba.njit`` with on-disk caching, or a no-op decorator without numba."""
    if not HAVE_NUMBA:
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda fn: fn
    kwargs.setdefault("cache", True)
    return numba.njit(*args, **kwargs)
