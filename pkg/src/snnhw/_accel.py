"""Numba switch for the hot kernels.

Set ``SNNHW_DISABLE_NUMBA=1`` to force the pure-numpy path. Kernels that have
both forms are dispatched through :func:`pick`.
"""
import os

_FALSY = {"", "0", "false", "no", "off"}

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

HAVE_NUMBA = numba is not None
USE_NUMBA = HAVE_NUMBA and os.environ.get("SNNHW_DISABLE_NUMBA", "0").strip().lower() in _FALSY


def njit(fn):
    """Compile ``fn`` with numba when available, otherwise return it unchanged."""
    if not HAVE_NUMBA:
        return fn
    return numba.njit(cache=True, nogil=True)(fn)


def pick(numba_impl, numpy_impl):
    return numba_impl if USE_NUMBA else numpy_impl


def backend_name():
    return "numba" if USE_NUMBA else "numpy"
