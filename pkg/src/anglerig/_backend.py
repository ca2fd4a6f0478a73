"""Kernel backend selection.

Hot loops are written once as plain Python over numpy arrays and compiled
with numba when it is available. Setting ``ANGLERIG_DISABLE_NUMBA=1`` (before
import) routes every public kernel to its vectorized numpy twin instead.
"""
import functools
import os

_FLAG = "ANGLERIG_DISABLE_NUMBA"

try:
    import numba as _nb
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    _nb = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and os.environ.get(_FLAG, "0").lower() not in ("1", "true", "yes")


def njit(fn=None, **kwargs):
    """``numba.njit`` with project defaults, or a no-op without numba."""
    opts = {"cache": True, "nogil": True}
    opts.update(kwargs)
    if fn is None:
        return functools.partial(njit, **kwargs)
    if not HAVE_NUMBA:
        return fn
    return _nb.njit(**opts)(fn)


def backend_name():
    return "numba" if USE_NUMBA else "numpy"
