"""Backend selection for the hot kernels.

Set ``LINEAGEMIX_DISABLE_NUMBA=1`` to force the vectorized numpy path.  The
numba path is used whenever numba imports cleanly and the flag is unset.
"""

import os

_FLAG = "LINEAGEMIX_DISABLE_NUMBA"

try:
    import numba as _numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    _numba = None


def numba_available():
    return _numba is not None


def use_numba():
    """True when kernels should dispatch to their numba versions."""
    if _numba is None:
        return False
    return os.environ.get(_FLAG, "").strip().lower() not in ("1", "true", "yes", "on")


def njit(*args, **kwargs):
    """``numba.njit`` when numba exists, otherwise a no-op decorator."""
    if _numba is None:
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda f: f
    return _numba.njit(*args, **kwargs)


def backend_name():
    return "numba" if use_numba() else "numpy"
