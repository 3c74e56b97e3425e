"""JIT switch shared by every hot kernel.

Set ``GLMD_DISABLE_NUMBA=1`` to force the pure-numpy code paths; they are also
used automatically when numba is not importable.
"""

import os

_DISABLED = os.environ.get("GLMD_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes")

try:
    if _DISABLED:
        raise ImportError
    import numba as _numba
except ImportError:
    _numba = None

USE_NUMBA = _numba is not None


def njit(fn):
    """``numba.njit(cache=True)`` when acceleration is on, identity otherwise.

    The undecorated function stays a valid (slow) Python loop implementation,
    which the tests exercise on small inputs.
    """
    if _numba is None:
        return fn
    return _numba.njit(cache=True)(fn)


def backend_name():
    return "numba" if USE_NUMBA else "numpy"
