"""Kernel compilation switch.

Hot kernels are plain numpy functions decorated with :func:`jit`.  When
numba is importable and ``RCLUB_JIT`` is not set to a false value they are
compiled with ``numba.njit``; otherwise the decorator is the identity and the
same code runs as ordinary numpy.
"""

import os

_FALSE = {"0", "false", "no", "off"}

USE_NUMBA = os.environ.get("RCLUB_JIT", "1").strip().lower() not in _FALSE

if USE_NUMBA:
    try:
        import numba
    except ImportError:  # pragma: no cover - numba is a declared dependency
        USE_NUMBA = False


def jit(func=None, **kwargs):
    """``numba.njit(cache=True)`` when enabled, identity otherwise."""
    if func is None:
        return lambda f: jit(f, **kwargs)
    if not USE_NUMBA:
        return func
    kwargs.setdefault("cache", True)
    return numba.njit(**kwargs)(func)


def backend_name():
    return "numba" if USE_NUMBA else "numpy"
