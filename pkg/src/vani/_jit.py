"""Numba switch.

Set ``VANI_DISABLE_NUMBA=1`` in the environment to run every hot kernel on
its pure-numpy path. The flag is read once at import time.
"""
import os

_FLAG = os.environ.get("VANI_DISABLE_NUMBA", "").strip().lower()

try:
    import numba as nb

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    nb = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and _FLAG not in ("1", "true", "yes", "on")


def njit(*args, **kwargs):
    """``numba.njit`` when numba is present, otherwise a no-op decorator.

    Compiled functions are only *selected* when :data:`USE_NUMBA` is true; the
    decorator itself still compiles lazily so the benchmark can compare both
    paths inside one process.
    """
    if HAVE_NUMBA:
        kwargs.setdefault("cache", True)
        return nb.njit(*args, **kwargs)

    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return lambda func: func


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"
