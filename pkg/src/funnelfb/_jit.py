"""Numba dispatch.

Kernels are written once as plain Python over scalars and float64 arrays.
When numba is importable and ``FUNNELFB_DISABLE_NUMBA`` is unset (or ``0``),
they are compiled with ``njit``; otherwise the interpreter runs the same
source, and the chi grid search switches to a vectorised numpy path.
"""
import os

DISABLE_ENV = "FUNNELFB_DISABLE_NUMBA"

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None


def _wanted():
    return os.environ.get(DISABLE_ENV, "").strip().lower() not in {"1", "true", "yes", "on"}


USE_NUMBA = numba is not None and _wanted()

# no fastmath: exact oddness of g and bitwise determinism are tested
JIT_OPTIONS = {"nogil": True, "cache": True}


def jit(fn):
    if USE_NUMBA:
        return numba.njit(**JIT_OPTIONS)(fn)
    return fn


def backend():
    return "numba" if USE_NUMBA else "python"
