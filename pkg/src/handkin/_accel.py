"""Numba switch. ``HANDKIN_NUMBA=0`` forces the pure-numpy kernels."""
import os

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

HAVE_NUMBA = numba is not None
USE_NUMBA = HAVE_NUMBA and os.environ.get("HANDKIN_NUMBA", "1").strip().lower() not in {"0", "false", "no", "off"}


def njit(fn):
    if not HAVE_NUMBA:
        return fn
    return numba.njit(cache=True, nogil=True)(fn)


def worker_count() -> int:
    """Worker cap from ``HANDKIN_THREADS`` (default 1)."""
    try:
        n = int(os.environ.get("HANDKIN_THREADS", "1"))
    except ValueError:
        n = 1
    return max(1, n)
