"""Hot per-pixel kernels.

Each kernel exists twice: a loop version JIT-compiled by numba
(:mod:`.loops`) and a vectorised numpy version (:mod:`.vectorized`). The
module-level names resolve to the numba versions unless ``HANDKIN_NUMBA=0``.
"""
from .. import _accel
from . import loops, vectorized

KERNELS = ("render_capsules", "splat_min", "masked_median3x3", "warp_bilinear")

BACKEND = "numba" if _accel.USE_NUMBA else "numpy"
_impl = loops if _accel.USE_NUMBA else vectorized

render_capsules = _impl.render_capsules
splat_min = _impl.splat_min
masked_median3x3 = _impl.masked_median3x3
warp_bilinear = _impl.warp_bilinear


def implementation(name: str, backend: str):
    """Explicit access to one backend, e.g. for equivalence tests and benchmarks."""
    if backend == "numba":
        if not _accel.HAVE_NUMBA:
            raise RuntimeError("numba is not installed")
        return getattr(loops, name)
    if backend == "numpy":
        return getattr(vectorized, name)
    raise ValueError(f"unknown backend {backend!r}")
