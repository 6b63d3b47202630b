"""Hot kernels for event warping and splatting.

A compiled Cython core is used when present; otherwise a vectorized NumPy
fallback with identical semantics is selected. Set ``EVLCALIB_FORCE_NUMPY=1``
to force the fallback (used by the benchmark and parity tests).
"""

import os

from . import _numpy_backend

_force_numpy = os.environ.get("EVLCALIB_FORCE_NUMPY", "").strip() not in ("", "0")

_compiled = None
if not _force_numpy:
    try:
        from . import _warp_cy as _compiled
    except ImportError:
        _compiled = None

_impl = _compiled if _compiled is not None else _numpy_backend

BACKEND = "cython" if _compiled is not None else "numpy"

rotate_project = _impl.rotate_project
bilinear_splat = _impl.bilinear_splat
warp_splat = _impl.warp_splat


def available_backends():
    """Name -> module for every importable backend (for benchmarks/tests)."""
    out = {"numpy": _numpy_backend}
    try:
        from . import _warp_cy

        out["cython"] = _warp_cy
    except ImportError:
        pass
    return out
