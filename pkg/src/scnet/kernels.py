"""Kernel backend selection.

The compiled extension is used when importable; set ``SCN_PURE_PYTHON=1`` to
force the numpy fallback. ``BACKEND`` names the active implementation.
"""

import os

import numpy as np

from . import _kernels_py

if os.environ.get("SCN_PURE_PYTHON", "") not in ("", "0"):
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _ckernels as _impl
        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _kernels_py
        BACKEND = "python"


def warp_bilinear(images, src_rows, src_cols):
    return _impl.warp_bilinear(np.ascontiguousarray(images),
                               np.ascontiguousarray(src_rows, dtype=np.float64),
                               np.ascontiguousarray(src_cols, dtype=np.float64))


def rasterize(xy, size):
    return _impl.rasterize(np.ascontiguousarray(xy, dtype=np.float64), int(size))


def im2col(x, kh, kw, stride=1):
    return _impl.im2col(np.ascontiguousarray(x), kh, kw, stride)


def col2im(cols, c, h, w, kh, kw, stride=1):
    return _impl.col2im(np.ascontiguousarray(cols), c, h, w, kh, kw, stride)


def backends():
    """Return ``{name: module}`` for every importable backend."""
    found = {"python": _kernels_py}
    try:
        from . import _ckernels
        found["cython"] = _ckernels
    except ImportError:
        pass
    return found
