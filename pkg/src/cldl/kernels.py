"""Selects the im2col/col2im backend at import time.

The compiled Cython module is preferred; set ``CLDL_PURE_PYTHON=1`` to force
the numpy fallback. ``BACKEND`` reports which one is active.
"""

import os

import numpy as np

from . import _kernels_py

if os.environ.get("CLDL_PURE_PYTHON", "") not in ("", "0"):
    _impl = _kernels_py
else:
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]
    except ImportError:
        _impl = _kernels_py

BACKEND = "cython" if _impl is not _kernels_py else "python"
out_size = _kernels_py.out_size


def im2col(x, kh, kw, stride=1):
    return _impl.im2col(np.ascontiguousarray(x, dtype=np.float64), kh, kw, stride)


def col2im(cols, shape, kh, kw, stride=1):
    return _impl.col2im(cols, tuple(shape), kh, kw, stride)
