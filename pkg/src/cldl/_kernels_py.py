"""Pure-numpy im2col / col2im kernels.

Used when the compiled extension is unavailable or disabled with
``CLDL_PURE_PYTHON=1``. Must stay bit-compatible with ``_kernels.pyx``.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def out_size(size, k, stride):
    return (size - k) // stride + 1


def im2col(x, kh, kw, stride):
    """Unfold (B, C, H, W) into (B, C*kh*kw, OH*OW) patch columns."""
    b, c, h, w = x.shape
    oh, ow = out_size(h, kh, stride), out_size(w, kw, stride)
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    # win: (B, C, OH, OW, kh, kw) -> (B, C, kh, kw, OH, OW)
    cols = win.transpose(0, 1, 4, 5, 2, 3).reshape(b, c * kh * kw, oh * ow)
    return np.ascontiguousarray(cols, dtype=np.float64)


def col2im(cols, shape, kh, kw, stride):
    """Scatter-add patch columns back into a (B, C, H, W) array."""
    b, c, h, w = shape
    oh, ow = out_size(h, kh, stride), out_size(w, kw, stride)
    cols = cols.reshape(b, c, kh, kw, oh, ow)
    out = np.zeros(shape, dtype=np.float64)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += cols[:, :, i, j]
    return out
