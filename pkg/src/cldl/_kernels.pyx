# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled im2col / col2im kernels (same contract as _kernels_py)."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def out_size(Py_ssize_t size, Py_ssize_t k, Py_ssize_t stride):
    return (size - k) // stride + 1


def im2col(double[:, :, :, ::1] x, Py_ssize_t kh, Py_ssize_t kw, Py_ssize_t stride):
    cdef Py_ssize_t b = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t oh = (h - kh) // stride + 1
    cdef Py_ssize_t ow = (w - kw) // stride + 1
    out = np.empty((b, c * kh * kw, oh * ow), dtype=np.float64)
    cdef double[:, :, ::1] cols = out
    cdef Py_ssize_t n, ch, i, j, r, s, row
    with nogil:
        for n in range(b):
            for ch in range(c):
                for i in range(kh):
                    for j in range(kw):
                        row = (ch * kh + i) * kw + j
                        for r in range(oh):
                            for s in range(ow):
                                cols[n, row, r * ow + s] = x[n, ch, r * stride + i, s * stride + j]
    return out


def col2im(cols_in, shape, Py_ssize_t kh, Py_ssize_t kw, Py_ssize_t stride):
    cdef Py_ssize_t b = shape[0], c = shape[1], h = shape[2], w = shape[3]
    cdef Py_ssize_t oh = (h - kh) // stride + 1
    cdef Py_ssize_t ow = (w - kw) // stride + 1
    cdef double[:, :, ::1] cols = np.ascontiguousarray(cols_in, dtype=np.float64).reshape(
        b, c * kh * kw, oh * ow)
    out = np.zeros((b, c, h, w), dtype=np.float64)
    cdef double[:, :, :, ::1] x = out
    cdef Py_ssize_t n, ch, i, j, r, s, row
    with nogil:
        for n in range(b):
            for ch in range(c):
                for i in range(kh):
                    for j in range(kw):
                        row = (ch * kh + i) * kw + j
                        for r in range(oh):
                            for s in range(ow):
                                x[n, ch, r * stride + i, s * stride + j] += cols[n, row, r * ow + s]
    return out
