# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled data-movement kernels for 3x3 convolution and 2x2 max-pooling.

Results are bit-identical to the numpy versions in ``_kernels_py``.
"""

import numpy as np
cimport numpy as cnp
from libc.string cimport memcpy, memset

cnp.import_array()


def im2col3x3(const float[:, :, :, ::1] x):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    out = np.empty((n, c * 9, h * w), dtype=np.float32)
    cdef float[:, :, ::1] cols = out
    cdef Py_ssize_t i, ch, dy, dx, y, sy, lo, hi
    cdef float *dst
    cdef const float *src
    with nogil:
        for i in range(n):
            for ch in range(c):
                for dy in range(3):
                    for dx in range(3):
                        # valid output columns for this tap: 0 <= xx + dx - 1 < w
                        lo = 1 if dx == 0 else 0
                        hi = w - 1 if dx == 2 else w
                        for y in range(h):
                            dst = &cols[i, ch * 9 + dy * 3 + dx, y * w]
                            sy = y + dy - 1
                            if sy < 0 or sy >= h:
                                memset(dst, 0, w * sizeof(float))
                                continue
                            src = &x[i, ch, sy, 0]
                            if lo:
                                dst[0] = 0.0
                            if hi < w:
                                dst[w - 1] = 0.0
                            if hi > lo:
                                memcpy(dst + lo, src + lo + dx - 1, (hi - lo) * sizeof(float))
    return out


def col2im3x3(const float[:, :, ::1] cols, shape):
    cdef Py_ssize_t n = shape[0], c = shape[1], h = shape[2], w = shape[3]
    out = np.zeros((n, c, h, w), dtype=np.float32)
    cdef float[:, :, :, ::1] g = out
    cdef Py_ssize_t i, ch, dy, dx, y, xx, sy, sx, row
    # Same per-cell accumulation order as the numpy version: taps in (dy, dx) order.
    with nogil:
        for i in range(n):
            for ch in range(c):
                for dy in range(3):
                    for dx in range(3):
                        row = ch * 9 + dy * 3 + dx
                        for y in range(h):
                            sy = y + dy - 1
                            if sy < 0 or sy >= h:
                                continue
                            for xx in range(w):
                                sx = xx + dx - 1
                                if sx >= 0 and sx < w:
                                    g[i, ch, sy, sx] += cols[i, row, y * w + xx]
    return out


def maxpool2x2(const float[:, :, :, ::1] x):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1]
    cdef Py_ssize_t h2 = x.shape[2] // 2, w2 = x.shape[3] // 2
    out = np.empty((n, c, h2, w2), dtype=np.float32)
    idx = np.empty((n, c, h2, w2), dtype=np.int8)
    cdef float[:, :, :, ::1] o = out
    cdef signed char[:, :, :, ::1] ix = idx
    cdef Py_ssize_t i, ch, y, xx
    cdef float best, v
    cdef signed char arg
    with nogil:
        for i in range(n):
            for ch in range(c):
                for y in range(h2):
                    for xx in range(w2):
                        best = x[i, ch, 2 * y, 2 * xx]
                        arg = 0
                        v = x[i, ch, 2 * y, 2 * xx + 1]
                        if v > best:
                            best = v
                            arg = 1
                        v = x[i, ch, 2 * y + 1, 2 * xx]
                        if v > best:
                            best = v
                            arg = 2
                        v = x[i, ch, 2 * y + 1, 2 * xx + 1]
                        if v > best:
                            best = v
                            arg = 3
                        o[i, ch, y, xx] = best
                        ix[i, ch, y, xx] = arg
    return out, idx


def maxpool2x2_backward(const float[:, :, :, ::1] grad_out, const signed char[:, :, :, ::1] idx):
    cdef Py_ssize_t n = grad_out.shape[0], c = grad_out.shape[1]
    cdef Py_ssize_t h2 = grad_out.shape[2], w2 = grad_out.shape[3]
    out = np.zeros((n, c, 2 * h2, 2 * w2), dtype=np.float32)
    cdef float[:, :, :, ::1] g = out
    cdef Py_ssize_t i, ch, y, xx
    cdef signed char a
    with nogil:
        for i in range(n):
            for ch in range(c):
                for y in range(h2):
                    for xx in range(w2):
                        a = idx[i, ch, y, xx]
                        g[i, ch, 2 * y + (a >> 1), 2 * xx + (a & 1)] = grad_out[i, ch, y, xx]
    return out
