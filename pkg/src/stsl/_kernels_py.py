"""Numpy implementations of the data-movement kernels.

Used when the compiled ``_kernels`` extension is unavailable, and as the
reference the compiled kernels are checked against. Both must produce
bit-identical results: col2im accumulates the nine kernel taps of each
cell in row-major (dy, dx) order starting from +0.0.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def im2col3x3(x):
    n, c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    win = sliding_window_view(xp, (3, 3), axis=(2, 3))  # n, c, h, w, 3, 3
    cols = win.transpose(0, 1, 4, 5, 2, 3)
    return np.ascontiguousarray(cols).reshape(n, c * 9, h * w)


def col2im3x3(cols, shape):
    n, c, h, w = shape
    cols = cols.reshape(n, c, 3, 3, h, w)
    out = np.zeros((n, c, h + 2, w + 2), dtype=np.float32)
    for dy in range(3):
        for dx in range(3):
            out[:, :, dy:dy + h, dx:dx + w] += cols[:, :, dy, dx]
    return np.ascontiguousarray(out[:, :, 1:-1, 1:-1])


def _windows(x):
    n, c, h, w = x.shape
    return (
        x.reshape(n, c, h // 2, 2, w // 2, 2)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(n, c, h // 2, w // 2, 4)
    )


def maxpool2x2(x):
    win = _windows(x)
    idx = win.argmax(axis=-1).astype(np.int8)
    out = np.take_along_axis(win, idx[..., None].astype(np.intp), axis=-1)[..., 0]
    return np.ascontiguousarray(out), idx


def maxpool2x2_backward(grad_out, idx):
    n, c, h2, w2 = grad_out.shape
    win = np.zeros((n, c, h2, w2, 4), dtype=np.float32)
    np.put_along_axis(win, idx[..., None].astype(np.intp), grad_out[..., None], axis=-1)
    grad = win.reshape(n, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
    return np.ascontiguousarray(grad).reshape(n, c, 2 * h2, 2 * w2)
