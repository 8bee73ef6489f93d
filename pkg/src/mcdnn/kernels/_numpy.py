"""Vectorized numpy versions of the layer kernels.

Same contracts as the numba kernels. Summation order differs (BLAS-backed
tensordot), so outputs agree only to rounding, not bit-for-bit.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def conv_forward(x, w, b):
    k = w.shape[2]
    win = sliding_window_view(x, (k, k), axis=(1, 2))
    out = np.tensordot(w, win, axes=([1, 2, 3], [0, 3, 4]))
    out += b[:, None, None]
    return out.astype(x.dtype, copy=False)


def conv_backward(x, w, dout, need_dx):
    k = w.shape[2]
    win = sliding_window_view(x, (k, k), axis=(1, 2))
    dw = np.tensordot(dout, win, axes=([1, 2], [1, 2])).astype(w.dtype, copy=False)
    db = dout.sum(axis=(1, 2)).astype(x.dtype, copy=False)
    if not need_dx:
        return np.zeros_like(x), dw, db
    padded = np.pad(dout, ((0, 0), (k - 1, k - 1), (k - 1, k - 1)))
    pwin = sliding_window_view(padded, (k, k), axis=(1, 2))
    flipped = w[:, :, ::-1, ::-1]
    dx = np.tensordot(flipped, pwin, axes=([0, 2, 3], [0, 3, 4]))
    return dx.astype(x.dtype, copy=False), dw, db


def maxpool_forward(x, p):
    n, h, wd = x.shape
    oh, ow = h // p, wd // p
    blocks = x.reshape(n, oh, p, ow, p).transpose(0, 1, 3, 2, 4).reshape(n, oh, ow, p * p)
    local = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, local[..., None], axis=-1)[..., 0]
    ys = np.arange(oh)[:, None] * p + local // p
    xs = np.arange(ow)[None, :] * p + local % p
    return np.ascontiguousarray(out), (ys * wd + xs).astype(np.int64)


def maxpool_backward(dout, arg, h, wd):
    n = dout.shape[0]
    dx = np.zeros((n, h * wd), dtype=dout.dtype)
    flat_arg = arg.reshape(n, -1)
    np.add.at(dx, (np.arange(n)[:, None], flat_arg), dout.reshape(n, -1))
    return dx.reshape(n, h, wd)


def fc_forward(x, w, b):
    return (w @ x + b).astype(x.dtype, copy=False)


def fc_backward(x, w, dout, need_dx):
    dw = np.outer(dout, x).astype(w.dtype, copy=False)
    dx = (dout @ w).astype(x.dtype, copy=False) if need_dx else np.zeros_like(x)
    return dx, dw, dout.copy()
