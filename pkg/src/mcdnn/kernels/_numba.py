"""Loop kernels compiled with numba.

Every output element accumulates its terms in one fixed order (bias first,
then input map, kernel row, kernel column), so results are reproducible
bit-for-bit for a given dtype.
"""
import numpy as np
from numba import njit

_opts = dict(cache=True, nogil=True)


@njit(**_opts)
def conv_forward(x, w, b):
    n_in, h, wd = x.shape
    n_out, _, k, _ = w.shape
    oh = h - k + 1
    ow = wd - k + 1
    out = np.empty((n_out, oh, ow), dtype=x.dtype)
    for m in range(n_out):
        bm = b[m]
        for y in range(oh):
            for xx in range(ow):
                out[m, y, xx] = bm
        for c in range(n_in):
            for i in range(k):
                for j in range(k):
                    wv = w[m, c, i, j]
                    for y in range(oh):
                        for xx in range(ow):
                            out[m, y, xx] += x[c, y + i, xx + j] * wv
    return out


@njit(**_opts)
def conv_backward(x, w, dout, need_dx):
    n_in, h, wd = x.shape
    n_out, _, k, _ = w.shape
    oh, ow = dout.shape[1], dout.shape[2]
    dw = np.zeros_like(w)
    db = np.zeros(n_out, dtype=x.dtype)
    dx = np.zeros_like(x)
    for m in range(n_out):
        s = db.dtype.type(0)
        for y in range(oh):
            for xx in range(ow):
                s += dout[m, y, xx]
        db[m] = s
        for c in range(n_in):
            for i in range(k):
                for j in range(k):
                    acc = dw.dtype.type(0)
                    for y in range(oh):
                        for xx in range(ow):
                            acc += dout[m, y, xx] * x[c, y + i, xx + j]
                    dw[m, c, i, j] = acc
                    if need_dx:
                        wv = w[m, c, i, j]
                        for y in range(oh):
                            for xx in range(ow):
                                dx[c, y + i, xx + j] += dout[m, y, xx] * wv
    return dx, dw, db


@njit(**_opts)
def maxpool_forward(x, p):
    n, h, wd = x.shape
    oh = h // p
    ow = wd // p
    out = np.empty((n, oh, ow), dtype=x.dtype)
    arg = np.empty((n, oh, ow), dtype=np.int64)
    for m in range(n):
        for y in range(oh):
            for xx in range(ow):
                best = x[m, y * p, xx * p]
                bi = (y * p) * wd + xx * p
                for i in range(p):
                    for j in range(p):
                        v = x[m, y * p + i, xx * p + j]
                        if v > best:
                            best = v
                            bi = (y * p + i) * wd + xx * p + j
                out[m, y, xx] = best
                arg[m, y, xx] = bi
    return out, arg


@njit(**_opts)
def maxpool_backward(dout, arg, h, wd):
    n, oh, ow = dout.shape
    dx = np.zeros((n, h, wd), dtype=dout.dtype)
    for m in range(n):
        for y in range(oh):
            for xx in range(ow):
                idx = arg[m, y, xx]
                dx[m, idx // wd, idx % wd] += dout[m, y, xx]
    return dx


@njit(**_opts)
def fc_forward(x, w, b):
    n_out, n_in = w.shape
    out = np.empty(n_out, dtype=x.dtype)
    for o in range(n_out):
        s = b[o]
        for i in range(n_in):
            s += w[o, i] * x[i]
        out[o] = s
    return out


@njit(**_opts)
def fc_backward(x, w, dout, need_dx):
    n_out, n_in = w.shape
    dw = np.empty_like(w)
    dx = np.zeros(n_in, dtype=x.dtype)
    for o in range(n_out):
        g = dout[o]
        for i in range(n_in):
            dw[o, i] = g * x[i]
    if need_dx:
        for o in range(n_out):
            g = dout[o]
            for i in range(n_in):
                dx[i] += w[o, i] * g
    return dx, dw, dout.copy()
