"""Numba-compiled inner loops for the spatial layers.

Only the bandwidth-critical ops live here (3x3 convolution, ELU,
2x2 max pooling); everything else is plain numpy. Kernels are written
per-sample so results do not depend on batch composition.
"""

import numba as nb
import numpy as np

_JIT = {"fastmath": True, "cache": True}


@nb.njit(**_JIT)
def conv3x3_forward(xp, w, bias, out):
    # xp: (B, C, H+2, W+2) zero-padded input; w: (O, C, 3, 3); out: (B, O, H, W)
    B, O, H, W = out.shape
    C = xp.shape[1]
    for n in range(B):
        for o in range(O):
            acc = out[n, o]
            for i in range(H):
                row = acc[i]
                for j in range(W):
                    row[j] = bias[o]
                for c in range(C):
                    for di in range(3):
                        xr = xp[n, c, i + di]
                        w0 = w[o, c, di, 0]
                        w1 = w[o, c, di, 1]
                        w2 = w[o, c, di, 2]
                        for j in range(W):
                            row[j] += w0 * xr[j] + w1 * xr[j + 1] + w2 * xr[j + 2]


@nb.njit(**_JIT)
def conv3x3_backward_input(dout, w, dxp):
    # dxp: (B, C, H+2, W+2) preallocated zeros; caller crops the padding off.
    B, O, H, W = dout.shape
    C = dxp.shape[1]
    for n in range(B):
        for c in range(C):
            for o in range(O):
                for di in range(3):
                    for i in range(H):
                        dxr = dxp[n, c, i + di]
                        gr = dout[n, o, i]
                        w0 = w[o, c, di, 0]
                        w1 = w[o, c, di, 1]
                        w2 = w[o, c, di, 2]
                        for j in range(W):
                            g = gr[j]
                            dxr[j] += w0 * g
                            dxr[j + 1] += w1 * g
                            dxr[j + 2] += w2 * g


@nb.njit(**_JIT)
def conv3x3_backward_params(xp, dout, dw, db):
    B, O, H, W = dout.shape
    C = xp.shape[1]
    for o in range(O):
        s = 0.0
        for n in range(B):
            for i in range(H):
                gr = dout[n, o, i]
                for j in range(W):
                    s += gr[j]
        db[o] = s
    for o in range(O):
        for c in range(C):
            for di in range(3):
                for dj in range(3):
                    s = 0.0
                    for n in range(B):
                        for i in range(H):
                            gr = dout[n, o, i]
                            xr = xp[n, c, i + di]
                            for j in range(W):
                                s += gr[j] * xr[j + dj]
                    dw[o, c, di, dj] = s


@nb.njit(**_JIT)
def elu_forward(x, alpha, out):
    flat_x = x.ravel()
    flat_o = out.ravel()
    for i in range(flat_x.size):
        v = flat_x[i]
        if v > 0.0:
            flat_o[i] = v
        else:
            flat_o[i] = alpha * np.expm1(v)


@nb.njit(**_JIT)
def elu_backward(out, alpha, dout, dx):
    # d/dx alpha*(e^x - 1) = alpha*e^x = out + alpha on the negative branch
    flat_o = out.ravel()
    flat_g = dout.ravel()
    flat_d = dx.ravel()
    for i in range(flat_o.size):
        v = flat_o[i]
        if v > 0.0:
            flat_d[i] = flat_g[i]
        else:
            flat_d[i] = flat_g[i] * (v + alpha)


@nb.njit(**_JIT)
def maxpool2x2_forward(x, out, idx):
    # Non-overlapping 2x2 windows, stride 2; odd trailing row/col dropped.
    # idx stores the winning offset (0..3) per output cell for the backward pass.
    B, C, Ho, Wo = out.shape
    for n in range(B):
        for c in range(C):
            for i in range(Ho):
                for j in range(Wo):
                    a = x[n, c, 2 * i, 2 * j]
                    b = x[n, c, 2 * i, 2 * j + 1]
                    d = x[n, c, 2 * i + 1, 2 * j]
                    e = x[n, c, 2 * i + 1, 2 * j + 1]
                    best = a
                    k = 0
                    if b > best:
                        best = b
                        k = 1
                    if d > best:
                        best = d
                        k = 2
                    if e > best:
                        best = e
                        k = 3
                    out[n, c, i, j] = best
                    idx[n, c, i, j] = k


@nb.njit(**_JIT)
def maxpool2x2_backward(dout, idx, dx):
    B, C, Ho, Wo = dout.shape
    for n in range(B):
        for c in range(C):
            for i in range(Ho):
                for j in range(Wo):
                    k = idx[n, c, i, j]
                    di = k // 2
                    dj = k % 2
                    dx[n, c, 2 * i + di, 2 * j + dj] += dout[n, c, i, j]
