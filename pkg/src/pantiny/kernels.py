"""Compiled inner loops: depthwise convolution, im2col and channel layer norm.

Loop order is fixed, so every reduction is deterministic run to run.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def dw_forward(xp, w, stride, out):
    # xp: (B, C, Hp, Wp) padded input; w: (C, kh, kw); out: (B, C, Ho, Wo), pre-zeroed
    B, C, Ho, Wo = out.shape
    kh, kw = w.shape[1], w.shape[2]
    for b in range(B):
        for c in range(C):
            for i in range(kh):
                for j in range(kw):
                    wv = w[c, i, j]
                    for y in range(Ho):
                        yy = y * stride + i
                        for x in range(Wo):
                            out[b, c, y, x] += wv * xp[b, c, yy, x * stride + j]


@njit(cache=True)
def dw_backward_input(g, w, stride, gxp):
    B, C, Ho, Wo = g.shape
    kh, kw = w.shape[1], w.shape[2]
    for b in range(B):
        for c in range(C):
            for i in range(kh):
                for j in range(kw):
                    wv = w[c, i, j]
                    for y in range(Ho):
                        yy = y * stride + i
                        for x in range(Wo):
                            gxp[b, c, yy, x * stride + j] += wv * g[b, c, y, x]


@njit(cache=True)
def dw_backward_weight(g, xp, stride, gw):
    # accumulates in float64 regardless of the input precision
    B, C, Ho, Wo = g.shape
    kh, kw = gw.shape[1], gw.shape[2]
    for c in range(C):
        for i in range(kh):
            for j in range(kw):
                acc = 0.0
                for b in range(B):
                    for y in range(Ho):
                        yy = y * stride + i
                        for x in range(Wo):
                            acc += g[b, c, y, x] * xp[b, c, yy, x * stride + j]
                gw[c, i, j] = acc


@njit(cache=True)
def im2col(xp, kh, kw, stride, cols):
    # cols: (B, C*kh*kw, Ho*Wo) with row index (c, i, j)
    B, C = xp.shape[0], xp.shape[1]
    Ho = (xp.shape[2] - kh) // stride + 1
    Wo = (xp.shape[3] - kw) // stride + 1
    for b in range(B):
        for c in range(C):
            for i in range(kh):
                for j in range(kw):
                    r = (c * kh + i) * kw + j
                    for y in range(Ho):
                        yy = y * stride + i
                        base = y * Wo
                        for x in range(Wo):
                            cols[b, r, base + x] = xp[b, c, yy, x * stride + j]


@njit(cache=True)
def col2im(cols, kh, kw, stride, gxp):
    B, C = gxp.shape[0], gxp.shape[1]
    Ho = (gxp.shape[2] - kh) // stride + 1
    Wo = (gxp.shape[3] - kw) // stride + 1
    for b in range(B):
        for c in range(C):
            for i in range(kh):
                for j in range(kw):
                    r = (c * kh + i) * kw + j
                    for y in range(Ho):
                        yy = y * stride + i
                        base = y * Wo
                        for x in range(Wo):
                            gxp[b, c, yy, x * stride + j] += cols[b, r, base + x]


# Stride-1 variants walk whole rows so the inner loop vectorises.


@njit(cache=True)
def dw_forward_s1(xp, w, out):
    B, C, Ho, Wo = out.shape
    kh, kw = w.shape[1], w.shape[2]
    for b in range(B):
        for c in range(C):
            for y in range(Ho):
                row = out[b, c, y]
                for i in range(kh):
                    src = xp[b, c, y + i]
                    for j in range(kw):
                        wv = w[c, i, j]
                        for x in range(Wo):
                            row[x] += wv * src[x + j]


@njit(cache=True)
def dw_backward_input_s1(g, w, gxp):
    B, C, Ho, Wo = g.shape
    kh, kw = w.shape[1], w.shape[2]
    for b in range(B):
        for c in range(C):
            for y in range(Ho):
                grow = g[b, c, y]
                for i in range(kh):
                    dst = gxp[b, c, y + i]
                    for j in range(kw):
                        wv = w[c, i, j]
                        for x in range(Wo):
                            dst[x + j] += wv * grow[x]


@njit(cache=True, fastmath=True)
def dw_backward_weight_s1(g, xp, gw):
    # row sums are reassociated for SIMD, but the compiled order is fixed, so results are repeatable
    B, C, Ho, Wo = g.shape
    kh, kw = gw.shape[1], gw.shape[2]
    for c in range(C):
        for i in range(kh):
            for j in range(kw):
                acc = 0.0
                for b in range(B):
                    for y in range(Ho):
                        grow = g[b, c, y]
                        src = xp[b, c, y + i]
                        s = 0.0
                        for x in range(Wo):
                            s += np.float64(grow[x]) * np.float64(src[x + j])
                        acc += s
                gw[c, i, j] = acc


def depthwise_forward(xp: np.ndarray, w: np.ndarray, stride: int, out: np.ndarray) -> None:
    if stride == 1:
        dw_forward_s1(xp, w, out)
    else:
        dw_forward(xp, w, stride, out)


def depthwise_input_grad(g: np.ndarray, w: np.ndarray, stride: int, gxp: np.ndarray) -> None:
    if stride == 1:
        dw_backward_input_s1(g, w, gxp)
    else:
        dw_backward_input(g, w, stride, gxp)


def depthwise_weight_grad(g: np.ndarray, xp: np.ndarray, stride: int, kh: int, kw: int) -> np.ndarray:
    gw = np.zeros((g.shape[1], kh, kw), dtype=np.float64)
    if stride == 1:
        dw_backward_weight_s1(g, xp, gw)
    else:
        dw_backward_weight(g, xp, stride, gw)
    return gw.astype(g.dtype)


# -- fused channel layer norm ------------------------------------------------------


@njit(cache=True)
def layer_norm_forward(x, gamma, beta, eps, out, xhat, rstd):
    # x, out, xhat: (B, C, P); rstd: (B, P); statistics accumulate in float64
    B, C, P = x.shape
    mu = np.empty(P)
    var = np.empty(P)
    for b in range(B):
        mu[:] = 0.0
        var[:] = 0.0
        for c in range(C):
            row = x[b, c]
            for p in range(P):
                mu[p] += row[p]
        for p in range(P):
            mu[p] /= C
        for c in range(C):
            row = x[b, c]
            for p in range(P):
                d = row[p] - mu[p]
                var[p] += d * d
        for p in range(P):
            rstd[b, p] = 1.0 / np.sqrt(var[p] / C + eps)
        for c in range(C):
            row = x[b, c]
            g, bt = gamma[c], beta[c]
            for p in range(P):
                h = (row[p] - mu[p]) * rstd[b, p]
                xhat[b, c, p] = h
                out[b, c, p] = h * g + bt


@njit(cache=True)
def layer_norm_backward(g, xhat, rstd, gamma, gx, ggamma, gbeta):
    B, C, P = g.shape
    s1 = np.empty(P)
    s2 = np.empty(P)
    for b in range(B):
        s1[:] = 0.0
        s2[:] = 0.0
        for c in range(C):
            grow, hrow = g[b, c], xhat[b, c]
            gm = gamma[c]
            a1 = 0.0
            a2 = 0.0
            for p in range(P):
                gh = grow[p] * gm
                s1[p] += gh
                s2[p] += gh * hrow[p]
                a1 += grow[p] * hrow[p]
                a2 += grow[p]
            ggamma[c] += a1
            gbeta[c] += a2
        for p in range(P):
            s1[p] /= C
            s2[p] /= C
        for c in range(C):
            grow, hrow = g[b, c], xhat[b, c]
            gm = gamma[c]
            for p in range(P):
                gx[b, c, p] = rstd[b, p] * (grow[p] * gm - s1[p] - hrow[p] * s2[p])

