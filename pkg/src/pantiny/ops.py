"""Differentiable image operators built on :mod:`pantiny.tensor`."""

from __future__ import annotations

import functools
import math

import numpy as np
from scipy.special import erf

from . import kernels
from .tensor import Tensor, as_tensor, make_result


class ShapeError(ValueError):
    """Raised when operand shapes violate an operator contract."""


def _result_dtype(*arrays):
    return np.result_type(*[a.dtype for a in arrays if a is not None])


# -- convolution -------------------------------------------------------------------


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Tensor | None = None,
    stride: int = 1,
    padding: int | tuple = 0,
    groups: int = 1,
) -> Tensor:
    """2-D cross-correlation over ``(B, C, H, W)`` input with zero padding.

    ``padding`` may be an int or a ``(ph, pw)`` pair. Depthwise convolutions
    (``groups == C == Cout``) run through a compiled kernel, dense stride-1
    convolutions through shifted GEMMs on a flattened padded layout, and
    everything else through im2col.
    """
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv2d expects 4-D input and weight, got {x.shape} and {weight.shape}")
    B, C, H, W = x.shape
    O, Cg, kh, kw = weight.shape
    ph, pw = (padding, padding) if isinstance(padding, int) else padding
    if groups < 1 or C % groups or O % groups:
        raise ShapeError(f"channels in={C} out={O} not divisible by groups={groups}")
    if Cg != C // groups:
        raise ShapeError(f"weight expects {Cg} channels per group, input provides {C // groups} (axis 1)")
    if bias is not None and bias.shape != (O,):
        raise ShapeError(f"bias shape {bias.shape} does not match output channels {O}")
    Ho = (H + 2 * ph - kh) // stride + 1
    Wo = (W + 2 * pw - kw) // stride + 1
    if Ho < 1 or Wo < 1:
        raise ShapeError(f"kernel {kh}x{kw} with padding {ph},{pw} does not fit input {H}x{W} (axes 2,3)")

    dtype = _result_dtype(x.data, weight.data, None if bias is None else bias.data)
    xd = x.data.astype(dtype, copy=False)
    wd = weight.data.astype(dtype, copy=False)
    geom = (B, C, H, W, O, kh, kw, ph, pw, Ho, Wo)

    bd = None if bias is None else bias.data.astype(dtype, copy=False)
    biased = False
    if groups == C and O == C and Cg == 1:
        out, grads_fn = _depthwise(xd, wd, bd, stride, geom)
        biased = True
    elif groups == 1 and stride == 1 and kh == kw == 1 and not (ph or pw):
        out, grads_fn = _pointwise(xd, wd, geom)
    elif groups == 1 and stride == 1 and ph < kh and pw < kw:
        out, grads_fn = _dense_shifted(xd, wd, geom)
    else:
        out, grads_fn = _grouped_im2col(xd, wd, stride, groups, geom)
    if bd is not None and not biased:
        out += bd.reshape(1, O, 1, 1)

    parents = (x, weight) if bias is None else (x, weight, bias)

    def bw(g):
        g = np.ascontiguousarray(g)
        gx, gw = grads_fn(g, x.requires_grad, weight.requires_grad)
        grads = [gx, gw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)) if bias.requires_grad else None)
        return tuple(grads)

    return make_result(out, parents, bw)


# column-block budget (elements) for the chunked dense convolution
_CHUNK_ELEMS = 1 << 19


def _pad(xd, ph, pw):
    return np.pad(xd, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if (ph or pw) else np.ascontiguousarray(xd)


def _depthwise(xd, wd, bd, stride, geom):
    # returns the output with the bias already added
    B, C, H, W, O, kh, kw, ph, pw, Ho, Wo = geom
    w3 = np.ascontiguousarray(wd[:, 0])
    xp = _pad(xd, ph, pw)
    out = np.zeros((B, C, Ho, Wo), dtype=xd.dtype)
    kernels.depthwise_forward(xp, w3, stride, out)
    if bd is not None:
        out += bd.astype(xd.dtype, copy=False).reshape(1, C, 1, 1)

    def grads(g, need_x, need_w):
        gx = gw = None
        if need_x:
            gxp = np.zeros(xp.shape, dtype=np.result_type(g.dtype, xd.dtype))
            kernels.depthwise_input_grad(g.astype(gxp.dtype, copy=False), w3.astype(gxp.dtype, copy=False), stride, gxp)
            gx = gxp[:, :, ph:ph + H, pw:pw + W] if (ph or pw) else gxp
        if need_w:
            gw = kernels.depthwise_weight_grad(g, xp.astype(g.dtype, copy=False), stride, kh, kw)[:, None]
        return gx, gw

    return out, grads


def _pointwise(xd, wd, geom):
    B, C, H, W, O = geom[:5]
    x3 = np.ascontiguousarray(xd).reshape(B, C, H * W)
    w2 = wd.reshape(O, C)
    out = np.empty((B, O, H * W), dtype=xd.dtype)
    for b in range(B):
        np.matmul(w2, x3[b], out=out[b])

    def grads(g, need_x, need_w):
        g3 = g.reshape(B, O, H * W)
        gx = gw = None
        if need_x:
            gx = np.empty((B, C, H * W), dtype=np.result_type(g.dtype, wd.dtype))
            for b in range(B):
                np.matmul(w2.T, g3[b], out=gx[b])
            gx = gx.reshape(B, C, H, W)
        if need_w:
            gw = np.zeros((O, C), dtype=np.result_type(g.dtype, xd.dtype))
            for b in range(B):
                gw += g3[b] @ x3[b].T
            gw = gw.reshape(O, C, 1, 1)
        return gx, gw

    return out.reshape(B, O, H, W), grads


def _flat_layout(a, ph, pw, kh, kw):
    # (B, C, H, W) -> channels-first flat padded layout (C, B*Hp*Wp + tail). Output pixel p of a
    # kh x kw correlation reads input p + i*Wp + j, so every tap is a contiguous window.
    B, C, H, W = a.shape
    Hp, Wp = H + 2 * ph, W + 2 * pw
    N = B * Hp * Wp
    flat = np.zeros((C, N + (kh - 1) * Wp + (kw - 1)), dtype=a.dtype)
    flat[:, :N].reshape(C, B, Hp, Wp)[:, :, ph:ph + H, pw:pw + W] = a.transpose(1, 0, 2, 3)
    return flat, N, Hp, Wp


def _chunks(flat, N, Wp, kh, kw):
    # yields (start, end, cols) with taps stacked into one (kh*kw*C, S) block per chunk of
    # S pixels, so each chunk is a single fat GEMM that stays cache resident
    C = flat.shape[0]
    offsets = [i * Wp + j for i in range(kh) for j in range(kw)]
    S = max(256, min(N, _CHUNK_ELEMS // (len(offsets) * C)))
    cols = np.empty((len(offsets) * C, S), dtype=flat.dtype)
    for s in range(0, N, S):
        e = min(N, s + S)
        for t, off in enumerate(offsets):
            cols[t * C:(t + 1) * C, :e - s] = flat[:, s + off:e + off]
        yield s, e, cols[:, :e - s]


def _flat_correlate(a, w_taps, ph, pw, kh, kw, Ho, Wo):
    flat, N, Hp, Wp = _flat_layout(a, ph, pw, kh, kw)
    O = w_taps.shape[0]
    acc = np.empty((O, N), dtype=np.result_type(a.dtype, w_taps.dtype))
    for s, e, cols in _chunks(flat, N, Wp, kh, kw):
        np.matmul(w_taps, cols, out=acc[:, s:e])
    B = a.shape[0]
    return np.ascontiguousarray(acc.reshape(O, B, Hp, Wp)[:, :, :Ho, :Wo].transpose(1, 0, 2, 3))


def _dense_shifted(xd, wd, geom):
    B, C, H, W, O, kh, kw, ph, pw, Ho, Wo = geom
    w_taps = np.ascontiguousarray(wd.transpose(0, 2, 3, 1)).reshape(O, kh * kw * C)
    out = _flat_correlate(xd, w_taps, ph, pw, kh, kw, Ho, Wo)

    def grads(g, need_x, need_w):
        gdt = np.result_type(g.dtype, xd.dtype)
        gx = gw = None
        if need_w:
            flat, N, Hp, Wp = _flat_layout(xd, ph, pw, kh, kw)
            gf = np.zeros((O, N), dtype=gdt)
            gf.reshape(O, B, Hp, Wp)[:, :, :Ho, :Wo] = g.transpose(1, 0, 2, 3)
            gw = np.zeros((O, kh * kw * C), dtype=gdt)
            for s, e, cols in _chunks(flat, N, Wp, kh, kw):
                gw += gf[:, s:e] @ cols.T
            gw = np.ascontiguousarray(gw.reshape(O, kh, kw, C).transpose(0, 3, 1, 2))
        if need_x:
            # input grad = full correlation of g with the flipped, transposed kernel
            w_flip = np.ascontiguousarray(wd[:, :, ::-1, ::-1].transpose(1, 2, 3, 0)).reshape(C, kh * kw * O)
            gx = _flat_correlate(g.astype(gdt, copy=False), w_flip.astype(gdt, copy=False),
                                 kh - 1 - ph, kw - 1 - pw, kh, kw, H, W)
        return gx, gw

    return out, grads


def _grouped_im2col(xd, wd, stride, groups, geom):
    B, C, H, W, O, kh, kw, ph, pw, Ho, Wo = geom
    Cg, Og = C // groups, O // groups
    xp = _pad(xd, ph, pw)
    cols_by_group = []
    outs = []
    for gi in range(groups):
        cols = np.empty((B, Cg * kh * kw, Ho * Wo), dtype=xd.dtype)
        kernels.im2col(np.ascontiguousarray(xp[:, gi * Cg:(gi + 1) * Cg]), kh, kw, stride, cols)
        w2 = wd[gi * Og:(gi + 1) * Og].reshape(Og, Cg * kh * kw)
        outs.append(np.matmul(w2, cols))
        cols_by_group.append(cols)
    out = np.concatenate(outs, axis=1).reshape(B, O, Ho, Wo)

    def grads(g, need_x, need_w):
        g3 = g.reshape(B, O, Ho * Wo)
        gws, gxps = [], []
        for gi in range(groups):
            gg = g3[:, gi * Og:(gi + 1) * Og]
            cols = cols_by_group[gi]
            if need_w:
                gw2 = np.matmul(gg, cols.transpose(0, 2, 1)).sum(axis=0)
                gws.append(gw2.reshape(Og, Cg, kh, kw))
            if need_x:
                w2 = wd[gi * Og:(gi + 1) * Og].reshape(Og, Cg * kh * kw)
                gcols = np.ascontiguousarray(np.matmul(w2.T, gg))
                gxp = np.zeros((B, Cg, H + 2 * ph, W + 2 * pw), dtype=gcols.dtype)
                kernels.col2im(gcols, kh, kw, stride, gxp)
                gxps.append(gxp[:, :, ph:ph + H, pw:pw + W] if (ph or pw) else gxp)
        gw = np.concatenate(gws, axis=0) if need_w else None
        gx = np.concatenate(gxps, axis=1) if need_x else None
        return gx, gw

    return out, grads


def dwconv(x: Tensor, weight: Tensor, bias: Tensor | None = None, k: int = 3) -> Tensor:
    """Depthwise ``k x k`` convolution with 'same' padding."""
    return conv2d(x, weight, bias, stride=1, padding=k // 2, groups=x.shape[1])


# -- normalisation and activations -----------------------------------------------------


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise over the channel axis independently at every ``(b, h, w)``."""
    if x.ndim != 4 or x.shape[1] == 0:
        raise ShapeError(f"layer_norm expects (B, C, H, W) with C > 0, got {x.shape}")
    B, C, H, W = x.shape
    if gamma.shape != (C,) or beta.shape != (C,):
        raise ShapeError(f"gamma/beta must have shape ({C},), got {gamma.shape}, {beta.shape}")
    dtype = _result_dtype(x.data, gamma.data, beta.data)
    x3 = np.ascontiguousarray(x.data, dtype=dtype).reshape(B, C, H * W)
    gd = gamma.data.astype(dtype, copy=False)
    out = np.empty_like(x3)
    xhat = np.empty_like(x3)
    rstd = np.empty((B, H * W), dtype=np.float64)
    kernels.layer_norm_forward(x3, gd, beta.data.astype(dtype, copy=False), float(eps), out, xhat, rstd)

    def bw(g):
        g3 = np.ascontiguousarray(g, dtype=dtype).reshape(B, C, H * W)
        gx = np.empty_like(g3)
        ggamma = np.zeros(C, dtype=np.float64)
        gbeta = np.zeros(C, dtype=np.float64)
        kernels.layer_norm_backward(g3, xhat, rstd, gd, gx, ggamma, gbeta)
        return (
            gx.reshape(B, C, H, W) if x.requires_grad else None,
            ggamma.astype(dtype) if gamma.requires_grad else None,
            gbeta.astype(dtype) if beta.requires_grad else None,
        )

    return make_result(out.reshape(B, C, H, W), (x, gamma, beta), bw)


_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(x: Tensor) -> Tensor:
    """Exact (erf) GELU."""
    xd = x.data
    cdf = erf(xd * _INV_SQRT2)
    cdf += 1.0
    cdf *= 0.5

    def bw(g):
        pdf = np.exp(-0.5 * xd * xd)
        pdf *= xd * _INV_SQRT2PI
        pdf += cdf
        return (g * pdf,)

    return make_result(xd * cdf, (x,), bw)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Softmax with max subtraction."""
    xd = x.data
    e = np.exp(xd - xd.max(axis=axis, keepdims=True))
    s = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return make_result(s, (x,), bw)


def softmax_lastdim(x: Tensor) -> Tensor:
    return softmax(x, axis=-1)


def l2_normalize(x: Tensor, axis: int = -1, eps: float = 1e-12) -> Tensor:
    """Divide each vector along ``axis`` by ``max(||v||_2, eps)``."""
    xd = x.data
    norm = np.sqrt((xd * xd).sum(axis=axis, keepdims=True))
    denom = np.maximum(norm, eps)
    y = xd / denom
    active = norm > eps

    def bw(g):
        proj = (g * y).sum(axis=axis, keepdims=True)
        return ((g - np.where(active, y * proj, 0.0)) / denom,)

    return make_result(y, (x,), bw)


def l2_normalize_rows(x: Tensor) -> Tensor:
    return l2_normalize(x, axis=-1)


# -- resampling ---------------------------------------------------------------------


def _cubic(t: np.ndarray, a: float = -0.5) -> np.ndarray:
    t = np.abs(t)
    t2, t3 = t * t, t * t * t
    near = (a + 2.0) * t3 - (a + 3.0) * t2 + 1.0
    far = a * t3 - 5.0 * a * t2 + 8.0 * a * t - 4.0 * a
    return np.where(t <= 1.0, near, np.where(t < 2.0, far, 0.0))


@functools.lru_cache(maxsize=64)
def interp_taps(n_in: int, scale: int, mode: str):
    """Tap indices, weights and the dense matrix for 1-D resampling by ``scale``.

    Pixel centres are aligned (half-pixel convention); out-of-range taps are
    clamped to the border. Returns ``(idx, weights, ref, matrix)`` where ``ref``
    is the column of the dominant tap in each row.
    """
    n_out = n_in * scale
    dst = np.arange(n_out, dtype=np.float64)
    src = (dst + 0.5) / scale - 0.5
    if mode == "bilinear":
        src = np.maximum(src, 0.0)
        i0 = np.floor(src).astype(np.int64)
        t = src - i0
        idx = np.stack([i0, i0 + 1], axis=1)
        w = np.stack([1.0 - t, t], axis=1)
    elif mode == "bicubic":
        i0 = np.floor(src).astype(np.int64)
        t = src - i0
        idx = np.stack([i0 - 1, i0, i0 + 1, i0 + 2], axis=1)
        w = np.stack([_cubic(1.0 + t), _cubic(t), _cubic(1.0 - t), _cubic(2.0 - t)], axis=1)
    else:
        raise ValueError(f"unknown interpolation mode {mode!r}")
    idx = np.clip(idx, 0, n_in - 1)
    ref = np.argmax(w, axis=1)
    matrix = np.zeros((n_out, n_in))
    for k in range(idx.shape[1]):
        np.add.at(matrix, (np.arange(n_out), idx[:, k]), w[:, k])
    return idx, w, ref, matrix


def _resample_axis(a: np.ndarray, axis: int, idx, w, ref) -> np.ndarray:
    # sum_k w_k * (x_k - x_ref) + x_ref: weights sum to one, and a constant
    # signal comes back bit-exact because every difference is exactly zero
    rows = np.arange(idx.shape[0])
    base = np.take(a, idx[rows, ref], axis=axis)
    out = base.copy()
    shape = [1] * a.ndim
    shape[axis] = -1
    for k in range(idx.shape[1]):
        wk = w[:, k].astype(a.dtype).reshape(shape)
        out += wk * (np.take(a, idx[:, k], axis=axis) - base)
    return out


def upsample_array(a: np.ndarray, scale: int, mode: str = "bicubic") -> np.ndarray:
    """Resample the last two axes of a plain array; no gradient tracking."""
    if scale < 1:
        raise ValueError(f"upsample scale must be >= 1, got {scale}")
    if scale == 1:
        return a.copy()
    H, W = a.shape[-2:]
    iy, wy, ry, _ = interp_taps(H, scale, mode)
    ix, wx, rx, _ = interp_taps(W, scale, mode)
    tmp = _resample_axis(a, a.ndim - 2, iy, wy, ry)
    return _resample_axis(tmp, a.ndim - 1, ix, wx, rx)


def upsample(x: Tensor, scale: int, mode: str = "bicubic") -> Tensor:
    """Upsample the spatial axes by an integer factor (bilinear or Catmull-Rom bicubic)."""
    if not isinstance(scale, (int, np.integer)) or scale < 1:
        raise ValueError(f"upsample scale must be an integer >= 1, got {scale!r}")
    out = upsample_array(x.data, int(scale), mode)
    H, W = x.shape[-2:]
    My = interp_taps(H, scale, mode)[3].astype(x.dtype) if scale > 1 else None
    Mx = interp_taps(W, scale, mode)[3].astype(x.dtype) if scale > 1 else None

    def bw(g):
        if scale == 1:
            return (g,)
        return (My.T @ g @ Mx,)

    return make_result(out, (x,), bw)


# -- convenience ----------------------------------------------------------------------


def scale_per_channel(x: Tensor, s: Tensor) -> Tensor:
    """Multiply channel ``c`` of a 4-D tensor by ``s[c]``."""
    return x * s.reshape(1, -1, 1, 1)


def zeros(shape, dtype=np.float32) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), dtype=dtype)


__all__ = [
    "ShapeError",
    "conv2d",
    "dwconv",
    "layer_norm",
    "gelu",
    "softmax",
    "softmax_lastdim",
    "l2_normalize",
    "l2_normalize_rows",
    "upsample",
    "upsample_array",
    "interp_taps",
    "as_tensor",
]
