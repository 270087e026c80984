"""Spatial operations on NCHW tensors: convolution, pooling, batch norm,
bilinear resampling.

Convolution runs as window extraction plus one BLAS contraction; the
backward pass reuses the extracted windows, so only kernel-sized Python
loops remain on the hot path.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from .tensor import Tensor, _from_op

__all__ = [
    "conv2d",
    "maxpool2d",
    "batchnorm2d",
    "global_avgpool",
    "adaptive_avgpool",
    "bilinear_upsample",
]


def _pair(v) -> tuple[int, int]:
    if isinstance(v, (tuple, list)):
        return int(v[0]), int(v[1])
    return int(v), int(v)


def _windows(xp: np.ndarray, kh: int, kw: int, sh: int, sw: int, oh: int, ow: int) -> np.ndarray:
    """Copy sliding windows of a padded NCHW array into (N,C,kh,kw,oh,ow)."""
    n, c = xp.shape[:2]
    cols = np.empty((n, c, kh, kw, oh, ow), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i : i + sh * oh : sh, j : j + sw * ow : sw]
    return cols


def conv2d(x: Tensor, w: Tensor, b: Optional[Tensor] = None, stride=1, padding=0) -> Tensor:
    """Cross-correlate x (N,Cin,H,W) with w (Cout,Cin,kh,kw), optional bias.

    Output spatial dims are floor((H + 2p - kh) / stride) + 1.
    """
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    n, cin, h, wd = x.shape
    cout, cw, kh, kw = w.shape
    if cw != cin:
        raise ValueError(f"conv2d channel mismatch: input has {cin}, kernel expects {cw}")
    hp, wp = h + 2 * ph, wd + 2 * pw
    if kh > hp or kw > wp:
        raise ValueError(f"conv2d kernel {kh}x{kw} larger than padded input {hp}x{wp}")
    oh = (hp - kh) // sh + 1
    ow = (wp - kw) // sw + 1

    if kh == 1 and kw == 1 and sh == 1 and sw == 1 and ph == 0 and pw == 0:
        return _conv1x1(x, w, b)

    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if (ph or pw) else x.data
    cols = _windows(xp, kh, kw, sh, sw, oh, ow)
    out = np.tensordot(cols, w.data, axes=([1, 2, 3], [1, 2, 3]))  # (N,oh,ow,Cout)
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))
    if b is not None:
        out += b.data.reshape(1, -1, 1, 1)

    parents = (x, w) if b is None else (x, w, b)

    def vjp(g):
        gx = gw = gb = None
        if w.requires_grad:
            gw = np.tensordot(g, cols, axes=([0, 2, 3], [0, 4, 5]))
        if b is not None and b.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        if x.requires_grad:
            gcols = np.tensordot(g, w.data, axes=([1], [0]))  # (N,oh,ow,Cin,kh,kw)
            gcols = gcols.transpose(0, 3, 4, 5, 1, 2)
            gxp = np.zeros((n, cin, hp, wp), dtype=g.dtype)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i : i + sh * oh : sh, j : j + sw * ow : sw] += gcols[:, :, i, j]
            gx = gxp[:, :, ph : ph + h, pw : pw + wd] if (ph or pw) else gxp
        return (gx, gw) if b is None else (gx, gw, gb)

    return _from_op(out, parents, vjp)


def _conv1x1(x: Tensor, w: Tensor, b: Optional[Tensor]) -> Tensor:
    # pointwise fast path, skips window extraction
    w2 = w.data[:, :, 0, 0]
    out = np.tensordot(x.data, w2, axes=([1], [1]))  # (N,H,W,Cout)
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))
    if b is not None:
        out += b.data.reshape(1, -1, 1, 1)

    parents = (x, w) if b is None else (x, w, b)

    def vjp(g):
        gx = gw = gb = None
        if w.requires_grad:
            gw = np.tensordot(g, x.data, axes=([0, 2, 3], [0, 2, 3]))[:, :, None, None]
        if b is not None and b.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        if x.requires_grad:
            gx = np.ascontiguousarray(
                np.tensordot(g, w2, axes=([1], [0])).transpose(0, 3, 1, 2)
            )
        return (gx, gw) if b is None else (gx, gw, gb)

    return _from_op(out, parents, vjp)


def maxpool2d(x: Tensor, kernel: int = 2, stride: int = 2) -> Tensor:
    """Max pooling; gradient routes to the first maximal index per window."""
    kh, kw = _pair(kernel)
    sh, sw = _pair(stride)
    n, c, h, w = x.shape
    if h < kh or w < kw:
        raise ValueError(f"maxpool2d window {kh}x{kw} exceeds input {h}x{w}")
    oh = (h - kh) // sh + 1
    ow = (w - kw) // sw + 1
    cols = _windows(x.data, kh, kw, sh, sw, oh, ow).reshape(n, c, kh * kw, oh, ow)
    arg = cols.argmax(axis=2)  # first occurrence, row-major within window
    out = np.take_along_axis(cols, arg[:, :, None], axis=2)[:, :, 0]

    def vjp(g):
        gx = np.zeros((n, c, h, w), dtype=g.dtype)
        for idx in range(kh * kw):
            i, j = divmod(idx, kw)
            gx[:, :, i : i + sh * oh : sh, j : j + sw * ow : sw] += g * (arg == idx)
        return (gx,)

    return _from_op(out, (x,), vjp)


def batchnorm2d(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel normalization over (N,H,W).

    Training mode normalizes with batch statistics and updates the running
    buffers in place; eval mode reads the buffers. Variance is biased in
    both paths.
    """
    n, c, h, w = x.shape
    m = n * h * w
    if training and m == 1:
        raise ValueError("batchnorm2d: cannot estimate variance from a single value per channel")

    if training:
        mean = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        running_var *= 1.0 - momentum
        running_var += momentum * var
    else:
        mean = running_mean.astype(x.dtype, copy=False)
        var = running_var.astype(x.dtype, copy=False)

    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean.reshape(1, c, 1, 1)) * inv.reshape(1, c, 1, 1)
    out = gamma.data.reshape(1, c, 1, 1) * xhat + beta.data.reshape(1, c, 1, 1)

    def vjp(g):
        ggamma = (g * xhat).sum(axis=(0, 2, 3)) if gamma.requires_grad else None
        gbeta = g.sum(axis=(0, 2, 3)) if beta.requires_grad else None
        gx = None
        if x.requires_grad:
            gxhat = g * gamma.data.reshape(1, c, 1, 1)
            if training:
                s1 = gxhat.sum(axis=(0, 2, 3), keepdims=True)
                s2 = (gxhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
                gx = (inv.reshape(1, c, 1, 1) / m) * (m * gxhat - s1 - xhat * s2)
            else:
                gx = gxhat * inv.reshape(1, c, 1, 1)
        return gx, ggamma, gbeta

    return _from_op(out, (x, gamma, beta), vjp)


def global_avgpool(x: Tensor) -> Tensor:
    """(N,C,H,W) -> (N,C,1,1) spatial mean."""
    n, c, h, w = x.shape
    out = x.data.mean(axis=(2, 3), keepdims=True)

    def vjp(g):
        return (np.broadcast_to(g / (h * w), x.shape).copy(),)

    return _from_op(out, (x,), vjp)


def adaptive_avgpool(x: Tensor, gh: int, gw: int) -> Tensor:
    """Average over a gh x gw partition with boundaries at floor(i*H/gh)."""
    n, c, h, w = x.shape
    if gh > h or gw > w:
        raise ValueError(f"adaptive_avgpool grid {gh}x{gw} exceeds input {h}x{w}")
    rb = [i * h // gh for i in range(gh + 1)]
    cb = [j * w // gw for j in range(gw + 1)]
    out = np.empty((n, c, gh, gw), dtype=x.dtype)
    for i in range(gh):
        for j in range(gw):
            out[:, :, i, j] = x.data[:, :, rb[i] : rb[i + 1], cb[j] : cb[j + 1]].mean(axis=(2, 3))

    def vjp(g):
        gx = np.zeros((n, c, h, w), dtype=g.dtype)
        for i in range(gh):
            for j in range(gw):
                size = (rb[i + 1] - rb[i]) * (cb[j + 1] - cb[j])
                gx[:, :, rb[i] : rb[i + 1], cb[j] : cb[j + 1]] = (
                    g[:, :, i : i + 1, j : j + 1] / size
                )
        return (gx,)

    return _from_op(out, (x,), vjp)


def _resample_matrix(size_in: int, size_out: int, dtype) -> np.ndarray:
    """Row-stochastic matrix mapping size_in samples to size_out by bilinear
    interpolation with half-pixel-aligned source coordinates."""
    mat = np.zeros((size_out, size_in), dtype=np.float64)
    for i in range(size_out):
        src = (i + 0.5) * size_in / size_out - 0.5
        src = min(max(src, 0.0), size_in - 1.0)
        i0 = int(np.floor(src))
        i1 = min(i0 + 1, size_in - 1)
        frac = src - i0
        mat[i, i0] += 1.0 - frac
        mat[i, i1] += frac
    return mat.astype(dtype)


def bilinear_upsample(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Differentiable bilinear resize of (N,C,H,W) to (N,C,out_h,out_w)."""
    n, c, h, w = x.shape
    if out_h <= 0 or out_w <= 0:
        raise ValueError(f"bilinear_upsample: output size {out_h}x{out_w} must be positive")
    if out_h < h or out_w < w:
        raise ValueError(f"bilinear_upsample: output {out_h}x{out_w} smaller than input {h}x{w}")
    lh = _resample_matrix(h, out_h, x.dtype)
    lw = _resample_matrix(w, out_w, x.dtype)
    t = np.moveaxis(np.tensordot(lh, x.data, axes=([1], [2])), 0, 2)  # (N,C,out_h,W)
    out = np.tensordot(t, lw, axes=([3], [1]))  # (N,C,out_h,out_w)

    def vjp(g):
        gt = np.tensordot(g, lw, axes=([3], [0]))  # (N,C,out_h,W)
        gx = np.tensordot(gt, lh, axes=([2], [0]))  # (N,C,W,H)
        return (np.ascontiguousarray(gx.swapaxes(2, 3)),)

    return _from_op(np.ascontiguousarray(out), (x,), vjp)
