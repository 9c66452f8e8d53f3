"""Convolution, pooling, resampling and normalization ops on N x C x H x W tensors."""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import ShapeError, Tensor, _sigmoid, make_result, mean, sqrt, square, sub

__all__ = [
    "conv2d",
    "conv2d_naive",
    "pool2d",
    "adaptive_avg_pool2d",
    "upsample_bilinear",
    "bilinear_matrix",
    "adaptive_pool_matrix",
    "resize_nearest",
    "channel_stats",
    "bce_with_logits",
]


def _check4(x: Tensor, op: str) -> None:
    if x.ndim != 4:
        raise ShapeError(f"{op}: expected N x C x H x W input, got shape {x.shape}")


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation via im2col.

    Output spatial size is ``(H + 2*padding - k) // stride + 1``. Gradients flow
    to ``x``, ``weight`` and ``bias``.
    """
    _check4(x, "conv2d")
    if weight.ndim != 4 or weight.shape[2] != weight.shape[3]:
        raise ShapeError(f"conv2d: weight must be O x C x k x k, got {weight.shape}")
    n, c, h, w = x.shape
    o, cw, k, _ = weight.shape
    if cw != c:
        raise ShapeError(f"conv2d: input has {c} channels but weight expects {cw}")
    if bias is not None and bias.shape != (o,):
        raise ShapeError(f"conv2d: bias shape {bias.shape} != ({o},)")
    hp, wp = h + 2 * padding, w + 2 * padding
    if k > hp or k > wp:
        raise ShapeError(f"conv2d: kernel {k} larger than padded input {hp}x{wp}")
    ho = (hp - k) // stride + 1
    wo = (wp - k) // stride + 1

    xd = x.data
    if padding:
        xd = np.pad(xd, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    if k == 1:
        patches = xd[:, :, ::stride, ::stride][:, :, :ho, :wo]
        cols = patches.transpose(0, 2, 3, 1).reshape(n * ho * wo, c)
    else:
        win = sliding_window_view(xd, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * k * k)
    wmat = weight.data.reshape(o, c * k * k)
    out = cols @ wmat.T
    if bias is not None:
        out = out + bias.data
    out = np.ascontiguousarray(out.reshape(n, ho, wo, o).transpose(0, 3, 1, 2))

    def bw(g):
        gmat = g.transpose(0, 2, 3, 1).reshape(n * ho * wo, o)
        gw = (gmat.T @ cols).reshape(weight.shape) if weight.requires_grad else None
        gb = gmat.sum(axis=0) if bias is not None and bias.requires_grad else None
        gx = None
        if x.requires_grad:
            gcols = (gmat @ wmat).reshape(n, ho, wo, c, k, k)
            gxp = np.zeros((n, c, hp, wp))
            for i in range(k):
                for j in range(k):
                    gxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            gx = gxp[:, :, padding : padding + h, padding : padding + w] if padding else gxp
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_result(out, parents, bw, "conv2d")


def conv2d_naive(x: np.ndarray, weight: np.ndarray, bias: np.ndarray | None = None, stride: int = 1, padding: int = 0) -> np.ndarray:
    """Direct-loop convolution on plain arrays. Reference path for tests."""
    n, c, h, w = x.shape
    o, _, k, _ = weight.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    ho = (h + 2 * padding - k) // stride + 1
    wo = (w + 2 * padding - k) // stride + 1
    out = np.zeros((n, o, ho, wo))
    for b in range(n):
        for oc in range(o):
            for i in range(ho):
                for j in range(wo):
                    acc = 0.0
                    for ic in range(c):
                        for di in range(k):
                            for dj in range(k):
                                acc += xp[b, ic, i * stride + di, j * stride + dj] * weight[oc, ic, di, dj]
                    out[b, oc, i, j] = acc + (bias[oc] if bias is not None else 0.0)
    return out


def pool2d(x: Tensor, mode: str = "avg", kernel: int = 2, stride: int | None = None) -> Tensor:
    """Average or max pooling without padding.

    Max pooling routes the gradient to the first (lowest flat index) maximum
    of each window.
    """
    _check4(x, "pool2d")
    if mode not in ("avg", "max"):
        raise ValueError(f"pool2d: mode must be 'avg' or 'max', got {mode!r}")
    stride = kernel if stride is None else stride
    n, c, h, w = x.shape
    if kernel > h or kernel > w:
        raise ShapeError(f"pool2d: kernel {kernel} exceeds spatial extent {h}x{w}")
    ho = (h - kernel) // stride + 1
    wo = (w - kernel) // stride + 1
    win = sliding_window_view(x.data, (kernel, kernel), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    flat = win.reshape(n, c, ho, wo, kernel * kernel)

    if mode == "avg":
        out = flat.mean(axis=-1)
        scale = 1.0 / (kernel * kernel)

        def bw(g):
            gx = np.zeros((n, c, h, w))
            gs = g * scale
            for i in range(kernel):
                for j in range(kernel):
                    gx[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += gs
            return (gx,)

    else:
        arg = flat.argmax(axis=-1)
        out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

        def bw(g):
            gx = np.zeros((n, c, h, w))
            for i in range(kernel):
                for j in range(kernel):
                    hit = arg == i * kernel + j
                    gx[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += np.where(hit, g, 0.0)
            return (gx,)

    return make_result(np.ascontiguousarray(out), (x,), bw, f"{mode}pool")


def adaptive_pool_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Row i averages input cells floor(i*n_in/n_out) .. ceil((i+1)*n_in/n_out)-1."""
    if n_out < 1 or n_out > n_in:
        raise ShapeError(f"adaptive pooling from {n_in} to {n_out} cells")
    m = np.zeros((n_out, n_in))
    for i in range(n_out):
        lo = (i * n_in) // n_out
        hi = -((-(i + 1) * n_in) // n_out)
        m[i, lo:hi] = 1.0 / (hi - lo)
    return m


def bilinear_matrix(n_in: int, n_out: int) -> np.ndarray:
    """1-D linear interpolation weights, half-pixel centres (align_corners=False)."""
    if n_in < 1 or n_out < 1:
        raise ShapeError(f"bilinear resize from {n_in} to {n_out} cells")
    m = np.zeros((n_out, n_in))
    scale = n_in / n_out
    for i in range(n_out):
        src = max((i + 0.5) * scale - 0.5, 0.0)
        i0 = min(int(np.floor(src)), n_in - 1)
        i1 = min(i0 + 1, n_in - 1)
        frac = src - i0
        m[i, i0] += 1.0 - frac
        m[i, i1] += frac
    return m


def _separable(x: Tensor, mh: np.ndarray, mw: np.ndarray, op: str) -> Tensor:
    out = np.einsum("ih,nchw,jw->ncij", mh, x.data, mw, optimize=True)
    return make_result(out, (x,), lambda g: (np.einsum("ih,ncij,jw->nchw", mh, g, mw, optimize=True),), op)


def adaptive_avg_pool2d(x: Tensor, out_h: int, out_w: int | None = None) -> Tensor:
    _check4(x, "adaptive_avg_pool2d")
    out_w = out_h if out_w is None else out_w
    return _separable(x, adaptive_pool_matrix(x.shape[2], out_h), adaptive_pool_matrix(x.shape[3], out_w), "adaptive_avgpool")


def upsample_bilinear(x: Tensor, target_h: int, target_w: int) -> Tensor:
    _check4(x, "upsample_bilinear")
    if target_h <= 0 or target_w <= 0:
        raise ShapeError(f"upsample_bilinear: target size {target_h}x{target_w}")
    h, w = x.shape[2:]
    if target_h < h or target_w < w:
        raise ShapeError(f"upsample_bilinear: target {target_h}x{target_w} smaller than source {h}x{w}")
    if (target_h, target_w) == (h, w):
        return x
    return _separable(x, bilinear_matrix(h, target_h), bilinear_matrix(w, target_w), "upsample")


def resize_nearest(a: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Nearest-neighbour resize of the last two axes; source index floor(i * in / out)."""
    h, w = a.shape[-2:]
    rows = (np.arange(out_h) * h) // out_h
    cols = (np.arange(out_w) * w) // out_w
    return a[..., rows[:, None], cols[None, :]]


def channel_stats(x: Tensor, eps: float = 1e-5) -> tuple[Tensor, Tensor]:
    """Per-sample, per-channel spatial mean and ``sqrt(var + eps)``."""
    _check4(x, "channel_stats")
    if eps <= 0:
        raise ValueError("channel_stats: eps must be positive")
    mu = mean(x, axis=(2, 3), keepdims=True)
    var = mean(square(sub(x, mu)), axis=(2, 3), keepdims=True)
    return mu, sqrt(var + eps)


def bce_with_logits(logits: Tensor, target: np.ndarray) -> Tensor:
    """Mean binary cross-entropy of ``sigmoid(logits)`` against ``target``.

    Uses ``max(z, 0) - z*y + log1p(exp(-|z|))`` so large logits never overflow.
    """
    z = logits.data
    y = np.broadcast_to(np.asarray(target, dtype=np.float64), z.shape)
    per = np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))
    n = z.size

    def bw(g):
        return (g * (_sigmoid(z) - y) / n,)

    return make_result(np.asarray(per.mean()), (logits,), bw, "bce_logits")
