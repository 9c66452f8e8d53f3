"""Affinity, boundary-consistency, segmentation and total losses.

The pairwise distance ``d`` between a predicted cosine affinity and its +/-1
target is the squared difference throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .functional import adaptive_avg_pool2d, bce_with_logits, resize_nearest
from .tensor import ShapeError, Tensor, add, make_result, mul, reshape, square, sub, tsum, transpose, getitem
from .tarm import ParamMaps

__all__ = [
    "DEFAULT_LAMBDAS",
    "BoundaryPatchSet",
    "LossReport",
    "downsample_for_affinity",
    "cosine_affinity",
    "gt_affinity",
    "class_balance_weights",
    "affinity_loss",
    "select_boundary_patches",
    "boundary_consistency_loss",
    "seg_loss",
    "total_loss",
    "tarm_losses",
]

DEFAULT_LAMBDAS = (1.0, 1.0, 10.0)


def _window_bounds(n_in: int, n_out: int) -> list[tuple[int, int]]:
    return [((i * n_in) // n_out, -((-(i + 1) * n_in) // n_out)) for i in range(n_out)]


def majority_pool(mask: np.ndarray, grid: int) -> np.ndarray:
    """Reduce a binary ``... x H x W`` mask to ``grid x grid`` by per-window majority (ties go to 1)."""
    mask = np.asarray(mask)
    h, w = mask.shape[-2:]
    if grid < 1 or grid > min(h, w):
        raise ShapeError(f"majority_pool: grid {grid} for a {h}x{w} mask")
    out = np.zeros(mask.shape[:-2] + (grid, grid), dtype=np.int64)
    for i, (r0, r1) in enumerate(_window_bounds(h, grid)):
        for j, (c0, c1) in enumerate(_window_bounds(w, grid)):
            count = mask[..., r0:r1, c0:c1].sum(axis=(-2, -1))
            size = (r1 - r0) * (c1 - c0)
            out[..., i, j] = 2 * count >= size
    return out


def downsample_for_affinity(param: Tensor, gt_mask: np.ndarray, grid: int) -> tuple[Tensor, np.ndarray]:
    """Average-pool ``param`` (N x C x H x W) and majority-pool ``gt_mask`` (N x Hg x Wg) to ``grid``."""
    gt_mask = np.asarray(gt_mask)
    if gt_mask.size == 0:
        raise ShapeError("downsample_for_affinity: empty mask")
    h, w = param.shape[2:]
    if grid > min(h, w):
        raise ShapeError(f"downsample_for_affinity: grid {grid} exceeds parameter map {h}x{w}")
    return adaptive_avg_pool2d(param, grid), majority_pool(gt_mask, grid)


def cosine_affinity(h: Tensor, eps: float = 1e-8) -> Tensor:
    """Pairwise cosine similarity of the columns of ``h`` (... x C x N) -> ... x N x N.

    ``A[m, n] = h_m . h_n / (|h_m| |h_n| + eps)``. Zero columns get zero rows
    and a zero norm gradient.
    """
    hd = h.data
    gram = np.swapaxes(hd, -1, -2) @ hd
    norms = np.sqrt(np.einsum("...cn,...cn->...n", hd, hd))
    denom = norms[..., :, None] * norms[..., None, :] + eps
    out = gram / denom
    safe = np.where(norms > 0, norms, 1.0)

    def bw(g):
        dgram = g / denom
        ddenom = -g * out / denom
        dnorm = np.einsum("...mn,...n->...m", ddenom + np.swapaxes(ddenom, -1, -2), norms)
        dh = hd @ (dgram + np.swapaxes(dgram, -1, -2))
        dh = dh + hd * np.where(norms > 0, dnorm / safe, 0.0)[..., None, :]
        return (dh,)

    return make_result(out, (h,), bw, "cosine_affinity")


def gt_affinity(labels: np.ndarray) -> np.ndarray:
    """``+1`` where two positions share a label, ``-1`` otherwise."""
    labels = np.asarray(labels)
    return np.where(labels[..., :, None] == labels[..., None, :], 1.0, -1.0)


def class_balance_weights(labels: np.ndarray) -> np.ndarray:
    """``w_m = 1 - (#positions with m's label) / (#positions)``."""
    labels = np.asarray(labels)
    n = labels.shape[-1]
    fg = labels.sum(axis=-1, keepdims=True)
    return np.where(labels == 1, 1.0 - fg / n, fg / n).astype(np.float64)


def affinity_loss(a_pred: Tensor, labels: np.ndarray, reduction: str = "sum") -> Tensor:
    """``sum_m sum_n w_m w_n (A[m,n] - A_gt[m,n])^2``, summed over any leading batch axes.

    With a single class present every weight is zero and the loss is 0.
    ``reduction="mean"`` divides each sample's double sum by ``N^2``.
    """
    labels = np.asarray(labels)
    if a_pred.shape[-1] != labels.shape[-1] or a_pred.shape[-2] != labels.shape[-1]:
        raise ShapeError(f"affinity_loss: A {a_pred.shape} vs labels {labels.shape}")
    w = class_balance_weights(labels)
    pair_w = w[..., :, None] * w[..., None, :]
    if reduction == "mean":
        pair_w = pair_w / labels.shape[-1] ** 2
    elif reduction != "sum":
        raise ValueError(f"unknown reduction {reduction!r}")
    diff = sub(a_pred, gt_affinity(labels))
    return tsum(mul(square(diff), pair_w))


class BoundaryPatchSet(NamedTuple):
    size: int
    patches: list[tuple[int, int]]


def select_boundary_patches(gt_mask: np.ndarray, s: int) -> BoundaryPatchSet:
    """Non-overlapping ``s x s`` tiles that contain both labels; partial tiles dropped."""
    gt_mask = np.asarray(gt_mask)
    if s < 2:
        raise ValueError("patch size must be at least 2")
    h, w = gt_mask.shape
    if h < s or w < s:
        raise ShapeError(f"mask {h}x{w} smaller than patch size {s}")
    th, tw = h // s, w // s
    tiles = gt_mask[: th * s, : tw * s].reshape(th, s, tw, s)
    mixed = tiles.max(axis=(1, 3)) != tiles.min(axis=(1, 3))
    rows, cols = np.nonzero(mixed)
    return BoundaryPatchSet(s, [(int(r) * s, int(c) * s) for r, c in zip(rows, cols)])


def boundary_consistency_loss(param: Tensor, gt_mask: np.ndarray, s: int, eps: float = 1e-8, reduction: str = "sum") -> Tensor:
    """Unweighted affinity mismatch inside every boundary-straddling tile, summed.

    ``param`` is N x C x H x W; ``gt_mask`` (N x Hg x Wg) is resized to H x W by
    nearest neighbour first. Returns the raw sum over all tiles of all samples.
    ``reduction="mean"`` divides by ``s^4`` times the number of tiles in one
    map, i.e. averages over every pair of every tile (non-boundary tiles count
    as zero).
    """
    if reduction not in ("sum", "mean"):
        raise ValueError(f"unknown reduction {reduction!r}")
    n, c, h, w = param.shape
    masks = resize_nearest(np.asarray(gt_mask), h, w)
    th, tw = h // s, w // s
    flat_idx: list[int] = []
    patch_labels: list[np.ndarray] = []
    for b in range(n):
        for r, col in select_boundary_patches(masks[b], s).patches:
            flat_idx.append((b * th + r // s) * tw + col // s)
            patch_labels.append(masks[b, r : r + s, col : col + s].reshape(-1))
    if not flat_idx:
        return Tensor(0.0)
    crop = param if (th * s, tw * s) == (h, w) else getitem(param, (slice(None), slice(None), slice(0, th * s), slice(0, tw * s)))
    tiles = reshape(crop, (n, c, th, s, tw, s))
    tiles = transpose(tiles, (0, 2, 4, 1, 3, 5))
    tiles = reshape(tiles, (n * th * tw, c, s * s))
    chosen = getitem(tiles, np.asarray(flat_idx))
    a = cosine_affinity(chosen, eps)
    loss = tsum(square(sub(a, gt_affinity(np.stack(patch_labels)))))
    return mul(loss, 1.0 / (th * tw * s**4)) if reduction == "mean" else loss


def seg_loss(logits_per_scale: Sequence[Tensor], gt_mask: np.ndarray) -> tuple[Tensor, list[float]]:
    """Equal-weight mean over scales of per-pixel BCE; ``gt_mask`` is N x H x W."""
    gt_mask = np.asarray(gt_mask)
    if not np.isin(gt_mask, (0, 1)).all():
        raise ValueError("seg_loss: ground-truth values must be 0 or 1")
    terms = []
    for logits in logits_per_scale:
        if not np.isfinite(logits.data).all():
            raise FloatingPointError("seg_loss: non-finite logits")
        hi, wi = logits.shape[-2:]
        target = resize_nearest(gt_mask, hi, wi).astype(np.float64)
        terms.append(bce_with_logits(logits, target.reshape(logits.shape)))
    total = terms[0]
    for t in terms[1:]:
        total = add(total, t)
    return mul(total, 1.0 / len(terms)), [t.item() for t in terms]


def total_loss(seg, aff, edge, lambdas: Sequence[float] = DEFAULT_LAMBDAS):
    """``l0*seg + l1*aff + l2*edge``; works on floats or tensors."""
    l0, l1, l2 = lambdas
    if min(l0, l1, l2) < 0:
        raise ValueError(f"loss weights must be non-negative, got {tuple(lambdas)}")
    return l0 * seg + l1 * aff + l2 * edge


def tarm_losses(
    maps: Sequence[ParamMaps],
    gt_mask: np.ndarray,
    grid: int = 16,
    patch: int = 4,
    use_bcl: bool = True,
    reduction: str = "pairs",
) -> tuple[Tensor, Tensor]:
    """Affinity and boundary losses over all modules, both maps, averaged over the batch.

    Each module uses grid ``min(grid, H, W)`` of its own parameter maps. The
    boundary term needs at least two patches per side of a map.
    ``reduction`` is ``"sum"`` (raw sums), ``"mean"`` (each term averaged over
    its own pairs) or ``"pairs"``: both raw sums divided by the same per-map
    constant, the affinity pair count ``G^4``, so their raw-sum ratio survives.
    """
    if reduction not in ("sum", "mean", "pairs"):
        raise ValueError(f"unknown reduction {reduction!r}")
    gt_mask = np.asarray(gt_mask)
    n = gt_mask.shape[0]
    aff: Tensor = Tensor(0.0)
    edge: Tensor = Tensor(0.0)
    for pm in maps:
        h, w = pm.gamma.shape[2:]
        g = min(grid, h, w)
        for param in pm:
            pooled, labels = downsample_for_affinity(param, gt_mask, g)
            vecs = reshape(pooled, (n, param.shape[1], g * g))
            aff = add(aff, affinity_loss(cosine_affinity(vecs), labels.reshape(n, g * g), "sum" if reduction == "sum" else "mean"))
            # a single patch spanning the whole map does not localize a boundary
            if use_bcl and min(h, w) >= 2 * patch:
                if reduction == "pairs":
                    term = mul(boundary_consistency_loss(param, gt_mask, patch), 1.0 / g**4)
                else:
                    term = boundary_consistency_loss(param, gt_mask, patch, reduction=reduction)
                edge = add(edge, term)
    return mul(aff, 1.0 / n), mul(edge, 1.0 / n)


@dataclass
class LossReport:
    seg: float
    aff: float
    edge: float
    total: float
    per_scale_seg: list[float] = field(default_factory=list)
    single_class: bool = False
    grad_norm: Optional[float] = None  # global gradient norm before clipping, set by train_step

    def log_line(self, step: int, lr: float) -> str:
        line = f"step={step} lr={lr:.10g} seg={self.seg:.10g} aff={self.aff:.10g} edge={self.edge:.10g} total={self.total:.10g}"
        return line if self.grad_norm is None else f"{line} grad_norm={self.grad_norm:.6g}"

    def is_finite(self) -> bool:
        return all(math.isfinite(v) for v in (self.seg, self.aff, self.edge, self.total))
