"""Camouflaged-object evaluation: S-measure, adaptive E-measure, weighted F-measure, MAE.

Every function takes ``pred`` (H x W, clamped to [0, 1]) and a binary ``gt``
of the same shape and returns a float.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import ndimage

from . import imageio
from .functional import bilinear_matrix

__all__ = [
    "mae",
    "weighted_fbeta",
    "s_measure",
    "e_measure",
    "nearest_foreground",
    "matlab_gaussian",
    "score_pair",
    "MetricReport",
    "evaluate_arrays",
    "evaluate_dataset",
]

EPS = 1e-12


def _prepare(pred, gt) -> tuple[np.ndarray, np.ndarray]:
    pred = np.clip(np.asarray(pred, dtype=np.float64), 0.0, 1.0)
    gt = np.asarray(gt) > 0.5
    if pred.shape != gt.shape:
        raise ValueError(f"prediction {pred.shape} and ground truth {gt.shape} differ in shape")
    if pred.size == 0:
        raise ValueError("empty prediction")
    return pred, gt


def _is_perfect(pred: np.ndarray, gt: np.ndarray) -> bool:
    # the 1e-12 guards would otherwise leave perfect scores a hair below 1
    return bool(np.array_equal(pred, gt.astype(np.float64)))


def mae(pred, gt) -> float:
    pred, gt = _prepare(pred, gt)
    return float(np.mean(np.abs(pred - gt)))


# ------------------------------------------------------------ weighted F
def matlab_gaussian(size: int = 7, sigma: float = 5.0) -> np.ndarray:
    half = (size - 1) / 2.0
    y, x = np.mgrid[-half : half + 1, -half : half + 1]
    k = np.exp(-(x * x + y * y) / (2.0 * sigma * sigma))
    k[k < np.finfo(np.float64).eps * k.max()] = 0.0
    return k / k.sum()


def nearest_foreground(gt: np.ndarray, chunk: int = 4096) -> tuple[np.ndarray, np.ndarray]:
    """Exact Euclidean distance to, and flat index of, the nearest foreground pixel.

    Ties go to the lowest row-major index. Only foreground pixels with a
    background 4-neighbour can be nearest to a background pixel, so the
    search runs over that boundary set. Foreground pixels map to themselves.
    """
    gt = np.asarray(gt, dtype=bool)
    h, w = gt.shape
    flat = np.arange(h * w).reshape(h, w)
    dist = np.zeros((h, w))
    index = flat.copy()
    if not gt.any():
        raise ValueError("nearest_foreground: no foreground pixels")
    interior = ndimage.binary_erosion(gt, structure=ndimage.generate_binary_structure(2, 1), border_value=1)
    boundary = np.flatnonzero(gt & ~interior)  # sorted row-major
    by, bx = np.divmod(boundary, w)
    qy, qx = np.nonzero(~gt)
    for start in range(0, qy.size, chunk):
        ys, xs = qy[start : start + chunk], qx[start : start + chunk]
        d2 = (ys[:, None] - by[None, :]) ** 2 + (xs[:, None] - bx[None, :]) ** 2
        k = d2.argmin(axis=1)
        dist[ys, xs] = np.sqrt(d2[np.arange(ys.size), k])
        index[ys, xs] = boundary[k]
    return dist, index


def weighted_fbeta(pred, gt, beta2: float = 1.0) -> float:
    """Weighted F-measure with a 7x7, sigma=5 dependency kernel and distance-based importance.

    An all-background ground truth scores 0.
    """
    pred, gt = _prepare(pred, gt)
    if not gt.any():
        return 0.0
    if _is_perfect(pred, gt):
        return 1.0
    err = np.abs(pred - gt)
    dst, idx = nearest_foreground(gt)
    err_t = err.reshape(-1)[idx]
    ea = ndimage.convolve(err_t, matlab_gaussian(7, 5.0), mode="constant", cval=0.0)
    min_e_ea = np.where(gt & (ea < err), ea, err)
    importance = np.where(gt, 1.0, 2.0 - np.exp(np.log(0.5) / 5.0 * dst))
    ew = min_e_ea * importance
    tp = gt.sum() - ew[gt].sum()
    fp = ew[~gt].sum()
    recall = 1.0 - ew[gt].mean()
    precision = tp / (tp + fp + EPS)
    return float((1.0 + beta2) * recall * precision / (recall + beta2 * precision + EPS))


# ------------------------------------------------------------ S-measure
def _object_score(values: np.ndarray) -> float:
    if values.size == 0:
        return 0.0
    x = values.mean()
    sigma = values.std(ddof=1) if values.size > 1 else 0.0
    return float(2.0 * x / (x * x + 1.0 + 2.0 * sigma + EPS))


def _ssim(pred: np.ndarray, gt: np.ndarray) -> float:
    n = pred.size
    x, y = pred.mean(), gt.mean()
    denom = max(n - 1, 1)
    sx = ((pred - x) ** 2).sum() / denom
    sy = ((gt - y) ** 2).sum() / denom
    sxy = ((pred - x) * (gt - y)).sum() / denom
    alpha = 4.0 * x * y * sxy
    beta = (x * x + y * y) * (sx + sy)
    if alpha != 0:
        return float(alpha / (beta + EPS))
    if beta == 0:  # both regions flat (or both zero): agreement only if the levels match
        return 1.0 if x == y else 0.0
    return 0.0


def gt_centroid(gt: np.ndarray) -> tuple[int, int]:
    """Split point (row, col): rounded foreground centroid plus one."""
    ys, xs = np.nonzero(gt)
    return int(np.round(ys.mean())) + 1, int(np.round(xs.mean())) + 1


def s_measure(pred, gt, alpha: float = 0.5) -> float:
    pred, gt = _prepare(pred, gt)
    mu = gt.mean()
    if mu == 0:
        return float(1.0 - pred.mean())
    if mu == 1:
        return float(pred.mean())
    if _is_perfect(pred, gt):
        return 1.0
    s_obj = mu * _object_score(pred[gt]) + (1.0 - mu) * _object_score(1.0 - pred[~gt])

    h, w = gt.shape
    cy, cx = gt_centroid(gt)
    g = gt.astype(np.float64)
    s_reg = 0.0
    for rs in (slice(0, cy), slice(cy, h)):
        for cs in (slice(0, cx), slice(cx, w)):
            p_q, g_q = pred[rs, cs], g[rs, cs]
            if p_q.size == 0:
                continue
            s_reg += p_q.size / (h * w) * _ssim(p_q, g_q)
    return float(max(0.0, alpha * s_obj + (1.0 - alpha) * s_reg))


# ------------------------------------------------------------ E-measure
def e_measure(pred, gt) -> float:
    """Enhanced alignment of the prediction binarized at ``min(2 * mean, 1)``."""
    pred, gt = _prepare(pred, gt)
    binary = (pred >= min(2.0 * pred.mean(), 1.0)).astype(np.float64)
    g = gt.astype(np.float64)
    if not gt.any():
        return float(1.0 - binary.mean())
    if gt.all():
        return float(binary.mean())
    if _is_perfect(binary, gt):
        return 1.0
    phi_g = g - g.mean()
    phi_p = binary - binary.mean()
    xi = 2.0 * phi_g * phi_p / (phi_g**2 + phi_p**2 + EPS)
    return float(np.mean((1.0 + xi) ** 2 / 4.0))


# ------------------------------------------------------------ aggregation
METRIC_NAMES = ("S_alpha", "E_phi", "F_beta_w", "MAE")


def score_pair(pred, gt) -> tuple[float, float, float, float]:
    """(S, E, F_w, MAE) in Table-1 column order."""
    return s_measure(pred, gt), e_measure(pred, gt), weighted_fbeta(pred, gt), mae(pred, gt)


@dataclass
class MetricReport:
    s_alpha: float
    e_phi: float
    f_beta_w: float
    mae: float
    per_image: list[tuple[str, float, float, float, float]] = field(default_factory=list)
    n_images: int = 0

    def values(self) -> tuple[float, float, float, float]:
        return self.s_alpha, self.e_phi, self.f_beta_w, self.mae

    def table(self, label: str = "", verbose: bool = False) -> str:
        head = f"{'method':<12} {'S_alpha↑':>9} {'E_phi↑':>9} {'F_beta^w↑':>10} {'M↓':>9}"
        rows = [head, f"{label or 'ours':<12} {self.s_alpha:>9.4f} {self.e_phi:>9.4f} {self.f_beta_w:>10.4f} {self.mae:>9.4f}"]
        if verbose:
            for name, s, e, f, m in self.per_image:
                rows.append(f"{name:<12} {s:>9.4f} {e:>9.4f} {f:>10.4f} {m:>9.4f}")
        return "\n".join(rows)

    def write_csv(self, path: str | os.PathLike) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["image", *METRIC_NAMES])
            for name, *vals in self.per_image:
                wr.writerow([name, *(f"{v:.10f}" for v in vals)])
            wr.writerow(["mean", *(f"{v:.10f}" for v in self.values())])


def evaluate_arrays(preds: Sequence[np.ndarray], gts: Sequence[np.ndarray], names: Sequence[str] | None = None) -> MetricReport:
    names = list(names) if names is not None else [f"{i:05d}" for i in range(len(preds))]
    if not len(preds) == len(gts) == len(names):
        raise ValueError("preds, gts and names differ in length")
    if not preds:
        raise ValueError("nothing to evaluate")
    rows = [(n, *score_pair(p, g)) for n, p, g in zip(names, preds, gts)]
    sums = [0.0, 0.0, 0.0, 0.0]
    for row in rows:  # fixed summation order
        for k in range(4):
            sums[k] += row[k + 1]
    means = [s / len(rows) for s in sums]
    return MetricReport(*means, per_image=rows, n_images=len(rows))


def resize_bilinear(a: np.ndarray, h: int, w: int) -> np.ndarray:
    if a.shape == (h, w):
        return a
    return bilinear_matrix(a.shape[0], h) @ a @ bilinear_matrix(a.shape[1], w).T


def _index_dir(d: Path) -> dict[str, Path]:
    if not d.is_dir():
        raise FileNotFoundError(f"not a directory: {d}")
    return {p.stem: p for p in sorted(d.iterdir()) if p.suffix.lower() in imageio.IMAGE_SUFFIXES}


def evaluate_dataset(pred_dir: str | os.PathLike, gt_dir: str | os.PathLike) -> MetricReport:
    """Score every ground-truth mask against the same-named prediction (matched by stem)."""
    preds, gts = _index_dir(Path(pred_dir)), _index_dir(Path(gt_dir))
    if not gts:
        raise FileNotFoundError(f"no mask images in {gt_dir}")
    missing = sorted(set(gts) - set(preds))
    if missing:
        raise FileNotFoundError(f"no prediction for ground truth {gts[missing[0]]} ({len(missing)} missing)")
    names = sorted(gts)
    p_arr, g_arr = [], []
    for name in names:
        g = imageio.read_mask(gts[name])
        p = imageio.read_gray(preds[name])
        p_arr.append(np.clip(resize_bilinear(p, *g.shape), 0.0, 1.0))
        g_arr.append(g)
    return evaluate_arrays(p_arr, g_arr, names)
