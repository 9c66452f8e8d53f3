"""Paired image/mask directories as in-memory arrays.

A split directory holds ``images/`` and ``masks/`` with files matched by stem.
Any such directory works, synthetic or real; images of another size are
resized to the requested resolution (bilinear for images, nearest for masks).
"""

from __future__ import annotations

import os
from pathlib import Path
from typing import NamedTuple, Optional

import numpy as np

from . import imageio
from .functional import bilinear_matrix, resize_nearest

__all__ = ["Split", "load_split", "list_pairs"]


class Split(NamedTuple):
    images: np.ndarray  # N x 3 x H x W
    masks: np.ndarray  # N x H x W
    names: list[str]


def _index(d: Path) -> dict[str, Path]:
    if not d.is_dir():
        raise FileNotFoundError(f"missing directory {d}")
    return {p.stem: p for p in sorted(d.iterdir()) if p.suffix.lower() in imageio.IMAGE_SUFFIXES}


def list_pairs(split_dir: str | os.PathLike) -> list[tuple[str, Path, Path]]:
    root = Path(split_dir)
    images, masks = _index(root / "images"), _index(root / "masks")
    if not images:
        raise FileNotFoundError(f"no images in {root / 'images'}")
    for stem in sorted(images):
        if stem not in masks:
            raise FileNotFoundError(f"no mask for {images[stem]} (expected {root / 'masks' / stem}.*)")
    return [(stem, images[stem], masks[stem]) for stem in sorted(images)]


def _resize_image(img: np.ndarray, size: int) -> np.ndarray:
    if img.shape[1:] == (size, size):
        return img
    mh, mw = bilinear_matrix(img.shape[1], size), bilinear_matrix(img.shape[2], size)
    return np.clip(np.einsum("ah,chw,bw->cab", mh, img, mw), 0.0, 1.0)


def load_split(split_dir: str | os.PathLike, size: Optional[int] = None) -> Split:
    """Load every pair; with ``size`` set, resize to ``size x size``."""
    names, images, masks = [], [], []
    for stem, ip, mp in list_pairs(split_dir):
        img, mask = imageio.read_rgb(ip), imageio.read_mask(mp)
        if size is not None:
            img = _resize_image(img, size)
            mask = resize_nearest(mask, size, size)
        elif img.shape[1:] != mask.shape:
            raise ValueError(f"{ip} is {img.shape[1:]} but its mask is {mask.shape}")
        names.append(stem)
        images.append(img)
        masks.append(mask)
    shapes = {m.shape for m in masks}
    if len(shapes) > 1:
        raise ValueError(f"mixed image sizes in {split_dir}: {sorted(shapes)}; pass a size to resize")
    return Split(np.stack(images), np.stack(masks).astype(np.uint8), names)
