"""8-bit image files (PNG and portable any-map) to and from float arrays."""

from __future__ import annotations

import os

import numpy as np
from PIL import Image

IMAGE_SUFFIXES = (".png", ".pgm", ".ppm", ".pnm", ".jpg", ".jpeg", ".bmp")


def _to_u8(a: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(a, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def write_rgb(path: str | os.PathLike, image: np.ndarray) -> None:
    """``image`` is 3 x H x W in [0, 1]."""
    Image.fromarray(_to_u8(np.transpose(image, (1, 2, 0))), mode="RGB").save(path)


def write_gray(path: str | os.PathLike, values: np.ndarray) -> None:
    """``values`` is H x W in [0, 1]; stored as 8-bit grayscale."""
    Image.fromarray(_to_u8(values), mode="L").save(path)


def write_mask(path: str | os.PathLike, mask: np.ndarray) -> None:
    Image.fromarray((np.asarray(mask) > 0).astype(np.uint8) * 255, mode="L").save(path)


def _open(path: str | os.PathLike) -> Image.Image:
    try:
        img = Image.open(path)
        img.load()
    except (OSError, ValueError) as exc:
        raise OSError(f"cannot read image {os.fspath(path)}: {exc}") from exc
    if img.width == 0 or img.height == 0:
        raise ValueError(f"empty image {os.fspath(path)}")
    return img


def read_rgb(path: str | os.PathLike) -> np.ndarray:
    """3 x H x W float64 in [0, 1]."""
    arr = np.asarray(_open(path).convert("RGB"), dtype=np.float64) / 255.0
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


def read_gray(path: str | os.PathLike) -> np.ndarray:
    """H x W float64 in [0, 1]."""
    return np.asarray(_open(path).convert("L"), dtype=np.float64) / 255.0


def read_mask(path: str | os.PathLike) -> np.ndarray:
    """Binary H x W mask; gray levels >= 128 are foreground."""
    return (np.asarray(_open(path).convert("L")) >= 128).astype(np.uint8)
