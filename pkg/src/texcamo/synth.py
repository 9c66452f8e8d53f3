"""Procedural camouflage samples.

Foreground and background are both amplitude-modulated sinusoidal gratings;
they differ only in orientation and wavelength. After compositing, the
foreground region is renormalized so its per-channel mean and standard
deviation match the background, leaving texture as the only cue.

Randomness comes from numpy's Philox4x64-10 counter-based generator, keyed by
``(stream << 64) | seed``. The stream ids used here are the ``_S_*`` constants
below; any implementation of the same keying regenerates identical draws.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterator, NamedTuple, Sequence

import numpy as np
from scipy import ndimage, signal

from . import imageio

__all__ = [
    "TextureParams",
    "CamoSample",
    "philox",
    "gen_texture",
    "gen_blob_mask",
    "gen_sample",
    "gen_dataset",
    "orientation_gap",
    "wavelength_factor",
    "TEST_SEED_OFFSET",
    "best_threshold_iou",
    "gabor_energy",
    "gabor_oracle_iou",
]

TEST_SEED_OFFSET = 1_000_000
TEXTURE_STD = 0.12
AREA_MIN, AREA_MAX = 0.05, 0.45

_S_NOISE, _S_PHASE, _S_BLOB, _S_AREA, _S_SCENE, _S_DIFF = 1, 2, 3, 4, 5, 6


def philox(seed: int, stream: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=(int(stream) << 64) | int(seed)))


@dataclass(frozen=True)
class TextureParams:
    orientation: float
    wavelength: float
    noise_scale: float
    base_gray: float
    seed: int

    def __post_init__(self):
        if self.wavelength < 2:
            raise ValueError(f"wavelength must be >= 2 pixels, got {self.wavelength}")
        if not 0.2 <= self.base_gray <= 0.8:
            raise ValueError(f"base_gray must lie in [0.2, 0.8], got {self.base_gray}")


class CamoSample(NamedTuple):
    image: np.ndarray  # 3 x H x W in [0, 1]
    mask: np.ndarray  # H x W, {0, 1}
    sample_seed: int
    difficulty: float


def gen_texture(params: TextureParams, h: int, w: int) -> np.ndarray:
    """Oriented band-pass field with mean ``base_gray`` and std ``TEXTURE_STD`` (before clipping)."""
    noise = philox(params.seed, _S_NOISE).standard_normal((h, w))
    noise = ndimage.gaussian_filter(noise, sigma=max(params.wavelength / 2.0, 1.0), mode="wrap")
    noise /= noise.std() + 1e-12
    phase = philox(params.seed, _S_PHASE).uniform(0.0, 2.0 * np.pi)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    u = (xx * np.cos(params.orientation) + yy * np.sin(params.orientation)) * (2.0 * np.pi / params.wavelength)
    field = (1.0 + params.noise_scale * noise) * np.sin(u + phase)
    field = (field - field.mean()) / (field.std() + 1e-12)
    return np.clip(params.base_gray + TEXTURE_STD * field, 0.0, 1.0)


def _largest_component(binary: np.ndarray) -> np.ndarray:
    labels, n = ndimage.label(binary)  # default structure is 4-connected
    if n == 0:
        return binary
    sizes = np.bincount(labels.ravel())[1:]
    return labels == (1 + int(np.argmax(sizes)))


def gen_blob_mask(seed: int, h: int, w: int, *, _max_retries: int = 20) -> np.ndarray:
    """Single 4-connected blob covering 5%..45% of the frame (target drawn from 8%..25%).

    The threshold is bisected so the largest component lands within 0.02 of
    the target area. If 50 steps do not get there, the seed is bumped by one.
    """
    for attempt in range(_max_retries):
        s = seed + attempt
        target = philox(s, _S_AREA).uniform(0.08, 0.25)
        field = ndimage.gaussian_filter(philox(s, _S_BLOB).standard_normal((h, w)), sigma=min(h, w) / 8.0, mode="reflect")
        # soft centre bias keeps the blob away from the frame
        yy, xx = np.mgrid[0:h, 0:w]
        r2 = ((yy - (h - 1) / 2) / h) ** 2 + ((xx - (w - 1) / 2) / w) ** 2
        field = field / (field.std() + 1e-12) - 4.0 * r2
        lo, hi = float(field.min()), float(field.max())
        for _ in range(50):
            t = 0.5 * (lo + hi)
            blob = ndimage.binary_fill_holes(_largest_component(field > t))
            frac = blob.mean()
            if abs(frac - target) <= 0.02 and AREA_MIN <= frac <= AREA_MAX:
                return blob.astype(np.uint8)
            if frac > target:
                lo = t
            else:
                hi = t
    raise RuntimeError(f"blob bisection failed for seeds {seed}..{seed + _max_retries - 1}")


def orientation_gap(difficulty: float) -> float:
    """90 degrees at difficulty 0 down to 15 degrees at difficulty 1."""
    return (1.0 - difficulty) * (np.pi / 2) + difficulty * (np.pi / 12)


def wavelength_factor(difficulty: float) -> float:
    return 2.0 + (1.2 - 2.0) * difficulty


def scene_params(seed: int, difficulty: float) -> tuple[TextureParams, TextureParams, np.ndarray]:
    """Background params, foreground params and per-channel tint for one sample."""
    rng = philox(seed, _S_SCENE)
    bg = TextureParams(
        orientation=float(rng.uniform(0.0, np.pi)),
        wavelength=float(rng.uniform(4.0, 6.0)),
        noise_scale=float(rng.uniform(0.2, 0.5)),
        base_gray=float(rng.uniform(0.3, 0.7)),
        seed=int(seed),
    )
    sign = 1.0 if rng.random() < 0.5 else -1.0
    tint = rng.uniform(-0.08, 0.08, size=3)
    fg = replace(
        bg,
        orientation=(bg.orientation + sign * orientation_gap(difficulty)) % np.pi,
        wavelength=bg.wavelength * wavelength_factor(difficulty),
        seed=int(seed) + (1 << 40),
    )
    return bg, fg, tint


def gen_sample(seed: int, difficulty: float, h: int = 64, w: int = 64) -> CamoSample:
    if not 0.0 <= difficulty <= 1.0:
        raise ValueError(f"difficulty must lie in [0, 1], got {difficulty}")
    bg_p, fg_p, tint = scene_params(seed, difficulty)
    mask = gen_blob_mask(seed, h, w)
    bg = gen_texture(bg_p, h, w)
    fg = gen_texture(fg_p, h, w)
    # 1-pixel feather: soft alpha only on the ring where the 3x3 box mean is fractional
    alpha = ndimage.uniform_filter(mask.astype(np.float64), size=3, mode="nearest")
    alpha = np.where(mask == 1, np.maximum(alpha, 0.5), np.minimum(alpha, 0.5))
    gray = alpha * fg + (1.0 - alpha) * bg
    inside, outside = mask == 1, mask == 0
    gray[inside] = (gray[inside] - gray[inside].mean()) / (gray[inside].std() + 1e-12) * gray[outside].std() + gray[outside].mean()
    image = np.clip(gray[None] * (1.0 + tint[:, None, None]), 0.0, 1.0)
    return CamoSample(image, mask, int(seed), float(difficulty))


def _difficulties(root_seed: int, n: int, lo: float, hi: float, stream_offset: int) -> np.ndarray:
    return philox(root_seed + stream_offset, _S_DIFF).uniform(lo, hi, size=n)


def iter_split(root_seed: int, n: int, h: int, w: int, difficulty_range: Sequence[float], test: bool) -> Iterator[CamoSample]:
    offset = TEST_SEED_OFFSET if test else 0
    diffs = _difficulties(root_seed, n, difficulty_range[0], difficulty_range[1], offset)
    for i in range(n):
        yield gen_sample(root_seed + offset + i, float(diffs[i]), h, w)


def gen_dataset(
    out_dir: str | os.PathLike,
    root_seed: int = 0,
    n_train: int = 200,
    n_test: int = 50,
    h: int = 64,
    w: int = 64,
    difficulty_range: Sequence[float] = (0.0, 1.0),
) -> Path:
    """Write ``train/`` and ``test/`` splits plus ``manifest.txt``; returns the manifest path.

    Layout: ``<split>/images/<name>.png`` (RGB) and ``<split>/masks/<name>.png``
    (0/255 grayscale). Manifest lines: ``<split>/<name>.png <seed> <difficulty>``.
    """
    root = Path(out_dir)
    lines = [f"# texcamo synthetic camouflage set root_seed={root_seed} size={h}x{w} range={difficulty_range[0]}:{difficulty_range[1]}"]
    for split, n, test in (("train", n_train, False), ("test", n_test, True)):
        img_dir, mask_dir = root / split / "images", root / split / "masks"
        try:
            img_dir.mkdir(parents=True, exist_ok=True)
            mask_dir.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise OSError(f"cannot create dataset directory {img_dir}: {exc}") from exc
        for i, sample in enumerate(iter_split(root_seed, n, h, w, difficulty_range, test)):
            name = f"{i:05d}.png"
            imageio.write_rgb(img_dir / name, sample.image)
            imageio.write_mask(mask_dir / name, sample.mask)
            lines.append(f"{split}/{name} {sample.sample_seed} {sample.difficulty:.17g}")
    manifest = root / "manifest.txt"
    manifest.write_text("\n".join(lines) + "\n")
    return manifest


# ------------------------------------------------------------ sanity checks
def _iou(a: np.ndarray, b: np.ndarray) -> float:
    union = np.logical_or(a, b).sum()
    return float(np.logical_and(a, b).sum() / union) if union else 1.0


def best_threshold_iou(image: np.ndarray, mask: np.ndarray) -> float:
    """Foreground IoU of the best single intensity threshold on the grayscale image.

    Both polarities (``gray > t`` and ``gray < t``) and every cut between
    distinct sorted values are tried, so this is an upper bound on what a
    first-order classifier can do on this image.
    """
    gray = np.asarray(image, dtype=np.float64).reshape(-1, *np.shape(mask)).mean(axis=0).ravel()
    fg = np.asarray(mask).ravel().astype(bool)
    n_fg = int(fg.sum())
    order = np.argsort(gray, kind="stable")
    g_sorted, fg_sorted = gray[order], fg[order]
    # cut k: the k lowest pixels predicted one way, the rest the other way
    cuts = np.concatenate([[0], np.flatnonzero(np.diff(g_sorted) > 0) + 1, [gray.size]])
    fg_below = np.concatenate([[0], np.cumsum(fg_sorted)])[cuts]
    below = cuts
    above = gray.size - cuts
    fg_above = n_fg - fg_below
    iou_low = fg_below / np.maximum(below + n_fg - fg_below, 1)  # predict fg below the cut
    iou_high = fg_above / np.maximum(above + n_fg - fg_above, 1)  # predict fg above the cut
    return float(max(iou_low.max(), iou_high.max()))


def gabor_energy(gray: np.ndarray, orientation: float, wavelength: float, smooth: float = 2.0) -> np.ndarray:
    """Smoothed magnitude of a complex Gabor response (envelope sigma = wavelength / 2)."""
    sigma = 0.5 * wavelength
    half = int(np.ceil(3 * sigma))
    yy, xx = np.mgrid[-half : half + 1, -half : half + 1].astype(np.float64)
    u = xx * np.cos(orientation) + yy * np.sin(orientation)
    env = np.exp(-(xx**2 + yy**2) / (2 * sigma**2))
    kernel = env / env.sum() * np.exp(2j * np.pi * u / wavelength)
    padded = np.pad(gray, half, mode="reflect")
    response = signal.fftconvolve(padded, kernel[::-1, ::-1], mode="valid")
    return ndimage.gaussian_filter(np.abs(response), smooth)


def gabor_oracle_iou(sample: CamoSample) -> float:
    """IoU of an oracle that knows both generating gratings and picks the stronger response per pixel."""
    bg, fg, _ = scene_params(sample.sample_seed, sample.difficulty)
    gray = sample.image.mean(axis=0)
    gray = gray - gray.mean()
    pred = gabor_energy(gray, fg.orientation, fg.wavelength) > gabor_energy(gray, bg.orientation, bg.wavelength)
    return _iou(pred, sample.mask.astype(bool))
