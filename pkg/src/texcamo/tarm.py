"""Texture-aware refinement module.

Pipeline for an input feature map ``f_in`` (N x C x H x W):

1. K independent 1x1 projections to C1 channels each;
2. per-pixel outer product ``f f^T`` of every projection, kept as its upper
   triangle (D = C1*(C1+1)/2 channels, row-major ``i <= j`` order);
3. concatenation of the K descriptor maps and one 3x3 fusion conv;
4. two 3x3 -> relu -> 3x3 stacks giving the scale map ``gamma`` and shift map
   ``beta`` (C' channels each);
5. ``f_out = conv3x3(gamma * (f' - mu) / sigma + beta) + f_in`` where ``f'`` is a
   3x3 conv of ``f_in`` and ``mu``/``sigma`` are its per-channel statistics.

The last conv starts at zero, so a freshly built module is the identity.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass
from typing import Mapping, NamedTuple, Optional, Sequence

import numpy as np

from .functional import channel_stats, conv2d
from .tensor import ShapeError, Tensor, add, concat, div, make_result, mul, relu, sub

__all__ = [
    "TarmConfig",
    "ParamMaps",
    "Tarm",
    "triu_pairs",
    "project_branches",
    "pixel_covariance",
    "fuse_texture",
    "param_maps",
    "modulate",
    "tarm_forward",
    "init_conv",
    "param_rng",
]


def param_rng(seed: int, name: str) -> np.random.Generator:
    """Generator keyed on (seed, parameter name).

    Keying on the name keeps every parameter's initial value independent of
    which other parameters exist, so ablation variants share their weights.
    """
    return np.random.default_rng([seed, zlib.crc32(name.encode("utf-8"))])


def init_conv(
    params: dict[str, Tensor],
    name: str,
    c_out: int,
    c_in: int,
    k: int,
    seed: int,
    zero: bool = False,
    bias: bool = True,
) -> None:
    """Add ``name.w`` (He-normal) and, unless ``bias=False``, ``name.b`` (zeros) to ``params``."""
    if zero:
        w = np.zeros((c_out, c_in, k, k))
    else:
        std = np.sqrt(2.0 / (c_in * k * k))
        w = param_rng(seed, name + ".w").normal(0.0, std, size=(c_out, c_in, k, k))
    params[name + ".w"] = Tensor(w, requires_grad=True, name=name + ".w")
    if bias:
        params[name + ".b"] = Tensor(np.zeros(c_out), requires_grad=True, name=name + ".b")


@dataclass(frozen=True)
class TarmConfig:
    """Channel layout of one module.

    ``c_prime`` and ``c_texture`` default to ``c_in``. ``c_texture`` is the
    width of the fused texture map and of the hidden layer of each
    parameter-map stack.
    """

    c_in: int
    k_branches: int = 4
    c1: int = 8
    c_prime: Optional[int] = None
    c_texture: Optional[int] = None
    eps: float = 1e-5
    normalize_texture: bool = True

    def __post_init__(self):
        if self.c1 < 1 or self.k_branches < 1 or self.c_in < 1:
            raise ValueError(f"invalid TarmConfig {self}")
        if self.eps <= 0:
            raise ValueError("eps must be positive")

    @property
    def descriptor_len(self) -> int:
        return self.c1 * (self.c1 + 1) // 2

    @property
    def cp(self) -> int:
        return self.c_in if self.c_prime is None else self.c_prime

    @property
    def ct(self) -> int:
        return self.c_in if self.c_texture is None else self.c_texture


class ParamMaps(NamedTuple):
    gamma: Tensor
    beta: Tensor


def triu_pairs(c1: int) -> tuple[np.ndarray, np.ndarray]:
    """Row-major upper-triangle index pairs ``(i, j)``, ``i <= j``."""
    rows, cols = np.triu_indices(c1)
    return rows, cols


def project_branches(f_in: Tensor, weights: Sequence[tuple[Tensor, Optional[Tensor]]]) -> list[Tensor]:
    if len(weights) < 1:
        raise ValueError("project_branches needs at least one branch")
    out = []
    for w, b in weights:
        if w.shape[2:] != (1, 1):
            raise ShapeError(f"branch projections are 1x1 convs, got kernel {w.shape[2:]}")
        out.append(conv2d(f_in, w, b))
    return out


def pixel_covariance(branch: Tensor) -> Tensor:
    """Upper triangle of ``f_m f_m^T`` at every pixel: N x C1 x H x W -> N x D x H x W."""
    if branch.ndim != 4:
        raise ShapeError(f"pixel_covariance: expected N x C1 x H x W, got {branch.shape}")
    c1 = branch.shape[1]
    rows, cols = triu_pairs(c1)
    f = branch.data
    fi, fj = f[:, rows], f[:, cols]
    # one-hot scatter matrices D x C1 for the backward pass
    sel_i = np.zeros((rows.size, c1))
    sel_i[np.arange(rows.size), rows] = 1.0
    sel_j = np.zeros((rows.size, c1))
    sel_j[np.arange(rows.size), cols] = 1.0

    def bw(g):
        return (np.einsum("dc,ndhw->nchw", sel_i, g * fj) + np.einsum("dc,ndhw->nchw", sel_j, g * fi),)

    return make_result(fi * fj, (branch,), bw, "pixel_cov")


def fuse_texture(descriptors: Sequence[Tensor], weight: Tensor, bias: Optional[Tensor]) -> Tensor:
    ref = descriptors[0].shape
    for d in descriptors[1:]:
        if d.shape != ref:
            raise ShapeError(f"fuse_texture: descriptor maps {ref} and {d.shape} differ")
    stacked = concat(list(descriptors), axis=1) if len(descriptors) > 1 else descriptors[0]
    return conv2d(stacked, weight, bias, padding=1)


def _conv(x: Tensor, weights: Mapping[str, Tensor], name: str, padding: int = 1) -> Tensor:
    return conv2d(x, weights[name + ".w"], weights.get(name + ".b"), padding=padding)


def param_maps(texture: Tensor, weights: Mapping[str, Tensor]) -> ParamMaps:
    """Scale and shift maps from two separate 3x3 -> relu -> 3x3 stacks."""
    gamma = _conv(relu(_conv(texture, weights, "gamma1")), weights, "gamma2")
    beta = _conv(relu(_conv(texture, weights, "beta1")), weights, "beta2")
    return ParamMaps(gamma, beta)


def modulate(f_in: Tensor, maps: ParamMaps, weights: Mapping[str, Tensor], eps: float = 1e-5) -> Tensor:
    f_prime = _conv(f_in, weights, "pre")
    gamma, beta = maps
    if gamma.shape != f_prime.shape or beta.shape != f_prime.shape:
        raise ShapeError(f"modulate: gamma {gamma.shape} / beta {beta.shape} vs f' {f_prime.shape}")
    mu, sigma = channel_stats(f_prime, eps)
    normalized = div(sub(f_prime, mu), sigma)
    modulated = add(mul(gamma, normalized), beta)
    return add(_conv(modulated, weights, "out"), f_in)


def tarm_forward(f_in: Tensor, config: TarmConfig, weights: Mapping[str, Tensor]) -> tuple[Tensor, ParamMaps]:
    if f_in.shape[1] != config.c_in:
        raise ShapeError(f"tarm: input has {f_in.shape[1]} channels, config says {config.c_in}")
    branch_w = [(weights[f"branch{k}.w"], weights.get(f"branch{k}.b")) for k in range(config.k_branches)]
    branches = project_branches(f_in, branch_w)
    descriptors = [pixel_covariance(b) for b in branches]
    texture = fuse_texture(descriptors, weights["fuse.w"], weights.get("fuse.b"))
    if config.normalize_texture:
        # descriptors are quadratic in f_in; without this, gamma/beta grow with the square of the feature scale
        mu, sigma = channel_stats(texture, config.eps)
        texture = div(sub(texture, mu), sigma)
    maps = param_maps(texture, weights)
    return modulate(f_in, maps, weights, config.eps), maps


def init_tarm_params(config: TarmConfig, seed: int, prefix: str = "", zero_out: bool = True) -> dict[str, Tensor]:
    p: dict[str, Tensor] = {}
    c, c1, ct, cp = config.c_in, config.c1, config.ct, config.cp
    for k in range(config.k_branches):
        init_conv(p, f"{prefix}branch{k}", c1, c, 1, seed)
    init_conv(p, f"{prefix}fuse", ct, config.k_branches * config.descriptor_len, 3, seed, bias=not config.normalize_texture)
    for stack in ("gamma", "beta"):
        init_conv(p, f"{prefix}{stack}1", ct, ct, 3, seed)
        init_conv(p, f"{prefix}{stack}2", cp, ct, 3, seed)
    # no bias: instance normalization would cancel it (its gradient is identically zero)
    init_conv(p, f"{prefix}pre", cp, c, 3, seed, bias=False)
    init_conv(p, f"{prefix}out", c, cp, 3, seed, zero=zero_out)
    return p


class Tarm:
    """A module instance: config plus its own named parameters."""

    def __init__(self, config: TarmConfig, seed: int = 0, prefix: str = "", zero_out: bool = True):
        self.config = config
        self.prefix = prefix
        self.params = init_tarm_params(config, seed, prefix, zero_out)

    def weights(self) -> dict[str, Tensor]:
        n = len(self.prefix)
        return {k[n:]: v for k, v in self.params.items()}

    def __call__(self, f_in: Tensor) -> tuple[Tensor, ParamMaps]:
        return tarm_forward(f_in, self.config, self.weights())
