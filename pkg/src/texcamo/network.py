"""Toy TANet: small encoder, top-down decoder with RRBs and TARMs, per-level heads.

Ablation variants are switches on one parameter namespace. A variant only
adds or removes parameters; shared parameters keep identical initial values
because every parameter draws from its own name-keyed generator.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from typing import Mapping, Optional, Sequence

import numpy as np

from .functional import conv2d, pool2d, upsample_bilinear
from .tarm import ParamMaps, TarmConfig, init_conv, init_tarm_params, tarm_forward
from .tensor import ShapeError, Tensor, add, relu, sigmoid, no_grad

__all__ = ["NetworkConfig", "TANet", "VARIANTS", "variant_config", "rrb", "encoder", "tanet_forward"]


@dataclass(frozen=True)
class NetworkConfig:
    stage_channels: tuple[int, ...] = (16, 32, 64, 64)
    input_size: int = 64
    num_tarm_levels: int = 3
    decoder_channels: int = 32
    use_rrb: bool = True
    use_tarm: bool = True
    tarm_branches: int = 4
    tarm_c1: int = 8
    tarm_texture_channels: Optional[int] = None
    normalize_texture: bool = True
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "stage_channels", tuple(int(c) for c in self.stage_channels))
        n = len(self.stage_channels)
        if not 1 <= self.num_tarm_levels <= n - 1:
            raise ValueError(f"num_tarm_levels must be in [1, {n - 1}] for {n} stages (first stage is never refined)")
        if self.input_size % (2**n):
            raise ValueError(f"input_size {self.input_size} not divisible by {2**n}")

    @property
    def refined_stages(self) -> list[int]:
        n = len(self.stage_channels)
        return list(range(n - self.num_tarm_levels, n))

    def tarm_config(self) -> TarmConfig:
        return TarmConfig(
            c_in=self.decoder_channels,
            k_branches=self.tarm_branches,
            c1=self.tarm_c1,
            c_texture=self.tarm_texture_channels,
            normalize_texture=self.normalize_texture,
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["stage_channels"] = list(self.stage_channels)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "NetworkConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


# Table 2 ladder. "use_bcl" is a loss switch and lives with the trainer.
VARIANTS = {
    "M1": dict(use_rrb=False, use_tarm=False, use_bcl=False),
    "M2": dict(use_rrb=True, use_tarm=False, use_bcl=False),
    "M3": dict(use_rrb=True, use_tarm=True, use_bcl=False),
    "full": dict(use_rrb=True, use_tarm=True, use_bcl=True),
}


def variant_config(name: str, base: NetworkConfig | None = None) -> tuple[NetworkConfig, bool]:
    """Network config and boundary-loss flag for an ablation row."""
    base = base or NetworkConfig()
    v = VARIANTS[name]
    d = base.to_dict()
    d.update(use_rrb=v["use_rrb"], use_tarm=v["use_tarm"])
    return NetworkConfig.from_dict(d), v["use_bcl"]


def _conv(x: Tensor, w: Mapping[str, Tensor], name: str, padding: int) -> Tensor:
    return conv2d(x, w[name + ".w"], w[name + ".b"], padding=padding)


def rrb(f: Tensor, weights: Mapping[str, Tensor], prefix: str) -> Tensor:
    """1x1 projection, then ``relu(p + conv3(relu(conv3(p))))``."""
    p = _conv(f, weights, prefix + "lat", 0)
    r = _conv(relu(_conv(p, weights, prefix + "rrb1", 1)), weights, prefix + "rrb2", 1)
    return relu(add(p, r))


def encoder(image: Tensor, weights: Mapping[str, Tensor], config: NetworkConfig) -> list[Tensor]:
    """Stage outputs at 1/2, 1/4, ... of the input resolution."""
    n = len(config.stage_channels)
    h, w = image.shape[2:]
    if h % (2**n) or w % (2**n):
        raise ShapeError(f"image {h}x{w} not divisible by {2**n}")
    feats = []
    x = image
    for i in range(n):
        x = relu(_conv(x, weights, f"enc{i}.conv1", 1))
        x = relu(_conv(x, weights, f"enc{i}.conv2", 1))
        x = pool2d(x, "max", 2, 2)
        feats.append(x)
    return feats


def tanet_forward(image: Tensor, weights: Mapping[str, Tensor], config: NetworkConfig) -> tuple[list[Tensor], list[ParamMaps]]:
    """Logits for every refined level (finest first) and each TARM's parameter maps (finest first)."""
    feats = encoder(image, weights, config)
    tcfg = config.tarm_config()
    logits: list[Tensor] = []
    maps: list[ParamMaps] = []
    prev: Optional[Tensor] = None
    for i in reversed(config.refined_stages):
        prefix = f"dec{i}."
        if config.use_rrb:
            x = rrb(feats[i], weights, prefix)
        else:
            x = _conv(feats[i], weights, prefix + "lat", 0)
        if prev is not None:
            x = add(x, upsample_bilinear(prev, x.shape[2], x.shape[3]))
        if config.use_tarm:
            tw = {k[len(prefix) + 5 :]: v for k, v in weights.items() if k.startswith(prefix + "tarm.")}
            x, pm = tarm_forward(x, tcfg, tw)
            maps.append(pm)
        logits.append(_conv(x, weights, prefix + "head", 0))
        prev = x
    return logits[::-1], maps[::-1]


def init_params(config: NetworkConfig) -> dict[str, Tensor]:
    p: dict[str, Tensor] = {}
    seed = config.seed
    c_prev = 3
    for i, c in enumerate(config.stage_channels):
        init_conv(p, f"enc{i}.conv1", c, c_prev, 3, seed)
        init_conv(p, f"enc{i}.conv2", c, c, 3, seed)
        c_prev = c
    d = config.decoder_channels
    tcfg = config.tarm_config()
    for i in config.refined_stages:
        init_conv(p, f"dec{i}.lat", d, config.stage_channels[i], 1, seed)
        if config.use_rrb:
            init_conv(p, f"dec{i}.rrb1", d, d, 3, seed)
            init_conv(p, f"dec{i}.rrb2", d, d, 3, seed)
        if config.use_tarm:
            p.update(init_tarm_params(tcfg, seed, prefix=f"dec{i}.tarm."))
        init_conv(p, f"dec{i}.head", 1, d, 1, seed)
    return p


class TANet:
    def __init__(self, config: NetworkConfig, params: Optional[dict[str, Tensor]] = None):
        self.config = config
        self.params = init_params(config) if params is None else params

    def __call__(self, image: Tensor | np.ndarray) -> tuple[list[Tensor], list[ParamMaps]]:
        if not isinstance(image, Tensor):
            image = Tensor(image)
        if image.ndim == 3:
            image = image.reshape((1,) + image.shape)
        return tanet_forward(image, self.params, self.config)

    def parameters(self) -> list[Tensor]:
        return [self.params[k] for k in sorted(self.params)]

    def load_arrays(self, arrays: Mapping[str, np.ndarray]) -> None:
        missing = set(self.params) - set(arrays)
        extra = set(arrays) - set(self.params)
        if missing or extra:
            raise KeyError(f"checkpoint mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for k, v in arrays.items():
            if v.shape != self.params[k].shape:
                raise ShapeError(f"{k}: checkpoint shape {v.shape} != model shape {self.params[k].shape}")
            self.params[k] = Tensor(v.copy(), requires_grad=True, name=k)

    def predict(self, images: np.ndarray) -> np.ndarray:
        """Probability maps N x H x W: sigmoid of the finest logits upsampled to the input size."""
        images = np.asarray(images, dtype=np.float64)
        if images.ndim == 3:
            images = images[None]
        with no_grad():
            logits, _ = self(Tensor(images))
            up = upsample_bilinear(logits[0], images.shape[2], images.shape[3])
            return sigmoid(up).data[:, 0]
