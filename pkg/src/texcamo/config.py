"""Run configuration: typed settings read from ``key = value`` files.

Values are parsed according to the field's type. Tuples are comma separated;
booleans accept true/false/yes/no/1/0; ``none`` clears an optional field.
``#`` starts a comment.
"""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, fields, replace
from importlib import resources
from typing import Any, Mapping, Optional, get_args, get_origin, get_type_hints

from .losses import DEFAULT_LAMBDAS
from .network import NetworkConfig
from .train import LossConfig, TrainState

__all__ = ["RunConfig", "ConfigError", "parse_config_text", "load_config", "default_config", "BUNDLED_CONFIG"]

BUNDLED_CONFIG = "desk.cfg"


class ConfigError(ValueError):
    """Unknown key or unparsable value."""


@dataclass(frozen=True)
class RunConfig:
    # data
    data_dir: str = "data/camo"
    output_dir: str = "runs/default"
    n_train: int = 200
    n_test: int = 50
    difficulty_range: tuple[float, float] = (0.0, 1.0)
    # network
    input_size: int = 64
    stage_channels: tuple[int, ...] = (16, 32, 64, 64)
    num_tarm_levels: int = 3
    decoder_channels: int = 32
    tarm_branches: int = 4
    tarm_c1: int = 8
    normalize_texture: bool = True
    use_rrb: bool = True
    use_tarm: bool = True
    # losses
    use_bcl: bool = True
    lambdas: tuple[float, float, float] = DEFAULT_LAMBDAS
    affinity_grid: int = 16
    patch_size: int = 4
    loss_reduction: str = "pairs"
    # optimisation (paper values; the bundled desk config overrides some)
    epochs: int = 30
    batch_size: int = 16
    base_lr: float = 1e-3
    power: float = 0.9
    momentum: float = 0.9
    weight_decay: float = 5e-4
    clip_norm: Optional[float] = None
    hflip: bool = False  # random horizontal flip of training batches
    seed: int = 0

    def __post_init__(self):
        if len(self.lambdas) != 3:
            raise ConfigError(f"lambdas needs three values, got {self.lambdas}")
        if min(self.lambdas) < 0:
            raise ConfigError("lambdas must be non-negative")
        if len(self.difficulty_range) != 2 or not 0 <= self.difficulty_range[0] <= self.difficulty_range[1] <= 1:
            raise ConfigError(f"difficulty_range must satisfy 0 <= lo <= hi <= 1, got {self.difficulty_range}")
        for name in ("epochs", "batch_size", "n_train", "input_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.n_test < 0:
            raise ConfigError("n_test must be non-negative")
        if self.loss_reduction not in ("sum", "mean", "pairs"):
            raise ConfigError(f"loss_reduction must be sum, mean or pairs, got {self.loss_reduction!r}")

    # -- views used by the library ------------------------------------------
    def network(self) -> NetworkConfig:
        return NetworkConfig(
            stage_channels=self.stage_channels,
            input_size=self.input_size,
            num_tarm_levels=self.num_tarm_levels,
            decoder_channels=self.decoder_channels,
            use_rrb=self.use_rrb,
            use_tarm=self.use_tarm,
            tarm_branches=self.tarm_branches,
            tarm_c1=self.tarm_c1,
            normalize_texture=self.normalize_texture,
            seed=self.seed,
        )

    def loss(self) -> LossConfig:
        return LossConfig(
            lambdas=tuple(self.lambdas),
            affinity_grid=self.affinity_grid,
            patch_size=self.patch_size,
            use_bcl=self.use_bcl and self.use_tarm,
            reduction=self.loss_reduction,
        )

    def train_state(self, total_iterations: int) -> TrainState:
        return TrainState(
            total_iterations=total_iterations,
            base_lr=self.base_lr,
            power=self.power,
            momentum=self.momentum,
            weight_decay=self.weight_decay,
            clip_norm=self.clip_norm,
            rng_seed=self.seed,
        )

    @property
    def variant(self) -> str:
        if not self.use_tarm:
            return "M2" if self.use_rrb else "M1"
        if not self.use_rrb:
            return "custom"
        return "full" if self.use_bcl else "M3"

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(repr(x) if isinstance(x, float) else str(x) for x in v)
            elif isinstance(v, bool):
                v = "true" if v else "false"
            elif v is None:
                v = "none"
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"

    def updated(self, **changes: Any) -> "RunConfig":
        return replace(self, **changes)


_HINTS = get_type_hints(RunConfig)
FIELD_NAMES = tuple(f.name for f in fields(RunConfig))


def _parse_scalar(kind, raw: str, key: str):
    if kind is bool:
        low = raw.lower()
        if low in ("true", "yes", "1", "on"):
            return True
        if low in ("false", "no", "0", "off"):
            return False
        raise ConfigError(f"{key}: not a boolean: {raw!r}")
    try:
        return kind(raw)
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {kind.__name__}") from exc


def parse_value(key: str, raw: str):
    if key not in _HINTS:
        raise ConfigError(f"unknown config key {key!r}")
    kind = _HINTS[key]
    raw = raw.strip()
    if get_origin(kind) is Optional or (get_origin(kind) is not None and type(None) in get_args(kind)):
        if raw.lower() == "none":
            return None
        kind = next(a for a in get_args(kind) if a is not type(None))
    if get_origin(kind) is tuple:
        item = get_args(kind)[0]
        return tuple(_parse_scalar(item, part.strip(), key) for part in raw.split(",") if part.strip())
    return _parse_scalar(kind, raw, key)


def parse_config_text(text: str, source: str = "<config>") -> dict[str, Any]:
    out: dict[str, Any] = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{n}: expected key = value")
        key, raw = (s.strip() for s in line.split("=", 1))
        try:
            out[key] = parse_value(key, raw)
        except ConfigError as exc:
            raise ConfigError(f"{source}:{n}: {exc}") from None
    return out


def load_config(path: str | os.PathLike | None = None, overrides: Optional[Mapping[str, Any]] = None) -> RunConfig:
    """Defaults, then the bundled desk config (or ``path``), then ``overrides``."""
    if path is None:
        values = parse_config_text(resources.files("texcamo").joinpath(BUNDLED_CONFIG).read_text(), BUNDLED_CONFIG)
    else:
        try:
            text = open(path).read()
        except OSError as exc:
            raise FileNotFoundError(f"cannot read config {path}: {exc}") from exc
        values = parse_config_text(text, os.fspath(path))
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return RunConfig(**values)


def default_config() -> RunConfig:
    return load_config()


def as_dict(cfg: RunConfig) -> dict[str, Any]:
    return asdict(cfg)
