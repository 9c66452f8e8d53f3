"""Runs on disk: train a configured network, predict, and score.

A run directory contains::

    run.cfg            resolved RunConfig (key = value)
    epoch_000.ckpt     initial weights, so a last-good checkpoint always exists
    epoch_NNN.ckpt     weights after each epoch
    final.ckpt         copy of the last epoch's weights
    train.log          one loss line per step, one summary line per epoch
    manifest.txt       variant, seed, iteration count and checkpoint list

Nothing written depends on wall-clock time, so reruns with the same config
are byte-identical.
"""

from __future__ import annotations

import hashlib
import os
import shutil
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import imageio
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, parse_config_text
from .dataset import Split, load_split
from .functional import bilinear_matrix
from .metrics import MetricReport, evaluate_arrays, evaluate_dataset
from .network import TANet
from .synth import philox
from .train import train_step

__all__ = ["TrainResult", "train_run", "load_model", "predict_image", "predict_split", "eval_run"]

_S_SHUFFLE = 100
_S_FLIP = 200


@dataclass
class TrainResult:
    run_dir: Path
    final_checkpoint: Optional[Path]
    iterations: int
    last_losses: list[float]
    error: Optional[str] = None


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _save(model: TANet, path: Path) -> None:
    save_checkpoint(path, {k: v.data for k, v in model.params.items()})


def train_run(cfg: RunConfig, run_dir: str | os.PathLike, data: Optional[Split] = None, log: Callable[[str], None] = lambda s: None) -> TrainResult:
    """Train on ``<data_dir>/train`` for ``cfg.epochs`` epochs of seeded shuffles.

    On a non-finite loss or gradient the run stops, the newest checkpoint is
    kept and the result carries the diagnostic in ``error``.
    """
    run = Path(run_dir)
    run.mkdir(parents=True, exist_ok=True)
    if data is None:
        data = load_split(Path(cfg.data_dir) / "train", cfg.input_size)
    (run / "run.cfg").write_text(cfg.to_text())
    model = TANet(cfg.network())
    n = len(data.names)
    steps_per_epoch = -(-n // cfg.batch_size)
    state = cfg.train_state(cfg.epochs * steps_per_epoch)
    loss_cfg = cfg.loss()
    ckpts = ["epoch_000.ckpt"]
    _save(model, run / ckpts[0])
    lines: list[str] = []
    error = None
    epoch_losses: list[float] = []
    for epoch in range(1, cfg.epochs + 1):
        order = philox(cfg.seed, _S_SHUFFLE + epoch).permutation(n)
        flips = philox(cfg.seed, _S_FLIP + epoch).random(n) < 0.5 if cfg.hflip else np.zeros(n, bool)
        totals = []
        try:
            for b in range(steps_per_epoch):
                idx = np.sort(order[b * cfg.batch_size : (b + 1) * cfg.batch_size])
                lr = state.lr
                images, masks = data.images[idx], data.masks[idx]
                if flips[idx].any():
                    images, masks = images.copy(), masks.copy()
                    images[flips[idx]] = images[flips[idx]][..., ::-1]
                    masks[flips[idx]] = masks[flips[idx]][..., ::-1]
                report = train_step(model, images, masks, state, loss_cfg)
                line = report.log_line(state.iteration - 1, lr)
                lines.append(line)
                log(line)
                totals.append(report.total)
        except FloatingPointError as exc:  # NumericalError and non-finite logits
            error = f"epoch {epoch}: {exc}; last good checkpoint {ckpts[-1]}"
            lines.append("abort " + error)
            log("abort " + error)
            break
        epoch_losses.append(float(np.mean(totals)))
        summary = f"epoch={epoch} iteration={state.iteration} mean_total={epoch_losses[-1]:.10g}"
        lines.append(summary)
        log(summary)
        ckpts.append(f"epoch_{epoch:03d}.ckpt")
        _save(model, run / ckpts[-1])
    (run / "train.log").write_text("\n".join(lines) + "\n")
    final = None
    if error is None:
        final = run / "final.ckpt"
        shutil.copyfile(run / ckpts[-1], final)
        ckpts.append("final.ckpt")
    manifest = [f"variant {cfg.variant}", f"seed {cfg.seed}", f"iterations {state.iteration}", f"total_iterations {state.total_iterations}"]
    manifest += [f"checkpoint {c} sha256={_sha256(run / c)}" for c in ckpts]
    if error:
        manifest.append(f"error {error}")
    (run / "manifest.txt").write_text("\n".join(manifest) + "\n")
    return TrainResult(run, final, state.iteration, epoch_losses, error)


def load_model(checkpoint: str | os.PathLike, cfg: Optional[RunConfig] = None) -> tuple[TANet, RunConfig]:
    """Rebuild a network from a checkpoint and the ``run.cfg`` beside it (unless ``cfg`` is given)."""
    ckpt = Path(checkpoint)
    if cfg is None:
        cfg_path = ckpt.parent / "run.cfg"
        if not cfg_path.is_file():
            raise FileNotFoundError(f"no run.cfg next to {ckpt}; pass a config")
        cfg = RunConfig(**parse_config_text(cfg_path.read_text(), os.fspath(cfg_path)))
    model = TANet(cfg.network())
    model.load_arrays(load_checkpoint(ckpt))
    return model, cfg


def _resize(a: np.ndarray, h: int, w: int) -> np.ndarray:
    """Bilinear resize of the last two axes."""
    if a.shape[-2:] == (h, w):
        return a
    return np.einsum("ah,...hw,bw->...ab", bilinear_matrix(a.shape[-2], h), a, bilinear_matrix(a.shape[-1], w))


def predict_image(model: TANet, image: np.ndarray, size: int) -> np.ndarray:
    """Probability map at the image's own resolution."""
    h, w = image.shape[1:]
    prob = model.predict(np.clip(_resize(image, size, size), 0.0, 1.0)[None])[0]
    return np.clip(_resize(prob, h, w), 0.0, 1.0)


def predict_split(model: TANet, images: np.ndarray, chunk: int = 10) -> np.ndarray:
    return np.concatenate([model.predict(images[i : i + chunk]) for i in range(0, len(images), chunk)])


def eval_run(checkpoint: str | os.PathLike, data_dir: str | os.PathLike, out_dir: str | os.PathLike, cfg: Optional[RunConfig] = None) -> MetricReport:
    """Predict every test image, write 8-bit maps to ``out_dir/pred`` and score them against the masks."""
    model, cfg = load_model(checkpoint, cfg)
    split_dir = Path(data_dir) / "test"
    split = load_split(split_dir)
    pred_dir = Path(out_dir) / "pred"
    pred_dir.mkdir(parents=True, exist_ok=True)
    for name, image in zip(split.names, split.images):
        imageio.write_gray(pred_dir / f"{name}.png", predict_image(model, image, cfg.input_size))
    return evaluate_dataset(pred_dir, split_dir / "masks")


def eval_arrays(model: TANet, split: Split) -> MetricReport:
    """In-memory evaluation without the 8-bit round trip."""
    return evaluate_arrays(list(predict_split(model, split.images)), list(split.masks), split.names)
