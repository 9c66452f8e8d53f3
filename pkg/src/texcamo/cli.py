"""Command-line entry point: ``texcamo {gen,train,infer,eval,score,gradcheck}``.

Settings come from a ``key = value`` config file (the bundled desk config by
default), then ``--set key=value`` overrides, then dedicated flags such as
``--seed`` or ``--no-tarm``; later sources win.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import os
import shutil
import sys
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import imageio
from .checkpoint import CheckpointError
from .config import ConfigError, RunConfig, load_config, parse_value
from .experiment import TrainResult, eval_run, load_model, predict_image, train_run
from .gradsuite import CheckResult, run_suite
from .metrics import MetricReport, evaluate_dataset
from .synth import gen_dataset
from .train import NumericalError

__all__ = ["main", "build_parser", "resolve_config", "cmd_gen", "cmd_train", "cmd_infer", "cmd_eval", "cmd_score", "cmd_gradcheck"]

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3
GRADCHECK_TOLERANCE = 1e-4


class UsageError(Exception):
    pass


class RefusedError(FileExistsError):
    """Output exists and ``--force`` was not given."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit 2, which is our data-error code
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _nothing(_: str) -> None:
    pass


# ------------------------------------------------------------ commands
def cmd_gen(cfg: RunConfig, force: bool = False, out: Optional[str] = None) -> Path:
    """Write the synthetic benchmark; refuses to touch an existing one unless ``force``."""
    root = Path(out or cfg.data_dir)
    existing = [root / p for p in ("manifest.txt", "train", "test") if (root / p).exists()]
    if existing and not force:
        raise RefusedError(f"{root} already holds a dataset ({existing[0].name}); pass --force to regenerate")
    for p in existing:  # stale files from a larger earlier run would otherwise linger
        shutil.rmtree(p) if p.is_dir() else p.unlink()
    h = w = cfg.input_size
    return gen_dataset(root, cfg.seed, cfg.n_train, cfg.n_test, h, w, cfg.difficulty_range)


def cmd_train(cfg: RunConfig, force: bool = False, out: Optional[str] = None, log: Callable[[str], None] = _nothing) -> TrainResult:
    run = Path(out or cfg.output_dir)
    if (run / "manifest.txt").exists() and not force:
        raise RefusedError(f"{run} already holds a training run; pass --force to overwrite")
    if force and run.is_dir():
        for p in run.glob("epoch_*.ckpt"):
            p.unlink()
    cfg = cfg.updated(output_dir=os.fspath(run))
    return train_run(cfg, run, log=log)


def cmd_infer(checkpoint: str, image_path: str, out_path: str, cfg: Optional[RunConfig] = None) -> np.ndarray:
    """Probability map for one image, written as 8-bit grayscale at the image's resolution."""
    model, cfg = load_model(checkpoint, cfg)
    image = imageio.read_rgb(image_path)
    prob = predict_image(model, image, cfg.input_size)
    Path(out_path).parent.mkdir(parents=True, exist_ok=True)
    imageio.write_gray(out_path, prob)
    return prob


def _report_out(report: MetricReport, out_dir: Path, label: str, verbose: bool, emit: Callable[[str], None]) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    report.write_csv(out_dir / "metrics.csv")
    table = report.table(label, verbose=verbose)
    (out_dir / "report.txt").write_text(table + "\n")
    emit(table)
    emit(f"report written to {out_dir / 'metrics.csv'}")


def cmd_eval(
    checkpoint: str,
    data_dir: str,
    out: Optional[str] = None,
    cfg: Optional[RunConfig] = None,
    verbose: bool = False,
    emit: Callable[[str], None] = _nothing,
) -> MetricReport:
    """Infer over ``<data_dir>/test`` and score against its masks."""
    out_dir = Path(out) if out else Path(checkpoint).parent / "eval"
    report = eval_run(checkpoint, data_dir, out_dir, cfg)
    label = cfg.variant if cfg else load_model(checkpoint)[1].variant
    _report_out(report, out_dir, label, verbose, emit)
    return report


def cmd_score(pred_dir: str, gt_dir: str, out: Optional[str] = None, verbose: bool = False, emit: Callable[[str], None] = _nothing) -> MetricReport:
    report = evaluate_dataset(pred_dir, gt_dir)
    _report_out(report, Path(out) if out else Path(pred_dir).parent, "score", verbose, emit)
    return report


def cmd_gradcheck(seed: int = 0, emit: Callable[[str], None] = _nothing) -> list[CheckResult]:
    results = run_suite(seed, log=emit)
    emit(f"max relative error {max(r.error for r in results):.3e} (tolerance {GRADCHECK_TOLERANCE:g})")
    return results


# ------------------------------------------------------------ argument handling
def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="key = value config file (default: bundled desk config)")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key; repeatable")
    common.add_argument("--seed", type=int, help="seed for data generation, initialization and shuffling")
    common.add_argument("--verbose", "-v", action="store_true")

    parser = _Parser(prog="texcamo", description="Texture-aware camouflaged object detection on a numpy autodiff core.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen", parents=[common], help="write the synthetic camouflage benchmark")
    p.add_argument("--out", help="dataset directory (default: data_dir)")
    p.add_argument("--force", action="store_true", help="replace an existing dataset")

    p = sub.add_parser("train", parents=[common], help="train a network variant")
    p.add_argument("--data", help="dataset directory (default: data_dir)")
    p.add_argument("--out", help="run directory (default: output_dir)")
    p.add_argument("--force", action="store_true", help="overwrite an existing run")
    p.add_argument("--no-rrb", action="store_true", help="drop the residual refinement blocks")
    p.add_argument("--no-tarm", action="store_true", help="drop the texture-aware refinement modules")
    p.add_argument("--no-bcl", action="store_true", help="drop the boundary-consistency loss")

    p = sub.add_parser("infer", parents=[common], help="predict a mask for one image")
    p.add_argument("checkpoint")
    p.add_argument("image")
    p.add_argument("output")

    p = sub.add_parser("eval", parents=[common], help="predict and score a dataset's test split")
    p.add_argument("checkpoint")
    p.add_argument("--data", help="dataset directory (default: data_dir)")
    p.add_argument("--out", help="where predictions and the report go (default: <run>/eval)")

    p = sub.add_parser("score", parents=[common], help="score a directory of predictions")
    p.add_argument("pred_dir")
    p.add_argument("gt_dir")
    p.add_argument("--out", help="report directory (default: parent of pred_dir)")

    sub.add_parser("gradcheck", parents=[common], help="run the finite-difference gradient suite")
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    overrides = {}
    for item in args.set:
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        key, raw = item.split("=", 1)
        overrides[key.strip()] = parse_value(key.strip(), raw)
    if args.seed is not None:
        overrides["seed"] = args.seed
    for flag, key in (("no_rrb", "use_rrb"), ("no_tarm", "use_tarm"), ("no_bcl", "use_bcl")):
        if getattr(args, flag, False):
            overrides[key] = False
    if getattr(args, "data", None):
        overrides["data_dir"] = args.data
    return load_config(args.config, overrides)


def _dispatch(args: argparse.Namespace) -> int:
    def emit(line: str) -> None:
        print(line, flush=True)

    def log(line: str) -> None:
        if args.verbose:
            print(line, file=sys.stderr, flush=True)

    cfg = resolve_config(args)
    if args.command == "gen":
        print(cmd_gen(cfg, args.force, args.out))
    elif args.command == "train":
        result = cmd_train(cfg, args.force, args.out, log)
        if result.error:
            print(f"training aborted: {result.error}", file=sys.stderr)
            return EXIT_NUMERICAL
        print(result.final_checkpoint)
    elif args.command == "infer":
        cmd_infer(args.checkpoint, args.image, args.output)
        print(args.output)
    elif args.command == "eval":
        cmd_eval(args.checkpoint, cfg.data_dir, args.out, verbose=args.verbose, emit=emit)
    elif args.command == "score":
        cmd_score(args.pred_dir, args.gt_dir, args.out, args.verbose, emit)
    elif args.command == "gradcheck":
        results = cmd_gradcheck(cfg.seed, emit)
        if not max(r.error for r in results) <= GRADCHECK_TOLERANCE:
            return EXIT_NUMERICAL
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _dispatch(args)
    except (UsageError, ConfigError) as exc:
        print(f"texcamo: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalError, FloatingPointError) as exc:
        print(f"texcamo: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (OSError, KeyError, CheckpointError, ValueError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"texcamo: data error: {msg}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
