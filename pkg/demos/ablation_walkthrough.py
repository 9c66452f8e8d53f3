"""
Training the ablation variants
==============================

Generates the benchmark, trains the full network and the two ablations
(without the boundary loss; without the refinement modules at all) and
scores each on the test split, all through the command-line functions.

A full pass is 5 epochs per variant, about 3 minutes each on one core. Pass
``--quick`` for a one-epoch smoke run.

Run with ``python demos/ablation_walkthrough.py [--quick] [work_dir]``.
"""

import sys
from pathlib import Path

from texcamo import cli

args = [a for a in sys.argv[1:] if a != "--quick"]
quick = "--quick" in sys.argv
work = Path(args[0] if args else "demo_ablation")
extra = ["--set", "epochs=1"] if quick else []

# %%
# The dataset: 200 training and 50 test scenes at 64 x 64, seed 0.
data = work / "data"
if not (data / "manifest.txt").exists():
    cli.main(["gen", "--out", str(data)])

# %%
# One run per variant. The flags mirror the ablation table: dropping the
# boundary loss gives M3, dropping the refinement modules gives M2.
variants = {"full": [], "M3": ["--no-bcl"], "M2": ["--no-tarm", "--no-bcl"]}
for name, flags in variants.items():
    run = work / name
    code = cli.main(["train", "--data", str(data), "--out", str(run), "--force", *flags, *extra])
    if code != 0:
        sys.exit(code)

# %%
# Score each run. ``eval`` writes predictions, metrics.csv and report.txt
# under the run directory and prints one table row.
for name in variants:
    cli.main(["eval", str(work / name / "final.ckpt"), "--data", str(data), "--out", str(work / name / "eval")])
