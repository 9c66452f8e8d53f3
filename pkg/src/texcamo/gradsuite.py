"""The finite-difference suite run by ``texcamo gradcheck``.

Small per-operation checks, then every parameter of a micro TANet (two
stages, one TARM, 3 x 32 x 32 input) under the full training objective:
segmentation, affinity and boundary terms. The micro network's final TARM
conv is randomly initialized so the modulation path carries gradient.
"""

from __future__ import annotations

import time
from typing import Callable, NamedTuple

import numpy as np

from . import functional as F
from .gradcheck import finite_diff_check
from .losses import affinity_loss, boundary_consistency_loss, cosine_affinity, majority_pool, seg_loss, tarm_losses, total_loss
from .network import NetworkConfig, TANet
from .synth import gen_blob_mask
from .tarm import init_conv
from .tensor import Tensor

__all__ = ["CheckResult", "MICRO_CONFIG", "micro_network_check", "op_checks", "run_suite"]

MICRO_CONFIG = NetworkConfig(
    stage_channels=(4, 6),
    input_size=32,
    num_tarm_levels=1,
    decoder_channels=4,
    tarm_branches=2,
    tarm_c1=3,
    seed=0,
)


class CheckResult(NamedTuple):
    name: str
    error: float
    n_params: int
    seconds: float


def _leaf(rng, *shape, scale=1.0):
    return Tensor(rng.normal(0.0, scale, size=shape), requires_grad=True)


def op_checks(seed: int = 0) -> dict[str, tuple[Callable[[], Tensor], list[Tensor]]]:
    rng = np.random.default_rng(seed)
    x, w, b = _leaf(rng, 1, 2, 6, 6), _leaf(rng, 3, 2, 3, 3), _leaf(rng, 3)
    p = _leaf(rng, 1, 2, 6, 6)
    u = _leaf(rng, 1, 2, 3, 3)
    s = _leaf(rng, 1, 3, 4, 4)
    z = _leaf(rng, 1, 1, 5, 5, scale=3.0)
    y = (rng.random((1, 1, 5, 5)) < 0.5).astype(float)
    h = _leaf(rng, 1, 4, 6, 6)
    mask = (rng.random((1, 6, 6)) < 0.4).astype(int)
    e = _leaf(rng, 1, 3, 6, 6)
    emask = (rng.random((1, 6, 6)) < 0.5).astype(int)

    def stats():
        mu, sd = F.channel_stats(s)
        return (mu * sd).sum() + sd.square().sum()

    def affinity():
        pooled = F.adaptive_avg_pool2d(h, 3)
        return affinity_loss(cosine_affinity(pooled.reshape((1, 4, 9))), majority_pool(mask, 3).reshape(1, 9))

    return {
        "conv2d": (lambda: F.conv2d(x, w, b, stride=2, padding=1).square().sum(), [x, w, b]),
        "pool2d": (lambda: F.pool2d(p, "max", 2, 2).square().sum() + F.pool2d(p, "avg", 3, 3).square().sum(), [p]),
        "upsample_bilinear": (lambda: F.upsample_bilinear(u, 7, 8).square().sum(), [u]),
        "channel_stats": (stats, [s]),
        "bce_with_logits": (lambda: F.bce_with_logits(z, y), [z]),
        "affinity_loss": (affinity, [h]),
        "boundary_consistency_loss": (lambda: boundary_consistency_loss(e, emask, 3), [e]),
    }


def micro_network_check(seed: int = 0) -> tuple[float, int]:
    """Max relative error over every parameter of the micro network."""
    model = TANet(MICRO_CONFIG)
    prefix = f"dec{MICRO_CONFIG.refined_stages[0]}.tarm."
    init_conv(model.params, prefix + "out", MICRO_CONFIG.decoder_channels, MICRO_CONFIG.decoder_channels, 3, seed + 1)
    rng = np.random.default_rng(seed)
    for p in model.params.values():  # lift the zero biases so no relu sits exactly on its kink
        if p.name and p.name.endswith(".b"):
            p.data[:] = rng.normal(0.0, 0.1, p.shape)
    image = Tensor(rng.random((1, 3, 32, 32)))
    mask = gen_blob_mask(seed, 32, 32)[None]

    def objective():
        logits, maps = model(image)
        seg, _ = seg_loss(logits, mask)
        # the training normalization keeps the objective O(1); with raw sums (~1e4) rounding
        # in the central differences swamps the smallest gradient entries
        aff, edge = tarm_losses(maps, mask, grid=4, patch=4, use_bcl=True, reduction="pairs")
        return total_loss(seg, aff, edge)

    params = model.parameters()
    return finite_diff_check(objective, params), sum(p.size for p in params)


def run_suite(seed: int = 0, log: Callable[[str], None] = lambda s: None) -> list[CheckResult]:
    results = []
    for name, (f, params) in op_checks(seed).items():
        t0 = time.perf_counter()
        err = finite_diff_check(f, params)
        results.append(CheckResult(name, err, sum(p.size for p in params), time.perf_counter() - t0))
        log(f"{name:<28} max_rel_err={err:.3e}")
    t0 = time.perf_counter()
    err, n = micro_network_check(seed)
    results.append(CheckResult("micro_tanet", err, n, time.perf_counter() - t0))
    log(f"{'micro_tanet':<28} max_rel_err={err:.3e} params={n} seconds={results[-1].seconds:.1f}")
    return results
