"""Texture-aware camouflaged object detection at desk scale.

A numpy reverse-mode autodiff core drives a small encoder/decoder whose
decoder levels carry texture-aware refinement modules, trained on seeded
synthetic camouflage scenes and scored with the standard COD metrics.
"""

from .config import RunConfig, load_config
from .metrics import MetricReport, e_measure, mae, s_measure, weighted_fbeta
from .network import NetworkConfig, TANet, variant_config
from .synth import gen_dataset, gen_sample
from .tensor import Tensor, no_grad

__version__ = "0.1.0"

__all__ = [
    "MetricReport",
    "NetworkConfig",
    "RunConfig",
    "TANet",
    "Tensor",
    "e_measure",
    "gen_dataset",
    "gen_sample",
    "load_config",
    "mae",
    "no_grad",
    "s_measure",
    "variant_config",
    "weighted_fbeta",
]
