"""Decentralized learning simulator with gradient-tracking purification.

Benign clients keep per-neighbour records of aggregated tracking variables,
so a neighbour caught by the consistency detector can be removed from the
tracking state in one step instead of fading out.
"""
from .config import ExperimentConfig, parse_config, validate
from .detection import DetectionConfig, WeightRow, apply_latch, consistency_adjust, similarity_adjust
from .engine import EngineConfig, Hooks, Objective, Simulation, run
from .metrics import MetricsRecord
from .model import Batch, ModelSpec, eval_loss_grad, finite_diff_grad, predict
from .topology import Topology, build

__version__ = "0.1.0"

__all__ = [
    "Batch", "DetectionConfig", "EngineConfig", "ExperimentConfig", "Hooks", "MetricsRecord",
    "ModelSpec", "Objective", "Simulation", "Topology", "WeightRow", "apply_latch", "build",
    "consistency_adjust", "eval_loss_grad", "finite_diff_grad", "parse_config", "predict", "run",
    "similarity_adjust", "validate",
]
