"""Entropy-based stability-plasticity for class-incremental learning.

Per-block branch classifiers measure how uncertain each encoder block's
features are; the resulting plasticity factors scale each block's gradients.
Replay, fixed-factor, online EWC and SI baselines share the same training
loop.
"""

__version__ = "0.1.0"

from .continual import TrainSettings, evaluate, run_sequence
from .data import GaussianSpec, TabularFile, generate_gaussian_stream, load_tabular_stream
from .network import BlockNetwork, backward, backward_partial, forward
from .plasticity import BranchSet, esp_step, fit_branches, plasticity_factors

__all__ = [
    "BlockNetwork",
    "BranchSet",
    "GaussianSpec",
    "TabularFile",
    "TrainSettings",
    "backward",
    "backward_partial",
    "esp_step",
    "evaluate",
    "fit_branches",
    "forward",
    "generate_gaussian_stream",
    "load_tabular_stream",
    "plasticity_factors",
    "run_sequence",
]
