"""Hierarchical hybrid-action soft actor-critic: primitive choice plus parameters."""

from .action import ParamSpace, HybridAction
from .sac import HybridSAC, TrainingDiverged
from .buffer import ReplayBuffer

__all__ = ["ParamSpace", "HybridAction", "HybridSAC", "TrainingDiverged", "ReplayBuffer"]
