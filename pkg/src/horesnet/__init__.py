"""Residual networks whose blocks follow explicit Runge-Kutta tableaux."""

from .network import HONetwork, NetworkShape, build, load_checkpoint, param_count, save_checkpoint
from .schemes import TABLEAUS, Block, DivergenceError, StepScale, Tableau, get_tableau
from .tensor import Tensor, no_grad
from .training import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "Block", "DivergenceError", "HONetwork", "NetworkShape", "StepScale", "TABLEAUS", "Tableau", "Tensor",
    "TrainConfig", "build", "get_tableau", "load_checkpoint", "no_grad", "param_count", "save_checkpoint",
    "train",
]
