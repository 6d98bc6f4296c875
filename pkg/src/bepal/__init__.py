"""Belief-based predictive auxiliary learning for communicating multi-agent RL."""

from .autodiff import Tape, Tensor
from .gridworld import EnvConfig, PredatorPreyEnv
from .model import BepalParams
from .optim import RmspropState
from .runio import VERSION, RunConfig
from .training import TrainConfig

__version__ = VERSION

__all__ = [
    "Tape",
    "Tensor",
    "EnvConfig",
    "PredatorPreyEnv",
    "BepalParams",
    "RmspropState",
    "RunConfig",
    "TrainConfig",
    "__version__",
]
