"""RMSprop with a per-parameter running mean of squared gradients."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .autodiff import NonFiniteError, Tensor

__all__ = ["RmspropState", "rmsprop_step"]


@dataclass
class RmspropState:
    """Optimizer hyperparameters plus the v accumulator per parameter name.

    v starts at zeros and obeys v <- smoothing * v + (1 - smoothing) * g^2,
    so entries are always >= 0.
    """

    learning_rate: float = 0.001
    smoothing: float = 0.97
    epsilon: float = 1e-8
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def accumulator(self, name: str, shape: tuple[int, ...]) -> np.ndarray:
        acc = self.v.get(name)
        if acc is None:
            acc = np.zeros(shape, dtype=np.float64)
            self.v[name] = acc
        return acc


def rmsprop_step(
    params: Mapping[str, Tensor],
    grads: Mapping[str, np.ndarray],
    state: RmspropState,
) -> None:
    """Apply one RMSprop update in place.

    theta <- theta - lr * g / (sqrt(v) + eps) with v updated first.  All
    gradients are validated before any parameter is touched, so a non-finite
    gradient leaves both params and state unmodified.
    """
    for name, tensor in params.items():
        grad = grads.get(name)
        if grad is None:
            continue
        if grad.shape != tensor.data.shape:
            raise ValueError(f"gradient shape {grad.shape} != param shape {tensor.data.shape} for {name}")
        if grad.size and not math.isfinite(float(grad.sum())):
            raise NonFiniteError(f"non-finite gradient for parameter {name}")
    alpha = state.smoothing
    lr = state.learning_rate
    eps = state.epsilon
    for name, tensor in params.items():
        grad = grads.get(name)
        if grad is None:
            continue
        acc = state.accumulator(name, tensor.data.shape)
        acc *= alpha
        acc += (1.0 - alpha) * grad * grad
        tensor.data = tensor.data - lr * grad / (np.sqrt(acc) + eps)
