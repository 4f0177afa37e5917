"""RMSprop and the geometric learning-rate schedule."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .tensor import Tensor


@dataclass
class RMSprop:
    """acc <- rho*acc + (1-rho)*g^2 ; param <- param - lr*g/(sqrt(acc)+eps)"""

    params: Sequence[Tensor]
    learning_rate: float = 1e-3
    rho: float = 0.9
    epsilon: float = 1e-7
    accumulators: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        if not 0.0 < self.rho < 1.0:
            raise ValueError("rho must lie in (0, 1)")
        self.params = list(self.params)
        if not self.accumulators:
            self.accumulators = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        for p, acc in zip(self.params, self.accumulators):
            if p.grad is None:
                continue
            g = p.grad
            acc *= self.rho
            acc += (1.0 - self.rho) * g * g
            p.data -= self.learning_rate * g / (np.sqrt(acc) + self.epsilon)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()


def rmsprop_step(params, grads, accumulators, learning_rate=1e-3, rho=0.9, epsilon=1e-7):
    """Functional form: returns (new_params, new_accumulators) without mutating inputs."""
    new_params, new_acc = [], []
    for p, g, acc in zip(params, grads, accumulators):
        acc = rho * np.asarray(acc) + (1.0 - rho) * np.square(g)
        new_acc.append(acc)
        new_params.append(np.asarray(p) - learning_rate * np.asarray(g) / (np.sqrt(acc) + epsilon))
    return new_params, new_acc


def geometric_schedule(start: float, end: float, epochs: int) -> list[float]:
    """Per-epoch rates decaying geometrically from ``start`` to ``end`` inclusive."""
    if epochs <= 1:
        return [start]
    ratio = (end / start) ** (1.0 / (epochs - 1))
    return [start * ratio**e for e in range(epochs)]
