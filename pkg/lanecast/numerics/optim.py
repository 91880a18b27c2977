"""Plain gradient descent with multiplicative per-step learning-rate decay."""

import logging
import math
from typing import List, Sequence

import numpy as np

from lanecast.errors import ConfigError, MissingGradient
from lanecast.numerics.tensor import Tensor

logger = logging.getLogger(__name__)


class SGD:
    """
    p <- p - lr * grad, then lr <- lr * decay and grads are cleared.

    ``grad_clip`` > 0 rescales the gradients so their global L2 norm does not
    exceed it; 0 leaves them untouched.
    """

    def __init__(self, params: Sequence[Tensor], learning_rate: float = 0.0005, decay: float = 0.9999,
                 grad_clip: float = 0.0):
        if learning_rate <= 0:
            raise ConfigError("learning_rate must be > 0")
        if not 0.0 < decay <= 1.0:
            raise ConfigError("decay must lie in (0, 1]")
        self.params: List[Tensor] = list(params)
        self.learning_rate = float(learning_rate)
        self.decay = float(decay)
        self.grad_clip = float(grad_clip)
        self.step_count = 0

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def global_grad_norm(self) -> float:
        return math.sqrt(sum(float(np.sum(p.grad ** 2)) for p in self.params if p.grad is not None))

    def step(self) -> None:
        missing = [p.name or f"param[{i}]" for i, p in enumerate(self.params) if p.grad is None]
        if missing:
            raise MissingGradient(f"{len(missing)} parameter(s) without gradient, e.g. {missing[0]}")

        scale = 1.0
        if self.grad_clip > 0:
            norm = self.global_grad_norm()
            if norm > self.grad_clip:
                scale = self.grad_clip / norm
                logger.debug("Clipping gradient norm %.4f to %.4f", norm, self.grad_clip)

        for p in self.params:
            grad = p.grad if scale == 1.0 else p.grad * scale
            p.values = p.values - self.learning_rate * grad
            p.grad = None

        self.learning_rate *= self.decay
        self.step_count += 1
