"""Adam with bias correction, operating on tensor ``grad`` buffers."""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .autograd import Tensor
from .errors import GradientError


class Adam:
    """Standard Adam: first/second moment estimates with bias correction,
    update = lr * m_hat / (sqrt(v_hat) + eps). Deterministic given the same
    parameter and gradient sequence."""

    def __init__(
        self,
        params: Sequence[Tensor],
        learning_rate: float = 0.001,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.params = list(params)
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        self.step_count += 1
        bc1 = 1.0 - math.pow(self.beta1, self.step_count)
        bc2 = 1.0 - math.pow(self.beta2, self.step_count)
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                raise GradientError("parameter is missing its gradient; run backward first")
            g = p.grad
            m[:] = self.beta1 * m + (1.0 - self.beta1) * g
            v[:] = self.beta2 * v + (1.0 - self.beta2) * (g * g)
            m_hat = m / bc1
            v_hat = v / bc2
            p.data -= self.learning_rate * m_hat / (np.sqrt(v_hat) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None
