"""Adam with decoupled weight decay.

Decay is applied as a multiplicative shrink ``p *= 1 - lr * wd`` before the
moment-based update, so it never leaks into the running moments:

    m_t = b1 * m_{t-1} + (1 - b1) * g
    v_t = b2 * v_{t-1} + (1 - b2) * g^2
    p  -= lr * (m_t / (1 - b1^t)) / (sqrt(v_t / (1 - b2^t)) + eps)
"""
from __future__ import annotations

import numpy as np

from ..mask import ValidationError
from .tensor import Tensor


class Adam:
    def __init__(
        self,
        params: list[tuple[str, Tensor]],
        learning_rate: float,
        weight_decay: float = 0.0,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ) -> None:
        if learning_rate <= 0:
            raise ValidationError(f"learning rate must be positive, got {learning_rate}")
        if weight_decay < 0:
            raise ValidationError(f"weight decay must be non-negative, got {weight_decay}")
        if not (0 <= beta1 < 1 and 0 <= beta2 < 1):
            raise ValidationError(f"betas must lie in [0, 1), got {beta1}, {beta2}")
        self.params = list(params)
        self.lr = learning_rate
        self.weight_decay = weight_decay
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self._m = [np.zeros_like(t.data) for _, t in self.params]
        self._v = [np.zeros_like(t.data) for _, t in self.params]

    def step(self) -> None:
        """Apply one update using each parameter's accumulated gradient."""
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1**t
        bc2 = 1.0 - self.beta2**t
        shrink = 1.0 - self.lr * self.weight_decay
        for (name, p), m, v in zip(self.params, self._m, self._v):
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            if self.weight_decay:
                p.data *= shrink
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def zero_grad(self) -> None:
        for _, p in self.params:
            p.zero_grad()
