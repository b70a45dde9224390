"""AdamW with decoupled weight decay.

Weight decay is applied directly to the parameters, never through the moment
estimates, so decay and the adaptive step stay independent.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor


class OptimizerError(RuntimeError):
    pass


class AdamW:
    def __init__(
        self,
        params: list[Tensor],
        lr: float = 0.01,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        weight_decay: float = 0.01,
    ):
        if not 0.0 < beta1 < 1.0 or not 0.0 < beta2 < 1.0:
            raise ValueError("betas must lie strictly between 0 and 1")
        if eps <= 0.0:
            raise ValueError("eps must be positive")
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> None:
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1**t
        bc2 = 1.0 - self.beta2**t
        for i, p in enumerate(self.params):
            if p.grad is None:
                raise OptimizerError(
                    f"missing gradient for parameter {p.name or i}"
                )
            g = p.grad
            if not np.all(np.isfinite(g)):
                raise OptimizerError(
                    f"non-finite gradient for parameter {p.name or i}"
                )
            self.m[i] += (1.0 - self.beta1) * (g - self.m[i])
            self.v[i] += (1.0 - self.beta2) * (g * g - self.v[i])
            m_hat = self.m[i] / bc1
            v_hat = self.v[i] / bc2
            if self.weight_decay:
                p.data -= self.lr * self.weight_decay * p.data
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
