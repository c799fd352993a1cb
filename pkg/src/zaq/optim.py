"""Plain from-scratch optimizers over lists of parameter tensors."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from . import autodiff as ad
from .errors import ConfigError


class SGD:
    """SGD with classical momentum and L2 weight decay folded into the
    gradient: g <- g + wd * theta; v <- mu * v + g; theta <- theta - lr * v."""

    def __init__(self, params: Sequence[ad.Tensor], lr: float,
                 momentum: float = 0.9, weight_decay: float = 5e-4):
        if lr <= 0:
            raise ConfigError(f"learning rate must be positive, got {lr}")
        self.params = list(params)
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self._velocity = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        for p, v in zip(self.params, self._velocity):
            if p.grad is None:
                continue
            g = p.grad
            if self.weight_decay:
                g = g + p.data.dtype.type(self.weight_decay) * p.data
            v *= p.data.dtype.type(self.momentum)
            v += g
            p.data = p.data - p.data.dtype.type(self.lr) * v


class Adam:
    """Adam with standard bias correction."""

    def __init__(self, params: Sequence[ad.Tensor], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if lr <= 0:
            raise ConfigError(f"learning rate must be positive, got {lr}")
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1 ** t
        c2 = 1.0 - self.beta2 ** t
        for p, m, v in zip(self.params, self._m, self._v):
            if p.grad is None:
                continue
            g = p.grad
            dt = p.data.dtype.type
            m *= dt(self.beta1)
            m += dt(1 - self.beta1) * g
            v *= dt(self.beta2)
            v += dt(1 - self.beta2) * (g * g)
            m_hat = m / dt(c1)
            v_hat = v / dt(c2)
            p.data = p.data - dt(self.lr) * m_hat / (np.sqrt(v_hat) + dt(self.eps))
