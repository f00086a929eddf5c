"""Parameter update rules and step learning-rate schedules."""

from __future__ import annotations

import bisect
from typing import Sequence

import numpy as np

from .errors import ConfigError
from .tensor import Parameter


class Optimizer:
    def __init__(self, params: Sequence[Parameter], lr: float):
        self.params = list(params)
        self.lr = lr

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> None:
        raise NotImplementedError


class SGD(Optimizer):
    """SGD with optional heavy-ball momentum and L2 weight decay."""

    def __init__(self, params, lr: float, momentum: float = 0.0, weight_decay: float = 0.0):
        super().__init__(params, lr)
        self.momentum = momentum
        self.weight_decay = weight_decay
        self._velocity = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        for p, v in zip(self.params, self._velocity):
            if p.grad is None:
                continue
            g = p.grad + self.weight_decay * p.data if self.weight_decay else p.grad
            if self.momentum:
                v *= self.momentum
                v += g
                g = v
            p.data -= (self.lr * g).astype(p.dtype, copy=False)


class Adam(Optimizer):
    def __init__(
        self,
        params,
        lr: float,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 0.0,
    ):
        super().__init__(params, lr)
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, m, v in zip(self.params, self._m, self._v):
            if p.grad is None:
                continue
            g = p.grad + self.weight_decay * p.data if self.weight_decay else p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = (self.lr / c1) * m / (np.sqrt(v / c2) + self.eps)
            p.data -= update.astype(p.dtype, copy=False)


def make_optimizer(name: str, params, lr: float, momentum: float = 0.9, weight_decay: float = 0.0) -> Optimizer:
    if name == "adam":
        return Adam(params, lr, weight_decay=weight_decay)
    if name == "sgd":
        return SGD(params, lr, momentum=momentum, weight_decay=weight_decay)
    raise ConfigError(f"unknown optimizer {name!r}; expected 'adam' or 'sgd'")


class MultiStepSchedule:
    """Learning rate divided by ``factor`` at each milestone epoch (0-based epoch count)."""

    def __init__(self, base_lr: float, milestones: Sequence[int], factor: float = 10.0):
        ms = list(milestones)
        if any(b <= a for a, b in zip(ms, ms[1:])):
            raise ConfigError(f"lr milestones must be strictly increasing, got {ms}")
        self.base_lr = base_lr
        self.milestones = ms
        self.factor = factor

    def lr_at(self, epoch: int) -> float:
        """Learning rate used during the epoch that starts after ``epoch`` completed epochs."""
        drops = bisect.bisect_right(self.milestones, epoch)
        return self.base_lr / self.factor**drops
