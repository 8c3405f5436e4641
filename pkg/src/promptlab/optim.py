"""First-order optimizers over :class:`~promptlab.autograd.Tensor` leaves."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .autograd import Tensor
from .errors import FrozenModelError, InvalidParameterError


class Optimizer:
    def __init__(self, params: Sequence[Tensor], lr: float):
        if lr <= 0:
            raise InvalidParameterError(f"learning rate must be positive, got {lr}")
        params = list(params)
        for p in params:
            if not p.requires_grad:
                raise FrozenModelError(f"parameter {p!r} is frozen and cannot be optimized")
        self.params = params
        self.lr = lr

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        for i, p in enumerate(self.params):
            if not p.requires_grad:
                raise FrozenModelError("parameter was frozen after the optimizer was built")
            if p.grad is not None:
                self._update(i, p)

    def _update(self, i: int, p: Tensor) -> None:
        raise NotImplementedError


class SGD(Optimizer):
    def _update(self, i, p):
        p.data -= self.lr * p.grad


class Adam(Optimizer):
    def __init__(self, params, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8, weight_decay: float = 0.0):
        super().__init__(params, lr)
        self.b1, self.b2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self) -> None:
        self.t += 1
        super().step()

    def _update(self, i, p):
        g = p.grad
        if self.weight_decay:
            g = g + self.weight_decay * p.data
        self.m[i] = self.b1 * self.m[i] + (1 - self.b1) * g
        self.v[i] = self.b2 * self.v[i] + (1 - self.b2) * g * g
        mhat = self.m[i] / (1 - self.b1**self.t)
        vhat = self.v[i] / (1 - self.b2**self.t)
        p.data -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


def make_optimizer(name: str, params, lr: float) -> Optimizer:
    if name == "sgd":
        return SGD(params, lr)
    if name == "adam":
        return Adam(params, lr)
    raise InvalidParameterError(f"unknown optimizer {name!r}")
