"""SGD-with-momentum and Adam updates plus the step learning-rate schedule.

One optimizer instance owns every learnable tensor of a run (encoder
weights, reciprocal points, margins, prototypes) and applies a single
learning rate to all of them.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


def lr_schedule(epoch: int, base_lr: float, drop_every: int = 30, factor: float = 0.1) -> float:
    """base_lr * factor^(epoch // drop_every)."""
    if epoch < 0:
        raise ContractError(f"epoch must be >= 0, got {epoch}")
    return base_lr * factor ** (epoch // drop_every)


class SGD:
    """v <- mu*v + g; w <- w - lr*v."""

    def __init__(self, params, lr, momentum=0.9):
        self.params = list(params)  # (name, tensor)
        self.lr = float(lr)
        self.momentum = float(momentum)
        self.velocity = {name: np.zeros_like(t.data) for name, t in self.params}

    def step(self):
        for name, t in self.params:
            if t.grad is None or t.grad.shape != t.data.shape:
                raise ContractError(f"parameter '{name}' has no matching gradient")
            v = self.velocity[name]
            v *= self.momentum
            v += t.grad
            t.data -= self.lr * v

    def zero_grad(self):
        for _, t in self.params:
            t.zero_grad()


class Adam:
    """Standard bias-corrected Adam."""

    def __init__(self, params, lr, beta1=ADAM_BETA1, beta2=ADAM_BETA2, eps=ADAM_EPS):
        self.params = list(params)
        self.lr = float(lr)
        self.beta1, self.beta2, self.eps = float(beta1), float(beta2), float(eps)
        self.t = 0
        self.m = {name: np.zeros_like(t.data) for name, t in self.params}
        self.v = {name: np.zeros_like(t.data) for name, t in self.params}

    def step(self):
        self.t += 1
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        for name, t in self.params:
            if t.grad is None or t.grad.shape != t.data.shape:
                raise ContractError(f"parameter '{name}' has no matching gradient")
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * t.grad
            v *= self.beta2
            v += (1.0 - self.beta2) * t.grad * t.grad
            t.data -= self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)

    def zero_grad(self):
        for _, t in self.params:
            t.zero_grad()


def make_optimizer(kind, params, lr, momentum=0.9):
    if kind == "sgd":
        return SGD(params, lr, momentum=momentum)
    if kind == "adam":
        return Adam(params, lr)
    raise ContractError(f"unknown optimizer '{kind}'")
