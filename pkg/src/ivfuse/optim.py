"""Trainable parameters and the AdamW update rule.

A ``Parameter`` owns a gradient-tracking tensor plus its first/second moment
accumulators and a per-parameter step counter, so checkpoints can restore the
optimizer mid-run exactly.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor

ADAMW_BETAS = (0.9, 0.999)
ADAMW_EPS = 1e-8
ADAMW_WEIGHT_DECAY = 0.01


class Parameter:
    """Named leaf tensor with optimizer state."""

    __slots__ = ("name", "tensor", "m", "v", "step")

    def __init__(self, name: str, data):
        self.name = name
        self.tensor = Tensor(data, requires_grad=True)
        self.m = np.zeros_like(self.tensor.data)
        self.v = np.zeros_like(self.tensor.data)
        self.step = 0

    @property
    def data(self) -> np.ndarray:
        return self.tensor.data

    @data.setter
    def data(self, value: np.ndarray) -> None:
        if value.shape != self.tensor.data.shape:
            raise ValueError(f"parameter {self.name}: shape {value.shape} != {self.tensor.data.shape}")
        self.tensor.data = np.ascontiguousarray(value, dtype=np.float64)

    @property
    def grad(self):
        return self.tensor.grad

    @property
    def shape(self) -> tuple:
        return self.tensor.data.shape

    def zero_grad(self) -> None:
        self.tensor.grad = None

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape}, step={self.step})"


def adamw_step(params, lr: float, betas=ADAMW_BETAS, eps: float = ADAMW_EPS,
               weight_decay: float = ADAMW_WEIGHT_DECAY) -> None:
    """One decoupled-weight-decay Adam step over ``params``.

    Decay is applied to the incoming parameter value before the moment
    update is subtracted; gradients are left untouched for the caller to
    zero. Every parameter must have a populated gradient.
    """
    b1, b2 = betas
    for p in params:
        if p.grad is None:
            raise ValueError(f"adamw_step: parameter {p.name!r} has no gradient")
    for p in params:
        g = p.grad
        p.step += 1
        t = p.step
        p.m = b1 * p.m + (1.0 - b1) * g
        p.v = b2 * p.v + (1.0 - b2) * (g * g)
        mhat = p.m / (1.0 - b1 ** t)
        vhat = p.v / (1.0 - b2 ** t)
        new = p.data * (1.0 - lr * weight_decay)
        new -= lr * mhat / (np.sqrt(vhat) + eps)
        p.tensor.data = new


def zero_grads(params) -> None:
    for p in params:
        p.zero_grad()
