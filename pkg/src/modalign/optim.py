"""AdamW with decoupled weight decay and the warmup + cosine-annealing
learning-rate schedule used for all training loops."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError, TrainingError
from .tensor import Tensor


@dataclass
class LrSchedule:
    """Linear warmup to lr_max, cosine decay to lr_min, then hold lr_min."""
    lr_max: float = 8e-4
    lr_min: float = 3.0398e-6
    warmup_epochs: int = 34
    t_max: int = 33

    def __post_init__(self):
        if not 0 < self.lr_min < self.lr_max:
            raise ParameterError(f"need 0 < lr_min < lr_max, got {self.lr_min}, {self.lr_max}")
        if self.warmup_epochs < 0 or self.t_max < 1:
            raise ParameterError("warmup_epochs must be >= 0 and t_max >= 1")


def lr_at(epoch: int, s: LrSchedule) -> float:
    """Learning rate for a 0-based epoch index."""
    if epoch < s.warmup_epochs:
        return s.lr_max * ((epoch + 1) / s.warmup_epochs)
    t = epoch - s.warmup_epochs
    if t >= s.t_max:
        return s.lr_min
    return s.lr_min + 0.5 * (s.lr_max - s.lr_min) * (1.0 + math.cos(math.pi * t / s.t_max))


class AdamW:
    """Decoupled-weight-decay Adam over a name -> Tensor parameter table."""

    def __init__(self, params: dict[str, Tensor], beta1=0.9, beta2=0.999,
                 epsilon=1e-8, weight_decay=0.01):
        self.params = dict(params)
        self.beta1, self.beta2 = beta1, beta2
        self.epsilon = epsilon
        self.weight_decay = weight_decay
        self.step_count = 0
        self.m = {n: np.zeros_like(p.data) for n, p in self.params.items()}
        self.v = {n: np.zeros_like(p.data) for n, p in self.params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self, lr: float):
        """One AdamW update; parameters without a gradient are only decayed."""
        if lr <= 0:
            raise ParameterError(f"learning rate must be positive, got {lr}")
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.step_count
        bc2 = 1.0 - b2 ** self.step_count
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            if not np.all(np.isfinite(g)):
                raise TrainingError(f"non-finite gradient for parameter {name!r}")
            m = self.m[name] = b1 * self.m[name] + (1.0 - b1) * g
            v = self.v[name] = b2 * self.v[name] + (1.0 - b2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + self.epsilon)
            p.data = (p.data - lr * update - lr * self.weight_decay * p.data).astype(p.data.dtype)
