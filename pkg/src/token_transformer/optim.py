"""AdamW with decoupled weight decay and a warm-up + cosine learning-rate schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

NO_DECAY_SUFFIXES = ("cls_token", "rel_bias", "cls_bias")


def decays(name: str, shape: tuple) -> bool:
    """Weight decay applies to matrices and kernels only: not to biases, norms, CLS or bias tables."""
    return len(shape) > 1 and not name.endswith(NO_DECAY_SUFFIXES)


@dataclass
class CosineSchedule:
    base_lr: float
    total_steps: int
    warmup_steps: int = 0
    min_lr: float = 0.0

    @classmethod
    def with_warmup_fraction(cls, base_lr: float, total_steps: int, fraction: float = 0.05, min_lr: float = 0.0):
        return cls(base_lr, total_steps, int(round(fraction * total_steps)), min_lr)

    def __call__(self, step: int) -> float:
        """Learning rate for 0-based ``step``."""
        if step < self.warmup_steps:
            return self.base_lr * (step + 1) / self.warmup_steps
        span = max(1, self.total_steps - self.warmup_steps)
        progress = min(1.0, (step - self.warmup_steps) / span)
        return self.min_lr + 0.5 * (self.base_lr - self.min_lr) * (1.0 + math.cos(math.pi * progress))


@dataclass
class OptimState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


class AdamW:
    """Adam moments with decay applied as ``p -= lr * wd * p`` (decoupled, lr-scaled)."""

    def __init__(self, named_params, lr: float = 1e-4, weight_decay: float = 0.05,
                 betas=(0.9, 0.999), eps: float = 1e-8, state: OptimState | None = None):
        self.params = dict(named_params)
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.state = state or OptimState()
        for name, p in self.params.items():
            self.state.m.setdefault(name, np.zeros_like(p.data))
            self.state.v.setdefault(name, np.zeros_like(p.data))

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def step(self, lr: float | None = None):
        lr = self.lr if lr is None else lr
        st = self.state
        st.step += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** st.step
        c2 = 1.0 - b2 ** st.step
        for name, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad
            m, v = st.m[name], st.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            if self.weight_decay and decays(name, p.shape):
                p.data *= 1.0 - lr * self.weight_decay
            p.data -= (lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.data.dtype)
