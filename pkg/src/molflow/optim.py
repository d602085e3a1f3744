"""Adam with global-norm gradient clipping, plus the shared training config."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    batch: int = 4
    clip_len: int = 512
    iterations: int = 2000
    mc_samples: int = 1
    power_loss_weight: float = 1.0
    seed: int = 0
    grad_clip: float = 10.0

    def __post_init__(self):
        for name in ("batch", "clip_len", "iterations", "mc_samples"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.lr < 0 or self.power_loss_weight < 0 or self.grad_clip <= 0:
            raise ValueError("lr and power_loss_weight must be non-negative, grad_clip positive")


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, n):
        return cls(np.zeros(n), np.zeros(n), 0)

    def extras(self):
        return {"adam_m": self.m, "adam_v": self.v}


class Adam:
    def __init__(self, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8, clip_norm=10.0):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.clip_norm = clip_norm

    def update(self, params, grad, state: AdamState):
        """Return (new params, new state, pre-clip gradient norm)."""
        norm = float(np.sqrt(np.dot(grad, grad)))
        if self.clip_norm is not None and norm > self.clip_norm:
            grad = grad * (self.clip_norm / norm)
        t = state.t + 1
        m = self.beta1 * state.m + (1.0 - self.beta1) * grad
        v = self.beta2 * state.v + (1.0 - self.beta2) * grad * grad
        m_hat = m / (1.0 - self.beta1 ** t)
        v_hat = v / (1.0 - self.beta2 ** t)
        new = params - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
        return new, AdamState(m, v, t), norm
