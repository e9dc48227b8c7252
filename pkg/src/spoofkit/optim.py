"""Adam with classic L2 weight decay, and the halving step schedule."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor

BASE_LR = 3e-4


@dataclass(frozen=True)
class AdamConfig:
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-9
    weight_decay: float = 1e-4


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    @classmethod
    def for_params(cls, params: dict[str, Tensor]) -> "AdamState":
        return cls(
            m={k: np.zeros_like(p.data) for k, p in params.items()},
            v={k: np.zeros_like(p.data) for k, p in params.items()},
        )


def adam_step(
    params: dict[str, Tensor],
    state: AdamState,
    lr: float,
    cfg: AdamConfig = AdamConfig(),
) -> None:
    """One bias-corrected Adam update; weight decay enters as g += wd*w."""
    state.step += 1
    bc1 = 1.0 - cfg.beta1**state.step
    bc2 = 1.0 - cfg.beta2**state.step
    for name, p in params.items():
        grad = p.grad if p.grad is not None else np.zeros_like(p.data)
        grad = grad + cfg.weight_decay * p.data
        m = state.m[name]
        v = state.v[name]
        m += (1.0 - cfg.beta1) * (grad - m)
        v += (1.0 - cfg.beta2) * (grad * grad - v)
        p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)


def steplr(base_lr: float, epoch: int, step_size: int = 10, gamma: float = 0.5) -> float:
    """lr = base_lr * gamma^(epoch // step_size)."""
    if epoch < 0:
        raise ValueError("epoch must be non-negative")
    return base_lr * gamma ** (epoch // step_size)
