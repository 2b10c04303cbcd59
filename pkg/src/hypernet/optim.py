"""SGD with momentum, Adam and step-decay learning-rate schedules.

Optimizer state is a flat ``dict[str, ndarray]`` so it can go straight into a
checkpoint under ``opt.*`` names. Updates are in place.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def _check(params, grads):
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"{name}: gradient shape {g.shape} != parameter shape {p.shape}")


def sgd_step(params: dict, grads: dict, state: dict, lr: float,
             momentum: float = 0.0, weight_decay: float = 0.0) -> None:
    """``g = grad + wd * p;  v = momentum * v + g;  p -= lr * v``."""
    _check(params, grads)
    for name, p in params.items():
        g = grads[name]
        if weight_decay:
            g = g + weight_decay * p
        if momentum:
            v = state.get(f"v.{name}")
            if v is None:
                v = state[f"v.{name}"] = np.zeros_like(p)
            v *= momentum
            v += g
            g = v
        p -= lr * g


def adam_step(params: dict, grads: dict, state: dict, lr: float, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> None:
    """Bias-corrected Adam; the step counter lives in ``state["t"]``."""
    _check(params, grads)
    t = int(state.get("t", np.zeros(1))[0]) + 1
    state["t"] = np.array([t], dtype=np.float64)
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for name, p in params.items():
        g = grads[name]
        m = state.get(f"m.{name}")
        if m is None:
            m = state[f"m.{name}"] = np.zeros_like(p)
            state[f"v.{name}"] = np.zeros_like(p)
        v = state[f"v.{name}"]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


@dataclass
class Optimizer:
    name: str = "sgd"
    lr: float = 0.1
    momentum: float = 0.0
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    state: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.name not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.name!r}")
        if not self.lr >= 0:
            raise ValueError("lr must be non-negative")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")

    def step(self, params: dict, grads: dict, lr: float) -> None:
        if self.name == "sgd":
            sgd_step(params, grads, self.state, lr, self.momentum, self.weight_decay)
        else:
            adam_step(params, grads, self.state, lr, self.beta1, self.beta2, self.eps)


@dataclass
class StepSchedule:
    """``lr0 * factor ** k`` where ``k`` counts elapsed periods or passed milestones."""

    lr0: float
    factor: float = 0.1
    period: int | None = None
    milestones: tuple[int, ...] = ()

    def __post_init__(self):
        if self.factor <= 0:
            raise ValueError("factor must be positive")
        if self.period is not None and self.period < 1:
            raise ValueError("period must be >= 1")

    def lr_at(self, epoch: int) -> float:
        if epoch < 0:
            raise ValueError("epoch must be >= 0")
        if self.period:
            k = epoch // self.period
        else:
            k = sum(1 for m in self.milestones if epoch >= m)
        return self.lr0 * self.factor**k


def lr_at(schedule: StepSchedule, epoch: int) -> float:
    return schedule.lr_at(epoch)
