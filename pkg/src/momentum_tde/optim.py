"""SGD with momentum (velocity not pre-scaled by lr) and epoch-level LR schedules."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .numeric import ShapeError


class NonFiniteGradient(FloatingPointError):
    pass


@dataclass
class OptimizerState:
    """Per-parameter velocity buffers plus the step counter.

    ``velocity`` is the running sum v_t = mu * v_{t-1} + g_t; the update is
    theta -= lr * v_t (PyTorch placement, lr applied after accumulation).
    """

    momentum: float = 0.9
    weight_decay: float = 0.0
    velocity: dict = field(default_factory=dict)
    t: int = 0

    def __post_init__(self):
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")


def sgd_step(state: OptimizerState, params: dict, grads: dict, lr: float) -> None:
    """One in-place momentum step over every parameter that has a gradient."""
    for name, g in grads.items():
        if name not in params:
            raise KeyError(f"gradient for unknown parameter {name!r}")
        if g.shape != params[name].shape:
            raise ShapeError(f"{name}: grad {g.shape} vs param {params[name].shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"non-finite gradient for {name!r} at step {state.t + 1}")
    for name, g in grads.items():
        p = params[name]
        if state.weight_decay:
            g = g + state.weight_decay * p
        v = state.velocity.get(name)
        if v is None:
            v = np.zeros_like(p)
        elif v.shape != p.shape:
            raise ShapeError(f"{name}: velocity {v.shape} vs param {p.shape}")
        v = state.momentum * v + g
        state.velocity[name] = v
        p -= lr * v
    state.t += 1


@dataclass(frozen=True)
class LrSchedule:
    kind: str = "cosine"
    base_lr: float = 0.2
    total_epochs: int = 90
    warmup_epochs: int = 0
    warmup_start_factor: float = 0.1
    step_epochs: tuple = ()
    step_gamma: float = 0.1

    def __post_init__(self):
        if self.kind not in ("cosine", "step", "constant"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if self.base_lr < 0 or self.total_epochs < 1:
            raise ValueError("base_lr must be >= 0 and total_epochs >= 1")
        if not 0 <= self.warmup_epochs < self.total_epochs:
            raise ValueError("warmup_epochs must lie in [0, total_epochs)")


def lr_at(schedule: LrSchedule, epoch: int) -> float:
    s = schedule
    if not 0 <= epoch <= s.total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {s.total_epochs}]")
    if epoch < s.warmup_epochs:
        frac = epoch / s.warmup_epochs
        return s.base_lr * (s.warmup_start_factor + (1.0 - s.warmup_start_factor) * frac)
    if s.kind == "constant":
        return s.base_lr
    if s.kind == "step":
        # same convention as the LVIS schedule: decay at each listed epoch
        n = sum(epoch >= e for e in s.step_epochs)
        return s.base_lr * s.step_gamma ** n
    p = (epoch - s.warmup_epochs) / (s.total_epochs - s.warmup_epochs)
    return s.base_lr * (1.0 + math.cos(math.pi * p)) / 2.0
