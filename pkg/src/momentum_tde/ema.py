"""Exponential moving average of features and the head direction it defines."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .heads import split_heads
from .numeric import EPS, as_f64, l2_norm


class FrozenTrackerError(RuntimeError):
    pass


class UndefinedDirectionError(ValueError):
    pass


class EmaTracker:
    """Unnormalized running sum  xbar_t = mu * xbar_{t-1} + x_t.

    Only the direction of ``xbar`` is ever consumed, so it is never rescaled
    while accumulating.
    """

    def __init__(self, dim: int, momentum: float = 0.9):
        if not 0.0 <= momentum < 1.0:
            raise ValueError(f"EMA decay must be in [0, 1), got {momentum}")
        self.momentum = float(momentum)
        self.mean = np.zeros(dim)
        self.count = 0
        self.frozen = False

    def update(self, batch_mean_feature) -> "EmaTracker":
        if self.frozen:
            raise FrozenTrackerError("EMA tracker is frozen; inference never updates it")
        x = as_f64(batch_mean_feature)
        if x.shape != self.mean.shape:
            raise ValueError(f"feature shape {x.shape} vs tracker {self.mean.shape}")
        self.mean = self.momentum * self.mean + x
        self.count += 1
        return self

    def freeze(self) -> "EmaTracker":
        self.frozen = True
        return self

    def direction(self) -> np.ndarray:
        return head_direction(self)

    def direction_slices(self, K: int) -> list:
        """Per-group unit directions: slice the full running mean, normalize each."""
        if self.count == 0:
            raise UndefinedDirectionError("no EMA updates yet")
        out = []
        for k, s in enumerate(split_heads(self.mean, K)):
            n = l2_norm(s)
            if n < EPS:
                raise UndefinedDirectionError(f"EMA slice {k} has zero norm")
            out.append(s / n)
        return out

    def copy(self) -> "EmaTracker":
        t = EmaTracker(self.mean.shape[0], self.momentum)
        t.mean, t.count, t.frozen = self.mean.copy(), self.count, self.frozen
        return t


def ema_update(state: EmaTracker, batch_mean_feature) -> EmaTracker:
    return state.update(batch_mean_feature)


def head_direction(state: EmaTracker) -> np.ndarray:
    if state.count == 0:
        raise UndefinedDirectionError("head direction undefined before any EMA update")
    n = l2_norm(state.mean)
    if n < EPS:
        raise UndefinedDirectionError("EMA mean has (near) zero norm")
    return state.mean / n


@dataclass
class FeatureDecomposition:
    ddot_x: np.ndarray  # component orthogonal to the head direction
    d: np.ndarray  # projection on the head direction
    cos_xd: float | np.ndarray


def decompose(x, d_hat) -> FeatureDecomposition:
    """Split ``x`` (vector or rows) into ``ddot_x + d`` with ``d`` along ``d_hat``."""
    x, d_hat = as_f64(x), as_f64(d_hat)
    if abs(l2_norm(d_hat) - 1.0) > 1e-9:
        raise ValueError("head direction must be a unit vector")
    proj = x @ d_hat
    d = np.multiply.outer(proj, d_hat) if x.ndim > 1 else proj * d_hat
    norm = np.sqrt(np.sum(x * x, axis=-1))
    cos = proj / np.maximum(norm, EPS)
    if x.ndim == 1:
        cos = float(cos)
    return FeatureDecomposition(x - d, d, cos)
