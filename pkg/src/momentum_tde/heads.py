"""Classifier heads: the multi-head de-confounded head and the normalized baselines.

Every normalized variant shares one logit form,

    z_i = (scale / K) * sum_k  (w_i^k . x^k) / (A(w_i^k) * B(x^k)),

with a weight-side normalizer ``A`` and a feature-side normalizer ``B``:

    ===========  ==================  ============  =====
    variant      A(w)                B(x)          scale
    ===========  ==================  ============  =====
    deconfound   |w| + gamma         |x|           tau
    cosine       |w|                 |x|           tau
    capsule      |w|                 |x| + 1       tau
    tau_norm     |w| ** p            1             1
    lws          g_i (learned)       1             1
    ===========  ==================  ============  =====

``linear`` is the plain affine head ``W x + b``.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .numeric import ShapeError, as_f64, safe_norm

LINEAR = "linear"
DECONFOUND = "deconfound"
COSINE = "cosine"
CAPSULE = "capsule"
TAU_NORM = "tau_norm"
LWS = "lws"

VARIANTS = (LINEAR, DECONFOUND, COSINE, CAPSULE, TAU_NORM, LWS)
NORMALIZED = (DECONFOUND, COSINE, CAPSULE, TAU_NORM, LWS)


@dataclass
class HeadParams:
    W: np.ndarray
    variant: str = DECONFOUND
    K: int = 1
    tau: float = 16.0
    gamma: float = 1.0 / 32.0
    tau_norm_p: float = 1.0
    b: np.ndarray | None = None  # linear only; None means no bias
    g: np.ndarray | None = None  # lws only

    def __post_init__(self):
        self.W = as_f64(self.W)
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown head variant {self.variant!r}")
        if self.W.ndim != 2:
            raise ShapeError("W must be (classes, feature_dim)")
        if self.K < 1 or self.W.shape[1] % self.K:
            raise ShapeError(f"feature dim {self.W.shape[1]} not divisible by K={self.K}")
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.gamma < 0:
            raise ValueError("gamma must be non-negative")
        if not 0.0 <= self.tau_norm_p <= 1.0:
            raise ValueError("tau_norm exponent must lie in [0, 1]")
        C = self.W.shape[0]
        if self.variant == LWS and self.g is None:
            self.g = np.ones(C)

    @property
    def num_classes(self) -> int:
        return self.W.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.W.shape[1]

    def copy(self) -> "HeadParams":
        return replace(self, W=self.W.copy(),
                       b=None if self.b is None else self.b.copy(),
                       g=None if self.g is None else self.g.copy())

    def trainable(self) -> dict:
        out = {"W": self.W}
        if self.b is not None:
            out["b"] = self.b
        if self.g is not None:
            out["g"] = self.g
        return out

    @classmethod
    def init(cls, num_classes, feature_dim, rng, variant=DECONFOUND, **kw) -> "HeadParams":
        bound = 1.0 / np.sqrt(feature_dim)
        W = rng.uniform(-bound, bound, size=(num_classes, feature_dim))
        return cls(W=W, variant=variant, **kw)


def split_heads(x, K: int) -> list:
    """The K equal contiguous channel groups of ``x`` (last axis)."""
    x = as_f64(x)
    D = x.shape[-1]
    if K < 1 or D % K:
        raise ShapeError(f"length {D} is not divisible into {K} groups")
    d = D // K
    return [x[..., k * d:(k + 1) * d] for k in range(K)]


def _scale(hp: HeadParams) -> float:
    return 1.0 if hp.variant in (TAU_NORM, LWS) else hp.tau


def _weight_norm(hp: HeadParams, Wk):
    """A(w) per class and dA/dw (same shape as Wk), or None where A ignores w."""
    if hp.variant == LWS:
        return hp.g, None
    n = safe_norm(Wk)
    unit = Wk / n[:, None]
    if hp.variant == DECONFOUND:
        return n + hp.gamma, unit
    if hp.variant in (COSINE, CAPSULE):
        return n, unit
    p = hp.tau_norm_p
    return n ** p, (p * n ** (p - 1.0))[:, None] * unit


def _feature_norm(hp: HeadParams, xk):
    """B(x) per row and dB/dx, or None where B is constant."""
    if hp.variant in (TAU_NORM, LWS):
        return np.ones(xk.shape[0]), None
    n = safe_norm(xk)
    unit = xk / n[:, None]
    if hp.variant == CAPSULE:
        return n + 1.0, unit
    return n, unit


def _check(x, hp: HeadParams):
    x = as_f64(x)
    if x.shape[-1] != hp.feature_dim:
        raise ShapeError(f"feature dim {x.shape[-1]} != head dim {hp.feature_dim}")
    return x


def head_logits(x, hp: HeadParams) -> np.ndarray:
    """Logits of any variant for one feature vector or a batch of rows."""
    x = _check(x, hp)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    if hp.variant == LINEAR:
        z = X @ hp.W.T
        if hp.b is not None:
            z = z + hp.b
        return z[0] if single else z
    c = _scale(hp) / hp.K
    z = np.zeros((X.shape[0], hp.num_classes))
    for xk, Wk in zip(split_heads(X, hp.K), split_heads(hp.W, hp.K)):
        A, _ = _weight_norm(hp, Wk)
        B, _ = _feature_norm(hp, xk)
        z += (xk @ Wk.T) / (B[:, None] * A[None, :])
    z *= c
    return z[0] if single else z


def deconfound_logits(x, hp: HeadParams) -> np.ndarray:
    if hp.variant != DECONFOUND:
        raise ValueError(f"deconfound_logits needs the deconfound variant, got {hp.variant!r}")
    return head_logits(x, hp)


def baseline_logits(x, hp: HeadParams) -> np.ndarray:
    if hp.variant == DECONFOUND:
        raise ValueError("baseline_logits does not serve the deconfound variant")
    return head_logits(x, hp)


@dataclass
class HeadGrads:
    x: np.ndarray
    W: np.ndarray
    aux: dict = field(default_factory=dict)  # "b" for linear, "g" for lws


def head_backward(x, hp: HeadParams, grad_logits) -> HeadGrads:
    """Analytic gradients of ``sum(grad_logits * head_logits(x, hp))``."""
    x = _check(x, hp)
    G = as_f64(grad_logits)
    single = x.ndim == 1
    X, G = np.atleast_2d(x), np.atleast_2d(G)
    if G.shape != (X.shape[0], hp.num_classes):
        raise ShapeError(f"grad_logits {G.shape} vs ({X.shape[0]}, {hp.num_classes})")
    if hp.variant == LINEAR:
        gx = G @ hp.W
        aux = {"b": G.sum(axis=0)} if hp.b is not None else {}
        return HeadGrads(gx[0] if single else gx, G.T @ X, aux)
    c = _scale(hp) / hp.K
    gx_parts, gW_parts = [], []
    gg = np.zeros(hp.num_classes) if hp.variant == LWS else None
    for xk, Wk in zip(split_heads(X, hp.K), split_heads(hp.W, hp.K)):
        A, dA = _weight_norm(hp, Wk)
        B, dB = _feature_norm(hp, xk)
        S = xk @ Wk.T
        Q = c * G / (B[:, None] * A[None, :])  # d/dS of the slice term
        R = Q * S  # reused by both quotient-rule corrections
        gxk = Q @ Wk
        gWk = Q.T @ xk
        if dB is not None:
            gxk -= (R.sum(axis=1) / B)[:, None] * dB
        if dA is not None:
            gWk -= (R.sum(axis=0) / A)[:, None] * dA
        if gg is not None:
            gg -= R.sum(axis=0) / A
        gx_parts.append(gxk)
        gW_parts.append(gWk)
    gx = np.concatenate(gx_parts, axis=1)
    aux = {"g": gg} if gg is not None else {}
    return HeadGrads(gx[0] if single else gx, np.concatenate(gW_parts, axis=1), aux)


def tau_normalized(hp: HeadParams, p: float) -> HeadParams:
    """Post-hoc tau-norm view of a trained head (weights reused, bias dropped)."""
    return HeadParams(W=hp.W.copy(), variant=TAU_NORM, K=hp.K, tau=hp.tau,
                      gamma=hp.gamma, tau_norm_p=p)


def counterfactual_logits(x, hp: HeadParams, direction_slices) -> np.ndarray:
    """Logits with the discriminative part of every slice zeroed.

    Each slice keeps only its projection d^k = (x^k . d^k_hat) d^k_hat on the
    head direction while every normalizer is still evaluated at the factual x^k.
    """
    x = _check(x, hp)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    if len(direction_slices) != hp.K:
        raise ShapeError(f"{len(direction_slices)} direction slices for K={hp.K}")
    z = np.zeros((X.shape[0], hp.num_classes))
    if hp.variant == LINEAR:
        for xk, Wk, dk in zip(split_heads(X, hp.K), split_heads(hp.W, hp.K), direction_slices):
            z += np.outer(xk @ dk, Wk @ dk)
        return z[0] if single else z
    for xk, Wk, dk in zip(split_heads(X, hp.K), split_heads(hp.W, hp.K), direction_slices):
        A, _ = _weight_norm(hp, Wk)
        B, _ = _feature_norm(hp, xk)
        z += np.outer((xk @ dk) / B, (Wk @ dk) / A)
    z *= _scale(hp) / hp.K
    return z[0] if single else z
