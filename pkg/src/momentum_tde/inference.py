"""Prediction modes: plain, counterfactual TDE, and background-exempted TDE."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ema import EmaTracker
from .heads import HeadParams, counterfactual_logits, head_logits
from .numeric import as_f64, softmax

PLAIN = "plain"
TDE = "tde"
TDE_BG_EXEMPT = "tde_bg_exempt"
MODES = (PLAIN, TDE, TDE_BG_EXEMPT)


@dataclass(frozen=True)
class InferenceConfig:
    mode: str = PLAIN
    alpha: float = 3.0
    background_class_present: bool = False

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown inference mode {self.mode!r}")
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")
        if self.mode == TDE_BG_EXEMPT and not self.background_class_present:
            raise ValueError("tde_bg_exempt requires background_class_present")


@dataclass
class Prediction:
    logits: np.ndarray
    probabilities: np.ndarray
    predicted: np.ndarray | int


def tde_logits(x, hp: HeadParams, direction_slices, alpha: float) -> np.ndarray:
    """Factual logits minus alpha times the counterfactual (null-input) logits.

    For the deconfound head this is, per class i,

        (tau/K) sum_k [ w.x / ((|w|+gamma)|x|) - alpha cos(x, d) w.d / (|w|+gamma) ]

    and the same subtraction applies to the other variants with their own
    normalizers.
    """
    factual = head_logits(x, hp)
    if alpha == 0:
        return factual
    return factual - alpha * counterfactual_logits(x, hp, direction_slices)


def background_exempted(p, q) -> np.ndarray:
    """Keep the factual background probability ``p0``; share ``1 - p0`` among the
    foreground classes in proportion to their TDE probabilities ``q``."""
    p, q = as_f64(p), as_f64(q)
    if p.shape != q.shape:
        raise ValueError(f"p {p.shape} and q {q.shape} differ")
    fg = 1.0 - q[..., :1]
    if np.any(fg <= 0):
        raise ValueError("degenerate TDE distribution: q0 == 1")
    out = (1.0 - p[..., :1]) * q / fg
    out[..., 0] = p[..., 0]
    return out


def cde_class_weights(class_counts) -> np.ndarray:
    """Inverse-frequency loss weights, normalized to mean 1."""
    n = np.asarray(class_counts, dtype=np.float64)
    if n.ndim != 1 or n.size == 0:
        raise ValueError("class_counts must be a non-empty vector")
    if np.any(n < 1):
        raise ValueError("every class needs at least one sample")
    w = 1.0 / n
    return w * (n.size / w.sum())


def predict(x, model, ema: EmaTracker | None, cfg: InferenceConfig) -> Prediction:
    """Mode-dispatched prediction for one sample or a batch of rows.

    Ties in the final scores resolve to the lowest class index.
    """
    feats = model.features(x)
    hp = model.head
    plain = head_logits(feats, hp)
    if cfg.mode == PLAIN:
        logits, probs = plain, softmax(plain)
    else:
        if ema is None or not ema.frozen:
            raise ValueError("TDE inference needs a frozen EMA tracker")
        slices = ema.direction_slices(hp.K)
        logits = tde_logits(feats, hp, slices, cfg.alpha)
        probs = softmax(logits)
        if cfg.mode == TDE_BG_EXEMPT:
            probs = background_exempted(softmax(plain), probs)
    scores = probs if cfg.mode == TDE_BG_EXEMPT else logits
    pred = np.argmax(scores, axis=-1)
    return Prediction(logits, probs, int(pred) if np.ndim(pred) == 0 else pred)
