"""Dense numeric substrate: affine layers, the MLP backbone, softmax cross-entropy."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

EPS = 1e-12

RELU = "relu"
IDENTITY = "identity"


class ShapeError(ValueError):
    pass


def as_f64(a) -> np.ndarray:
    return np.asarray(a, dtype=np.float64)


def l2_norm(x) -> float:
    x = as_f64(x)
    return float(np.sqrt(np.dot(x.ravel(), x.ravel())))


def safe_norm(x, axis=-1, keepdims=False) -> np.ndarray:
    """Row norms with EPS folded in under the square root, safe as a divisor.

    The derivative is exactly ``x / safe_norm(x)``, which is 0 at the origin.
    """
    x = as_f64(x)
    return np.sqrt(np.sum(x * x, axis=axis, keepdims=keepdims) + EPS * EPS)


def affine_forward(x, W, b) -> np.ndarray:
    """``W x + b`` for a single vector or a batch of row vectors."""
    x, W, b = as_f64(x), as_f64(W), as_f64(b)
    if W.ndim != 2 or b.shape != (W.shape[0],) or x.shape[-1] != W.shape[1]:
        raise ShapeError(
            f"affine shapes do not conform: x{x.shape}, W{W.shape}, b{b.shape}")
    return x @ W.T + b


@dataclass
class BackboneParams:
    """Ordered (weight, bias) layers; ``weights[l]`` has shape (out, in)."""

    weights: list
    biases: list
    activations: list

    def __post_init__(self):
        if not (len(self.weights) == len(self.biases) == len(self.activations)):
            raise ShapeError("layer lists have different lengths")
        for l, (W, b) in enumerate(zip(self.weights, self.biases)):
            if b.shape != (W.shape[0],):
                raise ShapeError(f"layer {l}: bias {b.shape} vs weight {W.shape}")
            if l and W.shape[1] != self.weights[l - 1].shape[0]:
                raise ShapeError(f"layer {l} input {W.shape[1]} does not chain")
        for act in self.activations:
            if act not in (RELU, IDENTITY):
                raise ValueError(f"unknown activation {act!r}")

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def feature_dim(self) -> int:
        return self.weights[-1].shape[0]

    @property
    def sizes(self) -> list:
        return [self.input_dim] + [W.shape[0] for W in self.weights]

    def copy(self) -> "BackboneParams":
        return BackboneParams([W.copy() for W in self.weights],
                              [b.copy() for b in self.biases],
                              list(self.activations))

    @classmethod
    def init(cls, sizes, rng, final_activation=IDENTITY) -> "BackboneParams":
        """Uniform init in [-1/sqrt(fan_in), 1/sqrt(fan_in)]."""
        weights, biases, acts = [], [], []
        for l, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            bound = 1.0 / np.sqrt(n_in)
            weights.append(rng.uniform(-bound, bound, size=(n_out, n_in)))
            biases.append(rng.uniform(-bound, bound, size=n_out))
            acts.append(final_activation if l == len(sizes) - 2 else RELU)
        return cls(weights, biases, acts)


@dataclass
class ActivationCache:
    inputs: list = field(default_factory=list)  # input to each layer
    pre: list = field(default_factory=list)  # pre-activation of each layer


@dataclass
class ParamGrads:
    weights: list
    biases: list
    input: np.ndarray


def mlp_forward(params: BackboneParams, x):
    x = as_f64(x)
    if x.shape[-1] != params.input_dim:
        raise ShapeError(f"input dim {x.shape[-1]} != {params.input_dim}")
    cache = ActivationCache()
    h = x
    for W, b, act in zip(params.weights, params.biases, params.activations):
        cache.inputs.append(h)
        z = affine_forward(h, W, b)
        cache.pre.append(z)
        h = np.maximum(z, 0.0) if act == RELU else z
    return h, cache


def backprop(params: BackboneParams, cache: ActivationCache, grad_feature) -> ParamGrads:
    """Gradients of a scalar loss w.r.t. every layer and the input.

    For a batch, parameter gradients are summed over rows; the loss
    normalization is the caller's business.
    """
    g = as_f64(grad_feature)
    if len(cache.pre) != len(params.weights) or g.shape != cache.pre[-1].shape:
        raise ShapeError("activation cache does not match these params / gradient")
    gW = [None] * len(params.weights)
    gb = [None] * len(params.weights)
    for l in reversed(range(len(params.weights))):
        if params.activations[l] == RELU:
            g = g * (cache.pre[l] > 0)
        h = cache.inputs[l]
        if g.ndim == 1:
            gW[l] = np.outer(g, h)
            gb[l] = g.copy()
        else:
            gW[l] = g.T @ h
            gb[l] = g.sum(axis=0)
        g = g @ params.weights[l]
    return ParamGrads(gW, gb, g)


def softmax(logits) -> np.ndarray:
    z = as_f64(logits)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits) -> np.ndarray:
    z = as_f64(logits)
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax_xent(logits, label):
    """Cross-entropy of one logit vector (or a batch, returning per-row losses)."""
    logits = as_f64(logits)
    label = np.asarray(label)
    C = logits.shape[-1]
    if np.any(label < 0) or np.any(label >= C):
        raise IndexError(f"label out of range for {C} classes")
    logp = log_softmax(logits)
    grad = np.exp(logp)
    if logits.ndim == 1:
        grad[label] -= 1.0
        return float(-logp[label]), grad
    rows = np.arange(logits.shape[0])
    grad[rows, label] -= 1.0
    return -logp[rows, label], grad
