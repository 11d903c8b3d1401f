from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .heads import HeadParams, head_logits
from .numeric import BackboneParams, mlp_forward


@dataclass
class Model:
    backbone: BackboneParams
    head: HeadParams

    def features(self, x) -> np.ndarray:
        return mlp_forward(self.backbone, x)[0]

    def logits(self, x) -> np.ndarray:
        return head_logits(self.features(x), self.head)

    def copy(self) -> "Model":
        return Model(self.backbone.copy(), self.head.copy())

    def param_dict(self, backbone=True, head=True) -> dict:
        """Live (aliased) views of the trainable arrays, keyed for the optimizer."""
        out = {}
        if backbone:
            for l, (W, b) in enumerate(zip(self.backbone.weights, self.backbone.biases)):
                out[f"backbone.W{l}"] = W
                out[f"backbone.b{l}"] = b
        if head:
            for k, v in self.head.trainable().items():
                out[f"head.{k}"] = v
        return out
