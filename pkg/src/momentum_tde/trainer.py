"""One-stage and two-stage training pipelines, loss step and checkpoints."""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from . import container
from .data import Dataset, class_balanced_batches, instance_balanced_batches
from .ema import EmaTracker
from .evaluation import split_accuracies
from .heads import LINEAR, LWS, TAU_NORM, VARIANTS, HeadParams, head_backward, head_logits, tau_normalized
from .inference import cde_class_weights
from .model import Model
from .numeric import IDENTITY, RELU, BackboneParams, backprop, mlp_forward, softmax_xent
from .optim import LrSchedule, OptimizerState, lr_at, sgd_step

log = logging.getLogger(__name__)

MAGIC = b"LTCK"
SAMPLERS = ("instance", "class_balanced")
STAGE2_MODES = ("crt", "lws", "tau_norm")


class TrainingDiverged(FloatingPointError):
    pass


@dataclass(frozen=True)
class Stage2Config:
    mode: str = "crt"
    epochs: int = 10
    lr: float = 0.2
    sampler: str = "class_balanced"
    tau_norm_p: float = 1.0

    def __post_init__(self):
        if self.mode not in STAGE2_MODES:
            raise ValueError(f"unknown stage-2 mode {self.mode!r}")
        if self.sampler != "class_balanced":
            raise ValueError("stage 2 must use the class_balanced sampler")
        if self.epochs < 1 and self.mode != "tau_norm":
            raise ValueError("stage 2 needs at least one epoch")


@dataclass(frozen=True)
class TrainConfig:
    """Training hyperparameters.

    The desk-scale defaults (50 epochs, batch 64, lr 0.025) are our own choice;
    K=2, tau=16, gamma=1/32 and momentum 0.9 follow the ImageNet-LT setting.
    """

    head: str = "deconfound"
    K: int = 2
    tau: float = 16.0
    gamma: float = 1.0 / 32.0
    tau_norm_p: float = 1.0
    linear_bias: bool = True
    hidden: tuple = (128,)
    feature_dim: int = 64
    feature_activation: str = RELU
    momentum: float = 0.9
    weight_decay: float = 0.0
    ema_momentum: float | None = None  # None: same as the optimizer momentum
    lr: float = 0.025
    schedule: str = "cosine"
    epochs: int = 50
    warmup_epochs: int = 0
    warmup_start_factor: float = 0.1
    batch_size: int = 64
    sampler: str = "instance"
    loss_weights: str = "uniform"
    pipeline: str = "one_stage"
    stage2: Stage2Config | None = None
    seed: int = 0

    def __post_init__(self):
        if self.head not in VARIANTS:
            raise ValueError(f"unknown head variant {self.head!r}")
        if self.sampler not in SAMPLERS:
            raise ValueError(f"unknown sampler {self.sampler!r}")
        if self.loss_weights not in ("uniform", "cde"):
            raise ValueError(f"unknown loss_weights {self.loss_weights!r}")
        if self.pipeline not in ("one_stage", "two_stage"):
            raise ValueError(f"unknown pipeline {self.pipeline!r}")
        if (self.pipeline == "two_stage") != (self.stage2 is not None):
            raise ValueError("a stage2 block is required exactly when pipeline = two_stage")
        if self.feature_activation not in (RELU, IDENTITY):
            raise ValueError(f"unknown feature activation {self.feature_activation!r}")
        if self.feature_dim % self.K:
            raise ValueError(f"feature_dim {self.feature_dim} not divisible by K={self.K}")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be positive")
        LrSchedule(self.schedule, self.lr, self.epochs, self.warmup_epochs, self.warmup_start_factor)

    def lr_schedule(self) -> LrSchedule:
        return LrSchedule(self.schedule, self.lr, self.epochs, self.warmup_epochs,
                          self.warmup_start_factor)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown TrainConfig keys: {sorted(unknown)}")
        if d.get("stage2") is not None:
            d["stage2"] = Stage2Config(**d["stage2"])
        if "hidden" in d:
            d["hidden"] = tuple(d["hidden"])
        return cls(**d)


@dataclass
class Checkpoint:
    model: Model
    ema: EmaTracker
    config: TrainConfig
    metrics: list = field(default_factory=list)


def _rng(*key) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(k) for k in key]))


def init_head(cfg: TrainConfig, num_classes: int, rng, variant=None) -> HeadParams:
    variant = variant or cfg.head
    hp = HeadParams.init(num_classes, cfg.feature_dim, rng, variant=variant, K=cfg.K,
                         tau=cfg.tau, gamma=cfg.gamma, tau_norm_p=cfg.tau_norm_p)
    if variant == LINEAR and cfg.linear_bias:
        hp.b = np.zeros(num_classes)
    return hp


def init_model(cfg: TrainConfig, input_dim: int, num_classes: int) -> Model:
    rng = _rng(cfg.seed, 10)
    sizes = [input_dim, *cfg.hidden, cfg.feature_dim]
    backbone = BackboneParams.init(sizes, rng, final_activation=cfg.feature_activation)
    return Model(backbone, init_head(cfg, num_classes, rng))


def loss_step(x, y, model: Model, ema: EmaTracker | None = None, weights=None,
              train_backbone: bool = True):
    """Mean (optionally class-weighted) cross-entropy over a batch and its gradients.

    With class weights the loss is sum(w_y * ce) / sum(w_y).  ``ema`` (if
    given) receives the batch-mean feature.  With ``train_backbone=False``,
    ``x`` is taken to be already-extracted features.
    """
    x = np.atleast_2d(x)
    y = np.atleast_1d(y)
    if train_backbone:
        feats, cache = mlp_forward(model.backbone, x)
    else:
        feats, cache = x, None
    logits = head_logits(feats, model.head)
    losses, grad = softmax_xent(logits, y)
    w = np.ones(len(y)) if weights is None else np.asarray(weights, dtype=np.float64)[y]
    total = w.sum()
    loss = float(w @ losses / total)
    if not np.isfinite(loss):
        raise TrainingDiverged("non-finite loss")
    grad *= (w / total)[:, None]
    hg = head_backward(feats, model.head, grad)
    grads = {"head.W": hg.W}
    for k, v in hg.aux.items():
        grads[f"head.{k}"] = v
    if train_backbone:
        pg = backprop(model.backbone, cache, hg.x)
        for l, (gW, gb) in enumerate(zip(pg.weights, pg.biases)):
            grads[f"backbone.W{l}"] = gW
            grads[f"backbone.b{l}"] = gb
    if ema is not None:
        ema.update(feats.mean(axis=0))
    return loss, grads


def _batches(data: Dataset, sampler: str, batch_size: int, seed: int, epoch: int):
    if sampler == "class_balanced":
        return class_balanced_batches(data, batch_size, seed, epoch)
    return instance_balanced_batches(data, batch_size, seed, epoch)


def _val_metrics(model, data: Dataset, feats=None) -> dict:
    if len(data.indices("val")) == 0:
        return {}
    Xv, yv = data.part("val")
    f = model.features(Xv) if feats is None else feats
    pred = np.argmax(head_logits(f, model.head), axis=1)
    acc = split_accuracies(pred, yv, data.frequency_tags())
    return {f"val_{k}": v for k, v in acc.items()}


def _run_epochs(model, data, params, opt, schedule, sampler, batch_size, seed, weights,
                ema, stage, metrics, train_backbone=True, feats=None):
    for epoch in range(schedule.total_epochs):
        lr = lr_at(schedule, epoch)
        total, n = 0.0, 0
        for it, idx in enumerate(_batches(data, sampler, batch_size, seed, epoch)):
            x = data.features[idx] if feats is None else feats[idx]
            try:
                loss, grads = loss_step(x, data.labels[idx], model, ema, weights, train_backbone)
                sgd_step(opt, params, {k: grads[k] for k in params}, lr)
            except FloatingPointError as e:
                raise TrainingDiverged(f"stage {stage}, epoch {epoch}, iteration {it}: {e}") from e
            total += loss * len(idx)
            n += len(idx)
        row = {"stage": stage, "epoch": epoch, "lr": lr, "train_loss": total / n}
        row.update(_val_metrics(model, data))
        metrics.append(row)
        log.debug("stage %d epoch %d lr %.4f loss %.4f", stage, epoch, lr, row["train_loss"])


def train_one_stage(data: Dataset, cfg: TrainConfig) -> Checkpoint:
    model = init_model(cfg, data.dim, data.num_classes)
    ema = EmaTracker(cfg.feature_dim, cfg.momentum if cfg.ema_momentum is None else cfg.ema_momentum)
    opt = OptimizerState(cfg.momentum, cfg.weight_decay)
    weights = cde_class_weights(data.class_counts("train")) if cfg.loss_weights == "cde" else None
    metrics = []
    _run_epochs(model, data, model.param_dict(), opt, cfg.lr_schedule(), cfg.sampler,
                cfg.batch_size, cfg.seed, weights, ema, 1, metrics)
    ema.freeze()
    return Checkpoint(model, ema, cfg, metrics)


def train_two_stage(data: Dataset, cfg: TrainConfig) -> Checkpoint:
    """Stage 1: instance-balanced joint training.  Stage 2: frozen backbone,
    class-balanced retraining of a re-initialized classifier (cRT) or of the
    LWS scales, or a training-free tau-norm rescaling."""
    if cfg.stage2 is None:
        raise ValueError("two-stage training needs a stage2 block")
    s2 = cfg.stage2
    stage1_cfg = replace(cfg, pipeline="one_stage", stage2=None, sampler="instance")
    ck = train_one_stage(data, stage1_cfg)
    model, metrics = ck.model, ck.metrics
    if s2.mode == "tau_norm":
        model.head = tau_normalized(model.head, s2.tau_norm_p)
        metrics.append({"stage": 2, "epoch": 0, "lr": 0.0, "train_loss": float("nan"),
                        **_val_metrics(model, data)})
        return Checkpoint(model, ck.ema, cfg, metrics)
    if s2.mode == "crt":
        model.head = init_head(cfg, data.num_classes, _rng(cfg.seed, 20))
    else:
        old = model.head
        model.head = HeadParams(W=old.W.copy(), variant=LWS, K=old.K, tau=old.tau, gamma=old.gamma)
    feats = model.features(data.features)  # backbone is frozen from here on
    params = model.param_dict(backbone=False)
    if s2.mode == "lws":
        params = {"head.g": params["head.g"]}
    opt = OptimizerState(cfg.momentum, cfg.weight_decay)
    sched = LrSchedule("cosine", s2.lr, s2.epochs)
    _run_epochs(model, data, params, opt, sched, s2.sampler, cfg.batch_size, cfg.seed + 7919,
                None, None, 2, metrics, train_backbone=False, feats=feats)
    return Checkpoint(model, ck.ema, cfg, metrics)


def train(data: Dataset, cfg: TrainConfig) -> Checkpoint:
    if cfg.pipeline == "two_stage":
        return train_two_stage(data, cfg)
    return train_one_stage(data, cfg)


# -- checkpoint files ---------------------------------------------------------

def checkpoint_to_bytes(ck: Checkpoint) -> bytes:
    m = ck.model
    hp = m.head
    arrays = {}
    for l, (W, b) in enumerate(zip(m.backbone.weights, m.backbone.biases)):
        arrays[f"backbone.W{l}"] = W
        arrays[f"backbone.b{l}"] = b
    arrays["head.W"] = hp.W
    if hp.b is not None:
        arrays["head.b"] = hp.b
    if hp.g is not None:
        arrays["head.g"] = hp.g
    arrays["ema.mean"] = ck.ema.mean
    meta = {
        "activations": m.backbone.activations,
        "head": {"variant": hp.variant, "K": hp.K, "tau": hp.tau, "gamma": hp.gamma,
                 "tau_norm_p": hp.tau_norm_p},
        "ema": {"momentum": ck.ema.momentum, "count": ck.ema.count, "frozen": ck.ema.frozen},
        "config": ck.config.to_dict(),
        "metrics": metrics_csv(ck.metrics),
    }
    return container.dumps(MAGIC, meta, arrays)


def checkpoint_from_bytes(data: bytes) -> Checkpoint:
    meta, a = container.loads(MAGIC, data)
    try:
        n = len(meta["activations"])
        backbone = BackboneParams([a[f"backbone.W{l}"] for l in range(n)],
                                  [a[f"backbone.b{l}"] for l in range(n)], meta["activations"])
        h = meta["head"]
        head = HeadParams(W=a["head.W"], variant=h["variant"], K=h["K"], tau=h["tau"],
                          gamma=h["gamma"], tau_norm_p=h["tau_norm_p"],
                          b=a.get("head.b"), g=a.get("head.g"))
        e = meta["ema"]
        ema = EmaTracker(len(a["ema.mean"]), e["momentum"])
        ema.mean, ema.count, ema.frozen = a["ema.mean"], e["count"], e["frozen"]
        cfg = TrainConfig.from_dict(meta["config"])
        metrics = _parse_metrics(meta["metrics"])
    except KeyError as e:
        raise container.FormatError(f"checkpoint misses {e}") from None
    return Checkpoint(Model(backbone, head), ema, cfg, metrics)


def save_checkpoint(ck: Checkpoint, path) -> None:
    with open(path, "wb") as f:
        f.write(checkpoint_to_bytes(ck))


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as f:
        return checkpoint_from_bytes(f.read())


METRIC_COLUMNS = ["stage", "epoch", "lr", "train_loss", "val_many", "val_medium", "val_few",
                  "val_overall"]


def metrics_csv(metrics: list) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRIC_COLUMNS)
    for row in metrics:
        w.writerow(["" if row.get(c) is None else repr(row[c]) if isinstance(row[c], float)
                    else row[c] for c in METRIC_COLUMNS])
    return buf.getvalue()


def _parse_metrics(text: str) -> list:
    rows = list(csv.DictReader(io.StringIO(text)))
    out = []
    for r in rows:
        d = {}
        for k, v in r.items():
            if v == "":
                d[k] = None
            elif k in ("stage", "epoch"):
                d[k] = int(v)
            else:
                d[k] = float(v)
        out.append(d)
    return out
