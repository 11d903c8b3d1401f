"""Plain-text run configuration: ``[section]`` headers and ``key = value`` lines.

Sections are ``data``, ``model``, ``optim``, ``train``, ``infer`` and
``output``.  Every field of the dataset profile, training config and
inference config has a key; unknown sections or keys are rejected by name.
``none`` spells an absent optional value and tuples are comma-separated.
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field

from .data import DatasetProfile
from .inference import InferenceConfig
from .trainer import Stage2Config, TrainConfig

DEFAULT_ALPHAS = (0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    data: DatasetProfile = field(default_factory=DatasetProfile)
    data_seed: int = 0
    train: TrainConfig = field(default_factory=TrainConfig)
    infer: InferenceConfig = field(default_factory=InferenceConfig)
    alphas: tuple = DEFAULT_ALPHAS
    out_dir: str = "."


# -- scalar codecs ------------------------------------------------------------

def _bool(s: str) -> bool:
    low = s.lower()
    if low in ("true", "yes", "1"):
        return True
    if low in ("false", "no", "0"):
        return False
    raise ValueError(f"expected true/false, got {s!r}")


def _optional(conv):
    def parse(s):
        return None if s.lower() == "none" else conv(s)
    return parse


def _int_tuple(s: str) -> tuple:
    return tuple(int(p) for p in s.split(",") if p.strip()) if s.strip() else ()


def _float_tuple(s: str) -> tuple:
    return tuple(float(p) for p in s.split(",") if p.strip()) if s.strip() else ()


def _fmt(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ", ".join(_fmt(x) for x in v)
    return str(v)


# (section, key) -> (target, attribute, parser).  Targets: "profile", "train",
# "stage2", "infer", "run".
_SCHEMA = {
    ("data", "num_classes"): ("profile", "num_classes", int),
    ("data", "n_max"): ("profile", "n_max", int),
    ("data", "imbalance_ratio"): ("profile", "imbalance_ratio", float),
    ("data", "dim"): ("profile", "dim", int),
    ("data", "noise"): ("profile", "noise", float),
    ("data", "prototype_seed"): ("profile", "prototype_seed", _optional(int)),
    ("data", "n_val_per_class"): ("profile", "n_val_per_class", int),
    ("data", "n_test_per_class"): ("profile", "n_test_per_class", int),
    ("data", "background_fraction"): ("profile", "background_fraction", float),
    ("data", "background_spread"): ("profile", "background_spread", float),
    ("data", "seed"): ("run", "data_seed", int),
    ("model", "head"): ("train", "head", str),
    ("model", "K"): ("train", "K", int),
    ("model", "tau"): ("train", "tau", float),
    ("model", "gamma"): ("train", "gamma", float),
    ("model", "tau_norm_p"): ("train", "tau_norm_p", float),
    ("model", "linear_bias"): ("train", "linear_bias", _bool),
    ("model", "hidden"): ("train", "hidden", _int_tuple),
    ("model", "feature_dim"): ("train", "feature_dim", int),
    ("model", "feature_activation"): ("train", "feature_activation", str),
    ("optim", "momentum"): ("train", "momentum", float),
    ("optim", "weight_decay"): ("train", "weight_decay", float),
    ("optim", "ema_momentum"): ("train", "ema_momentum", _optional(float)),
    ("optim", "lr"): ("train", "lr", float),
    ("optim", "schedule"): ("train", "schedule", str),
    ("optim", "warmup_epochs"): ("train", "warmup_epochs", int),
    ("optim", "warmup_start_factor"): ("train", "warmup_start_factor", float),
    ("train", "epochs"): ("train", "epochs", int),
    ("train", "batch_size"): ("train", "batch_size", int),
    ("train", "sampler"): ("train", "sampler", str),
    ("train", "loss_weights"): ("train", "loss_weights", str),
    ("train", "pipeline"): ("train", "pipeline", str),
    ("train", "seed"): ("train", "seed", int),
    ("train", "stage2_mode"): ("stage2", "mode", str),
    ("train", "stage2_epochs"): ("stage2", "epochs", int),
    ("train", "stage2_lr"): ("stage2", "lr", float),
    ("train", "stage2_sampler"): ("stage2", "sampler", str),
    ("train", "stage2_tau_norm_p"): ("stage2", "tau_norm_p", float),
    ("infer", "mode"): ("infer", "mode", str),
    ("infer", "alpha"): ("infer", "alpha", float),
    ("infer", "background_class_present"): ("infer", "background_class_present", _bool),
    ("infer", "alphas"): ("run", "alphas", _float_tuple),
    ("output", "dir"): ("run", "out_dir", str),
}
SECTIONS = ("data", "model", "optim", "train", "infer", "output")


def keys() -> list:
    """Every accepted ``section.key`` name."""
    return [f"{s}.{k}" for s, k in _SCHEMA]


def _build(values: dict) -> RunConfig:
    """``values`` maps (section, key) to parsed values; absent keys keep defaults."""
    groups = {"profile": {}, "train": {}, "stage2": {}, "infer": {}, "run": {}}
    origin = {}
    for (sec, key), v in values.items():
        target, attr, _ = _SCHEMA[(sec, key)]
        groups[target][attr] = v
        origin[(target, attr)] = f"{sec}.{key}"

    def make(target, cls, kw):
        try:
            return cls(**kw)
        except (ValueError, TypeError) as e:
            named = [origin[(target, a)] for a in kw if (target, a) in origin and a in str(e)]
            where = named[0] if named else ", ".join(origin[(target, a)] for a in kw) or target
            raise ConfigError(f"{where}: {e}") from None

    profile = make("profile", DatasetProfile, groups["profile"])
    train_kw = dict(groups["train"])
    pipeline = train_kw.get("pipeline", TrainConfig.pipeline)
    if groups["stage2"] and pipeline != "two_stage":
        raise ConfigError(f"{', '.join(origin[('stage2', a)] for a in groups['stage2'])}: "
                          "stage-2 keys need train.pipeline = two_stage")
    if pipeline == "two_stage":
        train_kw["stage2"] = make("stage2", Stage2Config, groups["stage2"])
    tcfg = make("train", TrainConfig, train_kw)
    icfg = make("infer", InferenceConfig, groups["infer"])
    run = groups["run"]
    alphas = run.get("alphas", DEFAULT_ALPHAS)
    if not alphas or any(b <= a for a, b in zip(alphas, alphas[1:])) or min(alphas) < 0:
        raise ConfigError("infer.alphas: must be non-empty, non-negative and strictly increasing")
    return RunConfig(profile, run.get("data_seed", 0), tcfg, icfg, tuple(alphas),
                     run.get("out_dir", "."))


def parse(text: str) -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None, strict=True,
                                   default_section="__no_defaults__")
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as e:
        raise ConfigError(f"config syntax: {e}") from None
    values = {}
    for sec in cp.sections():
        if sec not in SECTIONS:
            raise ConfigError(f"unknown section [{sec}]")
        for key, raw in cp.items(sec):
            if (sec, key) not in _SCHEMA:
                raise ConfigError(f"unknown key {sec}.{key}")
            try:
                values[(sec, key)] = _SCHEMA[(sec, key)][2](raw.strip())
            except ValueError as e:
                raise ConfigError(f"{sec}.{key}: {e}") from None
    return _build(values)


def load(path) -> RunConfig:
    with open(path) as f:
        return parse(f.read())


def _current(cfg: RunConfig, target: str, attr: str):
    if target == "profile":
        return getattr(cfg.data, attr)
    if target == "train":
        return getattr(cfg.train, attr)
    if target == "stage2":
        return getattr(cfg.train.stage2, attr)
    if target == "infer":
        return getattr(cfg.infer, attr)
    return getattr(cfg, attr)


def render(cfg: RunConfig) -> str:
    """Full key=value text; stage-2 keys appear only for two-stage pipelines."""
    lines = []
    for sec in SECTIONS:
        lines.append(f"[{sec}]")
        for (s, key), (target, attr, _) in _SCHEMA.items():
            if s != sec or (target == "stage2" and cfg.train.stage2 is None):
                continue
            lines.append(f"{key} = {_fmt(_current(cfg, target, attr))}")
        lines.append("")
    return "\n".join(lines)


def with_overrides(cfg: RunConfig, overrides: dict) -> RunConfig:
    """Apply ``{"section.key": "text"}`` overrides on top of ``cfg``."""
    values = {}
    for (sec, key), (target, attr, _) in _SCHEMA.items():
        if target != "stage2" or cfg.train.stage2 is not None:
            values[(sec, key)] = _current(cfg, target, attr)
    explicit = set()
    for name, raw in overrides.items():
        sec, _, key = name.partition(".")
        if (sec, key) not in _SCHEMA:
            raise ConfigError(f"unknown key {name}")
        try:
            values[(sec, key)] = _SCHEMA[(sec, key)][2](str(raw).strip())
        except ValueError as e:
            raise ConfigError(f"{name}: {e}") from None
        explicit.add((sec, key))
    if values[("train", "pipeline")] != "two_stage":
        # inherited stage-2 settings lapse when switching to a one-stage pipeline
        values = {k: v for k, v in values.items()
                  if _SCHEMA[k][0] != "stage2" or k in explicit}
    return _build(values)
