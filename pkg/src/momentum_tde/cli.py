"""Command-line entry point: ``momentum-tde <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 validation error (bad file, bad
config key, conflicting flags), 3 runtime failure (e.g. diverged training).
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace

from . import config as cfgmod
from .container import FormatError
from .data import load_dataset, load_feature_csv, save_dataset, synthesize
from .evaluation import (alpha_sweep, diag_csv, diagnostics, evaluate, splits_csv, sweep_csv)
from .inference import MODES, PLAIN, TDE, TDE_BG_EXEMPT, InferenceConfig
from .recipes import DEFAULT_SEEDS, RECIPES, Bench, run_recipe
from .trainer import load_checkpoint, metrics_csv, save_checkpoint, train

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2, 3


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    """argparse exits with 2 on bad usage; we reserve 2 for validation errors."""

    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _float_list(text: str) -> tuple:
    try:
        return tuple(float(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}")


def _run_config(args) -> cfgmod.RunConfig:
    cfg = cfgmod.load(args.config) if args.config else cfgmod.RunConfig()
    overrides = {}
    for item in args.set or ():
        key, sep, value = item.partition("=")
        if not sep:
            raise cfgmod.ConfigError(f"--set expects section.key=value, got {item!r}")
        overrides[key.strip()] = value
    return cfgmod.with_overrides(cfg, overrides) if overrides else cfg


def _load_data(path: str):
    if path.lower().endswith(".csv"):
        return load_feature_csv(path)
    return load_dataset(path)


def _write(path: str, text: str) -> None:
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    with open(path, "w", newline="") as f:
        f.write(text)


def cmd_synth(args) -> int:
    cfg = _run_config(args)
    seed = cfg.data_seed if args.seed is None else args.seed
    ds = synthesize(cfg.data, seed)
    save_dataset(ds, args.out)
    counts = ds.class_counts("train")
    print(f"wrote {args.out}: {ds.num_classes} classes, {counts.sum()} train samples, "
          f"head {counts.max()} / tail {counts.min()}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _run_config(args)
    tcfg = cfg.train if args.seed is None else replace(cfg.train, seed=args.seed)
    ds = _load_data(args.data)
    ck = train(ds, tcfg)
    save_checkpoint(ck, args.out)
    metrics_path = args.metrics or args.out + ".metrics.csv"
    _write(metrics_path, metrics_csv(ck.metrics))
    last = ck.metrics[-1]
    print(f"wrote {args.out} and {metrics_path}; final train loss {last['train_loss']:.4f}")
    return EXIT_OK


def _inference_config(args, data) -> InferenceConfig:
    if args.mode == PLAIN and args.alpha not in (None, 0.0):
        raise ValueError("--alpha has no effect with --mode plain; drop it or use --mode tde")
    alpha = 3.0 if args.alpha is None else args.alpha
    if args.mode == PLAIN:
        alpha = 0.0
    if args.mode == TDE_BG_EXEMPT and not data.background:
        raise ValueError("--mode tde_bg_exempt needs a dataset with a background class")
    return InferenceConfig(args.mode, alpha, bool(data.background))


def cmd_eval(args) -> int:
    ck = load_checkpoint(args.checkpoint)
    ds = _load_data(args.data)
    rep = evaluate(ck, ds, _inference_config(args, ds), split=args.split)
    label = args.label or os.path.basename(args.checkpoint)
    text = splits_csv([(label, rep)])
    _write(args.out, text)
    fmt = lambda v: "n/a" if v is None else f"{100 * v:.2f}"
    print(f"{label} [{rep.mode}, alpha={rep.alpha:g}] many {fmt(rep.many)}  medium "
          f"{fmt(rep.medium)}  few {fmt(rep.few)}  overall {fmt(rep.overall)}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    ck = load_checkpoint(args.checkpoint)
    ds = _load_data(args.data)
    alphas = args.alphas if args.alphas else cfgmod.DEFAULT_ALPHAS
    mode = TDE_BG_EXEMPT if args.background else TDE
    table = alpha_sweep(ck, ds, alphas, split=args.split, mode=mode, background=ds.background)
    _write(args.out, sweep_csv(table))
    print(f"wrote {args.out}; best alpha on {args.split}: {table.best_alpha():g}")
    return EXIT_OK


def cmd_diag(args) -> int:
    ck = load_checkpoint(args.checkpoint)
    ds = _load_data(args.data)
    _write(args.out, diag_csv(diagnostics(ck, ds, split=args.split)))
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_repro(args) -> int:
    cfg = _run_config(args)
    seeds = tuple(args.seeds) if args.seeds else DEFAULT_SEEDS
    bench = Bench(cfg.data, seeds, cfg.train, cfg.alphas)
    res = run_recipe(args.recipe, bench)
    out_dir = args.out_dir or cfg.out_dir
    for name, text in sorted(res.files.items()):
        _write(os.path.join(out_dir, name), text)
    for k, v in res.summary.items():
        print(f"{k} = {v:.4f}" if isinstance(v, float) else f"{k} = {v}")
    print(f"wrote {', '.join(sorted(res.files))} to {out_dir}")
    return EXIT_OK


def _add_config_flags(p):
    p.add_argument("--config", metavar="PATH",
                   help="run config file with [data] [model] [optim] [train] [infer] [output]")
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                   help="override one config key (repeatable), e.g. --set optim.lr=0.05")


def build_parser() -> argparse.ArgumentParser:
    p = Parser(prog="momentum-tde",
               description="Long-tailed classification with de-confounded training and "
                           "counterfactual (TDE) inference.")
    p.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=Parser,
                           help="one of the subcommands below")
    sub.required = True

    s = sub.add_parser("synth", help="synthesize a long-tailed dataset file")
    _add_config_flags(s)
    s.add_argument("--seed", type=int, help="synthesis seed (default: data.seed from config)")
    s.add_argument("--out", required=True, metavar="PATH", help="dataset file to write")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train", help="train a model and write a checkpoint")
    _add_config_flags(s)
    s.add_argument("--data", required=True, metavar="PATH",
                   help="dataset file, or a feature CSV (label,f0..,[split])")
    s.add_argument("--out", required=True, metavar="PATH", help="checkpoint file to write")
    s.add_argument("--metrics", metavar="PATH",
                   help="per-epoch metrics CSV (default: <out>.metrics.csv)")
    s.add_argument("--seed", type=int, help="training seed (default: train.seed from config)")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="many/medium/few/overall accuracy of a checkpoint")
    s.add_argument("checkpoint", help="checkpoint file")
    s.add_argument("--data", required=True, metavar="PATH", help="dataset file or feature CSV")
    s.add_argument("--mode", choices=MODES, default=PLAIN, help="inference mode (default plain)")
    s.add_argument("--alpha", type=float,
                   help="TDE trade-off strength (tde modes only; default 3.0)")
    s.add_argument("--split", choices=("train", "val", "test"), default="test",
                   help="dataset part to evaluate (default test)")
    s.add_argument("--label", help="row label in the CSV (default: checkpoint file name)")
    s.add_argument("--out", default="splits.csv", metavar="PATH",
                   help="CSV to write (default splits.csv)")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("sweep", help="accuracy across TDE strengths alpha")
    s.add_argument("checkpoint", help="checkpoint file")
    s.add_argument("--data", required=True, metavar="PATH", help="dataset file or feature CSV")
    s.add_argument("--alphas", type=_float_list, metavar="A,B,...",
                   help="strictly increasing alphas (default 0,0.5,...,3)")
    s.add_argument("--split", choices=("train", "val", "test"), default="val",
                   help="dataset part to sweep on (default val)")
    s.add_argument("--background", action="store_true",
                   help="use background-exempted TDE (dataset must have a background class)")
    s.add_argument("--out", default="sweep.csv", metavar="PATH",
                   help="CSV to write (default sweep.csv)")
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("diag", help="per-class feature norm, weight norm and cos to the head direction")
    s.add_argument("checkpoint", help="checkpoint file")
    s.add_argument("--data", required=True, metavar="PATH", help="dataset file or feature CSV")
    s.add_argument("--split", choices=("train", "val", "test"), default="test",
                   help="dataset part to measure (default test)")
    s.add_argument("--out", default="diag.csv", metavar="PATH",
                   help="CSV to write (default diag.csv)")
    s.set_defaults(func=cmd_diag)

    s = sub.add_parser("repro", help="run a named end-to-end recipe")
    s.add_argument("recipe", choices=sorted(RECIPES), help="recipe name")
    _add_config_flags(s)
    s.add_argument("--seeds", type=int, nargs="+", metavar="SEED",
                   help="seeds to average over (default 0 1 2 3 4)")
    s.add_argument("--out-dir", metavar="DIR",
                   help="directory for the CSV outputs (default: output.dir from config)")
    s.set_defaults(func=cmd_repro)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (cfgmod.ConfigError, FormatError, FileNotFoundError, IsADirectoryError,
            ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except (ArithmeticError, RuntimeError, OSError) as e:
        print(f"runtime error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
