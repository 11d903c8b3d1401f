"""Named end-to-end experiments on the synthetic long-tailed benchmark.

Each recipe trains its models over a list of seeds, averages the per-seed
results and returns CSV texts ready to be written (``splits.csv``,
``sweep.csv``, ``diag.csv``, ``per_seed.csv`` and ``summary.csv`` as
relevant).  Every number is a pure function of (profile, base config, seeds),
so two runs give byte-identical files.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.stats import spearmanr

from .config import DEFAULT_ALPHAS
from .data import DatasetProfile, IMBALANCE_PRESETS, synthesize
from .evaluation import (SPLITS, SplitReport, SweepTable, alpha_sweep, diag_csv, diagnostics,
                         DiagnosticsTable, evaluate, render_csv, splits_csv, sweep_csv)
from .inference import PLAIN, TDE, InferenceConfig
from .trainer import Stage2Config, TrainConfig, train

DEFAULT_SEEDS = (0, 1, 2, 3, 4)

# Per-method overrides applied on top of the base training config.
METHODS = {
    "baseline": dict(head="linear", K=1),
    "cde": dict(head="linear", K=1, loss_weights="cde"),
    "crt": dict(head="linear", K=1, pipeline="two_stage", stage2=Stage2Config("crt")),
    "lws": dict(head="linear", K=1, pipeline="two_stage", stage2=Stage2Config("lws")),
    "tau_norm": dict(head="linear", K=1, pipeline="two_stage", stage2=Stage2Config("tau_norm")),
    "cosine": dict(head="cosine", K=1),
    "capsule": dict(head="capsule", K=1),
    "deconfound": dict(head="deconfound"),
}


@dataclass
class RecipeResult:
    files: dict  # file name -> CSV text
    summary: dict  # scalar name -> value
    details: dict = field(default_factory=dict)  # in-memory extras for callers/tests


class Bench:
    """Datasets and trained checkpoints keyed by (seed, method, overrides), built lazily."""

    def __init__(self, profile: DatasetProfile | None = None, seeds=DEFAULT_SEEDS,
                 base: TrainConfig | None = None, alphas=DEFAULT_ALPHAS):
        self.profile = profile or DatasetProfile()
        self.seeds = tuple(int(s) for s in seeds)
        if not self.seeds:
            raise ValueError("at least one seed is required")
        self.base = base or TrainConfig()
        self.alphas = tuple(float(a) for a in alphas)
        self._data, self._ck = {}, {}

    def data(self, seed: int):
        if seed not in self._data:
            self._data[seed] = synthesize(self.profile, seed)
        return self._data[seed]

    def config(self, method: str, seed: int, **overrides) -> TrainConfig:
        if method not in METHODS:
            raise ValueError(f"unknown method {method!r}")
        kw = {**METHODS[method], **overrides}
        if kw.get("pipeline", "one_stage") == "one_stage":
            kw.setdefault("pipeline", "one_stage")
            kw.setdefault("stage2", None)
        return replace(self.base, seed=seed, **kw)

    def checkpoint(self, method: str, seed: int, **overrides):
        key = (seed, method, tuple(sorted(overrides.items())))
        if key not in self._ck:
            self._ck[key] = train(self.data(seed), self.config(method, seed, **overrides))
        return self._ck[key]

    def plain_report(self, method, seed, **overrides) -> SplitReport:
        return evaluate(self.checkpoint(method, seed, **overrides), self.data(seed),
                        InferenceConfig(PLAIN))

    def tde_report(self, method, seed, **overrides) -> SplitReport:
        """TDE on the test split with alpha picked by overall accuracy on val."""
        ck, ds = self.checkpoint(method, seed, **overrides), self.data(seed)
        alpha = alpha_sweep(ck, ds, self.alphas, split="val").best_alpha()
        return evaluate(ck, ds, InferenceConfig(TDE, alpha))


def mean_report(reports: list) -> SplitReport:
    """Seed-mean of split accuracies; alpha is averaged too (it may differ per seed)."""
    vals = {}
    for s in (*SPLITS, "overall"):
        xs = [getattr(r, s) for r in reports]
        vals[s] = None if any(x is None for x in xs) else float(np.mean(xs))
    r0 = reports[0]
    return SplitReport(vals["many"], vals["medium"], vals["few"], vals["overall"], r0.counts,
                       r0.mode, float(np.mean([r.alpha for r in reports])))


def spearman(a, b) -> float:
    return float(spearmanr(a, b)[0])


def _summary_csv(summary: dict) -> str:
    return render_csv("summary", ["key", "value"],
                      [{"key": k, "value": v} for k, v in summary.items()])


PER_SEED_COLUMNS = ["label", "seed", "mode", "alpha", "many", "medium", "few", "overall"]


def _per_seed_csv(rows: list) -> str:
    """``rows`` is a list of (label, seed, SplitReport)."""
    return render_csv("per_seed", PER_SEED_COLUMNS,
                      [{"label": lbl, "seed": s, **rep.as_row()} for lbl, s, rep in rows])


def _comparison(bench: Bench, rows: list) -> RecipeResult:
    """``rows``: (label, method, use_tde, overrides)."""
    per_seed, means = [], []
    for label, method, use_tde, over in rows:
        reps = []
        for seed in bench.seeds:
            rep = (bench.tde_report if use_tde else bench.plain_report)(method, seed, **over)
            per_seed.append((label, seed, rep))
            reps.append(rep)
        means.append((label, mean_report(reps)))
    summary = {}
    for label, rep in means:
        for s in (*SPLITS, "overall"):
            summary[f"{label}.{s}"] = getattr(rep, s)
        if rep.mode == TDE:
            summary[f"{label}.alpha"] = rep.alpha
    files = {"splits.csv": splits_csv(means), "per_seed.csv": _per_seed_csv(per_seed),
             "summary.csv": _summary_csv(summary)}
    return RecipeResult(files, summary, {"means": dict(means)})


# -- recipes --------------------------------------------------------------------

def mean_diagnostics(bench: Bench, method: str) -> list:
    """Per-class diagnostics rows with the numeric columns averaged over seeds."""
    tables = [diagnostics(bench.checkpoint(method, s), bench.data(s)).rows for s in bench.seeds]
    rows = []
    for c in range(len(tables[0])):
        r = dict(tables[0][c])
        for col in ("mean_feature_norm", "weight_norm", "mean_cos_dhat"):
            r[col] = float(np.mean([t[c][col] for t in tables]))
        rows.append(r)
    return rows


def bias_emergence(bench: Bench) -> RecipeResult:
    """Linear-head training: per-class feature magnitude and weight norm vs class size."""
    rows = mean_diagnostics(bench, "baseline")
    size = [r["train_count"] for r in rows]
    summary = {
        "spearman_size_feature_norm": spearman(size, [r["mean_feature_norm"] for r in rows]),
        "spearman_size_weight_norm": spearman(size, [r["weight_norm"] for r in rows]),
        "spearman_size_cos_dhat": spearman(size, [r["mean_cos_dhat"] for r in rows]),
        "argmax_cos_dhat_class": int(np.argmax([r["mean_cos_dhat"] for r in rows])),
    }
    files = {"diag.csv": diag_csv(DiagnosticsTable(rows)), "summary.csv": _summary_csv(summary)}
    return RecipeResult(files, summary, {"rows": rows})


def fig3_sweep(bench: Bench) -> RecipeResult:
    """Alpha sweep of the de-confounded model on the test split, averaged over seeds."""
    tables = [alpha_sweep(bench.checkpoint("deconfound", s), bench.data(s), bench.alphas,
                          split="test") for s in bench.seeds]
    rows = [(a, mean_report([t.rows[i][1] for t in tables])) for i, a in enumerate(bench.alphas)]
    mean_table = SweepTable(rows)
    a = mean_table.alphas
    summary = {f"spearman_alpha_{s}": spearman(a, mean_table.column(s))
               for s in (*SPLITS, "overall")}
    val_alphas = [alpha_sweep(bench.checkpoint("deconfound", s), bench.data(s),
                              bench.alphas).best_alpha() for s in bench.seeds]
    summary["val_best_alpha_mean"] = float(np.mean(val_alphas))
    diag = mean_diagnostics(bench, "deconfound")
    summary["argmax_cos_dhat_class"] = int(np.argmax([r["mean_cos_dhat"] for r in diag]))
    files = {"sweep.csv": sweep_csv(mean_table), "diag.csv": diag_csv(DiagnosticsTable(diag)),
             "summary.csv": _summary_csv(summary)}
    return RecipeResult(files, summary, {"table": mean_table, "per_seed": tables})


def four_regimes(bench: Bench) -> RecipeResult:
    """Conventional training, CDE re-weighting, two-stage NDE (cRT) and TDE."""
    res = _comparison(bench, [("baseline", "baseline", False, {}),
                              ("cde", "cde", False, {}),
                              ("nde_crt", "crt", False, {}),
                              ("tde", "deconfound", True, {})])
    m = res.details["means"]
    for label in ("cde", "nde_crt", "tde"):
        res.summary[f"{label}.few_gain"] = m[label].few - m["baseline"].few
    res.summary["tde_minus_nde.overall"] = m["tde"].overall - m["nde_crt"].overall
    res.files["summary.csv"] = _summary_csv(res.summary)
    return res


def table_style_comparison(bench: Bench) -> RecipeResult:
    """Every head and two-stage baseline next to the de-confounded model."""
    return _comparison(bench, [("linear", "baseline", False, {}),
                               ("cosine", "cosine", False, {}),
                               ("capsule", "capsule", False, {}),
                               ("crt", "crt", False, {}),
                               ("lws", "lws", False, {}),
                               ("tau_norm", "tau_norm", False, {}),
                               ("deconfound", "deconfound", False, {}),
                               ("deconfound_tde", "deconfound", True, {})])


def k_sweep(bench: Bench) -> RecipeResult:
    rows = []
    for K in (1, 2, 4):
        if bench.base.feature_dim % K == 0:
            rows.append((f"K={K}", "deconfound", True, {"K": K}))
    return _comparison(bench, rows)


def tau_gamma_sweep(bench: Bench) -> RecipeResult:
    rows = [(f"tau={tau:g},gamma={g:g}", "deconfound", True, {"tau": tau, "gamma": g})
            for tau in (8.0, 16.0, 32.0) for g in (0.0, 1 / 32, 1 / 8)]
    return _comparison(bench, rows)


def ratio_sweep(bench: Bench) -> RecipeResult:
    """Baseline, cRT and TDE at each preset imbalance ratio."""
    per_seed, means, summary = [], [], {}
    for rho in IMBALANCE_PRESETS:
        sub = Bench(replace(bench.profile, imbalance_ratio=float(rho)), bench.seeds, bench.base,
                    bench.alphas)
        res = _comparison(sub, [(f"rho={rho}:baseline", "baseline", False, {}),
                                (f"rho={rho}:crt", "crt", False, {}),
                                (f"rho={rho}:tde", "deconfound", True, {})])
        means.extend(res.details["means"].items())
        summary.update(res.summary)
        per_seed.append(res.files["per_seed.csv"])
    # concatenate per-seed tables under one header
    body = [ln for text in per_seed[1:] for ln in text.splitlines(keepends=True)[2:]]
    files = {"splits.csv": splits_csv(means), "per_seed.csv": per_seed[0] + "".join(body),
             "summary.csv": _summary_csv(summary)}
    return RecipeResult(files, summary, {"means": dict(means)})


RECIPES = {
    "bias-emergence": bias_emergence,
    "fig3-sweep": fig3_sweep,
    "table-style-comparison": table_style_comparison,
    "appendixD-four-regimes": four_regimes,
    "k-sweep": k_sweep,
    "tau-gamma-sweep": tau_gamma_sweep,
    "ratio-sweep": ratio_sweep,
}


def run_recipe(name: str, bench: Bench) -> RecipeResult:
    if name not in RECIPES:
        raise ValueError(f"unknown recipe {name!r}; choose from {', '.join(RECIPES)}")
    return RECIPES[name](bench)
