"""Many/medium/few-shot evaluation, alpha sweeps and per-class diagnostics."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .data import FEW, MANY, MEDIUM, Dataset
from .ema import decompose
from .inference import PLAIN, TDE, InferenceConfig, predict
from .numeric import safe_norm

SPLITS = (MANY, MEDIUM, FEW)
SCHEMA_VERSION = 1


def split_accuracies(pred, labels, tags) -> dict:
    """Top-1 accuracy per frequency split plus overall; absent splits map to None."""
    pred, labels = np.asarray(pred), np.asarray(labels)
    correct = pred == labels
    sample_tags = np.asarray(tags, dtype=object)[labels]
    out = {}
    for s in SPLITS:
        m = sample_tags == s
        out[s] = float(correct[m].mean()) if m.any() else None
    out["overall"] = float(correct.mean()) if len(correct) else None
    return out


@dataclass
class SplitReport:
    many: float | None
    medium: float | None
    few: float | None
    overall: float | None
    counts: dict = field(default_factory=dict)
    mode: str = PLAIN
    alpha: float = 0.0

    def as_row(self) -> dict:
        row = {"mode": self.mode, "alpha": self.alpha}
        for s in (*SPLITS, "overall"):
            row[s] = getattr(self, s)
            row[f"n_{s}"] = self.counts.get(s, 0)
        return row


def evaluate(checkpoint, data: Dataset, cfg: InferenceConfig, split="test") -> SplitReport:
    X, y = data.part(split)
    pred = predict(X, checkpoint.model, checkpoint.ema, cfg).predicted
    tags = data.frequency_tags()
    acc = split_accuracies(pred, y, tags)
    sample_tags = np.asarray(tags, dtype=object)[y]
    counts = {s: int(np.sum(sample_tags == s)) for s in SPLITS}
    counts["overall"] = len(y)
    alpha = 0.0 if cfg.mode == PLAIN else float(cfg.alpha)  # alpha has no effect in plain mode
    return SplitReport(acc[MANY], acc[MEDIUM], acc[FEW], acc["overall"], counts, cfg.mode, alpha)


@dataclass
class SweepTable:
    rows: list  # (alpha, SplitReport), alpha strictly increasing

    def best_alpha(self, metric="overall") -> float:
        """Alpha with the highest score; ties go to the smallest alpha."""
        scores = [getattr(r, metric) for _, r in self.rows]
        return self.rows[int(np.argmax(scores))][0]

    def column(self, metric) -> np.ndarray:
        return np.array([getattr(r, metric) for _, r in self.rows], dtype=float)

    @property
    def alphas(self) -> np.ndarray:
        return np.array([a for a, _ in self.rows])


def alpha_sweep(checkpoint, data: Dataset, alphas, split="val", mode=TDE,
                background=False) -> SweepTable:
    alphas = [float(a) for a in alphas]
    if not alphas:
        raise ValueError("alpha list is empty")
    if any(b <= a for a, b in zip(alphas, alphas[1:])):
        raise ValueError("alphas must be strictly increasing")
    rows = [(a, evaluate(checkpoint, data, InferenceConfig(mode, a, background), split))
            for a in alphas]
    return SweepTable(rows)


@dataclass
class DiagnosticsTable:
    rows: list  # one dict per class


def diagnostics(checkpoint, data: Dataset, split="test") -> DiagnosticsTable:
    """Per-class mean feature magnitude, classifier weight norm and mean cos(x, d_hat)."""
    X, y = data.part(split)
    model = checkpoint.model
    feats = model.features(X)
    norms = np.sqrt(np.sum(feats * feats, axis=1))
    wnorm = safe_norm(model.head.W)
    try:
        cos = decompose(feats, checkpoint.ema.direction()).cos_xd
    except ValueError:
        cos = np.full(len(y), np.nan)
    counts = data.class_counts("train")
    tags = data.frequency_tags()
    rows = []
    for c in range(data.num_classes):
        m = y == c
        rows.append({
            "class": c,
            "train_count": int(counts[c]),
            "split": tags[c],
            "n_eval": int(m.sum()),
            "mean_feature_norm": float(norms[m].mean()) if m.any() else None,
            "weight_norm": float(wnorm[c]),
            "mean_cos_dhat": float(cos[m].mean()) if m.any() else None,
        })
    return DiagnosticsTable(rows)


# -- CSV output ---------------------------------------------------------------
# Every file starts with a "# momentum_tde <kind> v<N>" line, then a fixed header.

SPLITS_COLUMNS = ["label", "mode", "alpha", "many", "medium", "few", "overall",
                  "n_many", "n_medium", "n_few", "n_overall"]
SWEEP_COLUMNS = ["alpha", "many", "medium", "few", "overall"]
DIAG_COLUMNS = ["class", "train_count", "split", "n_eval", "mean_feature_norm",
                "weight_norm", "mean_cos_dhat"]


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def render_csv(kind: str, columns: list, rows: list) -> str:
    buf = io.StringIO()
    buf.write(f"# momentum_tde {kind} v{SCHEMA_VERSION}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r.get(c)) for c in columns])
    return buf.getvalue()


def splits_csv(reports: list) -> str:
    """``reports`` is a list of (label, SplitReport)."""
    return render_csv("splits", SPLITS_COLUMNS,
                      [{"label": lbl, **rep.as_row()} for lbl, rep in reports])


def sweep_csv(table: SweepTable) -> str:
    return render_csv("sweep", SWEEP_COLUMNS,
                      [{**r.as_row(), "alpha": a} for a, r in table.rows])


def diag_csv(table: DiagnosticsTable) -> str:
    return render_csv("diag", DIAG_COLUMNS, table.rows)


def read_csv(path_or_text) -> list:
    """Parse one of our CSVs back into dicts of floats/ints/strings."""
    text = path_or_text
    if "\n" not in str(path_or_text):
        with open(path_or_text) as f:
            text = f.read()
    lines = [ln for ln in text.splitlines() if not ln.startswith("#")]
    out = []
    for r in csv.DictReader(lines):
        d = {}
        for k, v in r.items():
            if v == "":
                d[k] = None
                continue
            try:
                d[k] = int(v)
            except ValueError:
                try:
                    d[k] = float(v)
                except ValueError:
                    d[k] = v
        out.append(d)
    return out
