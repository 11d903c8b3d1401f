"""Long-tailed synthetic datasets, frequency splits, samplers and file formats."""
from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field

import numpy as np

from . import container

TRAIN, VAL, TEST = 0, 1, 2
SPLIT_NAMES = {"train": TRAIN, "val": VAL, "test": TEST}
MANY, MEDIUM, FEW = "many", "medium", "few"

# ImageNet-LT thresholds and the class size they were defined for
BASE_THRESHOLDS = (100.0, 20.0)
BASE_N_MAX = 1280
IMBALANCE_PRESETS = (100, 50, 10)

MAGIC = b"LTDS"


@dataclass(frozen=True)
class DatasetProfile:
    num_classes: int = 20
    n_max: int = 500
    imbalance_ratio: float = 100.0
    dim: int = 64
    noise: float = 0.2
    prototype_seed: int | None = None  # None: derived from the synthesis seed
    n_val_per_class: int = 50
    n_test_per_class: int = 100
    background_fraction: float = 0.0
    background_spread: float = 1.5

    def __post_init__(self):
        if self.num_classes < 1 or self.n_max < 1 or self.dim < 1:
            raise ValueError("num_classes, n_max and dim must be positive")
        if self.imbalance_ratio < 1:
            raise ValueError(f"imbalance ratio must be >= 1, got {self.imbalance_ratio}")
        if self.noise < 0:
            raise ValueError("noise must be non-negative")
        if not 0.0 <= self.background_fraction < 1.0:
            raise ValueError("background_fraction must lie in [0, 1)")
        if self.n_val_per_class < 0 or self.n_test_per_class < 0:
            raise ValueError("val/test sizes must be non-negative")

    def class_counts(self) -> np.ndarray:
        """Train counts of the foreground classes, decaying geometrically."""
        C = self.num_classes
        if C == 1:
            return np.array([self.n_max])
        i = np.arange(C)
        n = np.round(self.n_max * self.imbalance_ratio ** (-i / (C - 1))).astype(np.int64)
        if n.min() < 1:
            raise ValueError(f"class {int(np.argmin(n))} rounds to zero samples")
        return n

    def thresholds(self) -> tuple:
        s = self.n_max / BASE_N_MAX
        return (BASE_THRESHOLDS[0] * s, BASE_THRESHOLDS[1] * s)


def frequency_splits(counts, thresholds=BASE_THRESHOLDS) -> list:
    """many if n > hi, few if n < lo, medium otherwise (both bounds inclusive)."""
    hi, lo = thresholds
    if not hi > lo > 0:
        raise ValueError("thresholds must satisfy hi > lo > 0")
    return [MANY if n > hi else FEW if n < lo else MEDIUM for n in counts]


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    splits: np.ndarray
    num_classes: int
    thresholds: tuple = BASE_THRESHOLDS
    background: bool = False
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.splits = np.asarray(self.splits, dtype=np.int64)
        self.thresholds = tuple(float(t) for t in self.thresholds)
        N = self.features.shape[0]
        if self.features.ndim != 2 or self.labels.shape != (N,) or self.splits.shape != (N,):
            raise ValueError("features/labels/splits lengths disagree")
        if N and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError("label outside [0, num_classes)")
        if not np.all(np.isin(self.splits, (TRAIN, VAL, TEST))):
            raise ValueError("unknown split tag")

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def indices(self, split="train") -> np.ndarray:
        code = SPLIT_NAMES[split] if isinstance(split, str) else split
        return np.flatnonzero(self.splits == code)

    def part(self, split="train"):
        idx = self.indices(split)
        return self.features[idx], self.labels[idx]

    def class_counts(self, split="train") -> np.ndarray:
        return np.bincount(self.labels[self.indices(split)], minlength=self.num_classes)

    def frequency_tags(self) -> list:
        return frequency_splits(self.class_counts("train"), self.thresholds)


def _rng(*key) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(k) for k in key]))


def synthesize(profile: DatasetProfile, seed: int) -> Dataset:
    """Unit-sphere class prototypes plus isotropic Gaussian noise.

    Every class draws one stream of samples; the balanced val and test parts
    are carved off its head before the train part is truncated to the class
    count, so val/test do not depend on the imbalance ratio.
    """
    p = profile
    counts = p.class_counts()
    pseed = seed if p.prototype_seed is None else p.prototype_seed
    protos = _rng(pseed, 0x5EED).standard_normal((p.num_classes, p.dim))
    protos /= np.linalg.norm(protos, axis=1, keepdims=True)
    nv, nt = p.n_val_per_class, p.n_test_per_class
    bg = p.background_fraction > 0
    off = 1 if bg else 0
    feats, labels, splits = [], [], []

    def emit(x, label, n_train):
        feats.append(x)
        labels.append(np.full(len(x), label))
        splits.append(np.repeat([VAL, TEST, TRAIN], [nv, nt, n_train]))

    if bg:
        n_bg = int(round(p.background_fraction / (1.0 - p.background_fraction) * counts.sum()))
        r = _rng(seed, 1, 0)
        m = nv + nt + n_bg
        pick = protos[r.integers(0, p.num_classes, size=m)]
        shrink = r.uniform(0.0, 1.0, size=(m, 1))
        x = shrink * pick + p.noise * p.background_spread * r.standard_normal((m, p.dim))
        emit(x, 0, n_bg)
    for i in range(p.num_classes):
        r = _rng(seed, 2, i)
        x = protos[i] + p.noise * r.standard_normal((nv + nt + p.n_max, p.dim))
        emit(x[:nv + nt + counts[i]], i + off, counts[i])
    meta = {"profile": asdict(p), "seed": int(seed)}
    return Dataset(np.concatenate(feats), np.concatenate(labels), np.concatenate(splits),
                   p.num_classes + off, p.thresholds(), bg, meta)


def instance_balanced_batches(dataset: Dataset, batch_size: int, seed: int, epoch: int = 0):
    """One shuffled pass over the train indices (last batch may be short)."""
    idx = dataset.indices("train")
    if batch_size < 1 or batch_size > len(idx):
        raise ValueError(f"batch size {batch_size} invalid for {len(idx)} train samples")
    perm = idx[_rng(seed, 3, epoch).permutation(len(idx))]
    for s in range(0, len(perm), batch_size):
        yield perm[s:s + batch_size]


def class_balanced_batches(dataset: Dataset, batch_size: int, seed: int, epoch: int = 0,
                           num_batches: int | None = None):
    """Uniform class draw, then a uniform instance of that class (with replacement).

    Defaults to as many batches as an instance-balanced epoch would have.
    """
    idx = dataset.indices("train")
    if batch_size < 1:
        raise ValueError("batch size must be positive")
    by_class = [idx[dataset.labels[idx] == c] for c in range(dataset.num_classes)]
    empty = [c for c, m in enumerate(by_class) if len(m) == 0]
    if empty:
        raise ValueError(f"classes without train samples: {empty}")
    if num_batches is None:
        num_batches = -(-len(idx) // batch_size)
    r = _rng(seed, 4, epoch)
    sizes = np.array([len(m) for m in by_class])
    for _ in range(num_batches):
        cls = r.integers(0, dataset.num_classes, size=batch_size)
        pos = np.floor(r.random(batch_size) * sizes[cls]).astype(np.int64)
        yield np.array([by_class[c][j] for c, j in zip(cls, pos)], dtype=np.int64)


def dataset_to_bytes(ds: Dataset) -> bytes:
    meta = {"num_classes": ds.num_classes, "thresholds": list(ds.thresholds),
            "background": ds.background, "info": ds.meta}
    return container.dumps(MAGIC, meta, {"features": ds.features, "labels": ds.labels,
                                         "splits": ds.splits})


def dataset_from_bytes(data: bytes) -> Dataset:
    meta, arrays = container.loads(MAGIC, data)
    try:
        return Dataset(arrays["features"], arrays["labels"], arrays["splits"],
                       meta["num_classes"], tuple(meta["thresholds"]), meta["background"],
                       meta.get("info", {}))
    except KeyError as e:
        raise container.FormatError(f"dataset file misses {e}") from None


def save_dataset(ds: Dataset, path) -> None:
    with open(path, "wb") as f:
        f.write(dataset_to_bytes(ds))


def load_dataset(path) -> Dataset:
    with open(path, "rb") as f:
        return dataset_from_bytes(f.read())


def load_feature_csv(path, split="train", num_classes=None, thresholds=BASE_THRESHOLDS,
                     background=False) -> Dataset:
    """Pre-extracted features with header ``label,f0,...,f{d-1}``.

    An optional trailing ``split`` column (train/val/test) overrides ``split``.
    """
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    if not rows:
        raise container.FormatError(f"{path}: empty CSV")
    header = [h.strip() for h in rows[0]]
    has_split = header[-1] == "split"
    fcols = header[1:-1] if has_split else header[1:]
    if header[0] != "label" or fcols != [f"f{j}" for j in range(len(fcols))] or not fcols:
        raise container.FormatError(f"{path}: header must be label,f0..f{{d-1}}[,split]")
    labels, feats, splits = [], [], []
    for n, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise container.FormatError(f"{path}:{n}: expected {len(header)} fields")
        try:
            labels.append(int(row[0]))
            feats.append([float(v) for v in row[1:1 + len(fcols)]])
            splits.append(SPLIT_NAMES[row[-1].strip()] if has_split else SPLIT_NAMES[split])
        except (ValueError, KeyError) as e:
            raise container.FormatError(f"{path}:{n}: {e}") from None
    labels = np.array(labels, dtype=np.int64)
    C = int(labels.max()) + 1 if num_classes is None else num_classes
    return Dataset(np.array(feats).reshape(len(labels), len(fcols)), labels,
                   np.array(splits, dtype=np.int64), C, thresholds, background,
                   {"source": str(path)})
