"""Dataset ingestion, splitting, synthetic toy generation and label transforms."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np


class SchemaError(ValueError):
    """CSV header does not match the declared column roles."""


class ParseError(ValueError):
    """A CSV cell could not be parsed; message names row and column."""


_ROLES = {"feature", "label", "group", "aux_score", "split"}
_SPLITS = ("train", "validation", "test")


@dataclass(frozen=True)
class Dataset:
    """An immutable split of examples.

    features : (n, D) float array, all entries finite
    labels   : (n,) float array (numeric targets) or int array (class indices)
    groups   : optional (n,) int array of small group ids
    aux_scores : optional (n,) float array in [0, 1]
    role     : "train" | "validation" | "test"
    """

    features: np.ndarray
    labels: np.ndarray
    groups: np.ndarray | None = None
    aux_scores: np.ndarray | None = None
    role: str = "train"

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float64)
        if feats.ndim != 2 or feats.shape[0] < 1:
            raise ValueError(f"features must be a nonempty 2-d matrix, got shape {feats.shape}")
        if not np.all(np.isfinite(feats)):
            raise ValueError("features contain non-finite entries")
        labels = np.asarray(self.labels)
        if labels.dtype.kind in "iu":
            labels = labels.astype(np.int64)
            if labels.size and labels.min() < 0:
                raise ValueError("class indices must be >= 0")
        else:
            labels = labels.astype(np.float64)
            if not np.all(np.isfinite(labels)):
                raise ValueError("labels contain non-finite entries")
        if labels.shape != (feats.shape[0],):
            raise ValueError("labels must be a length-n vector")
        if self.role not in _SPLITS:
            raise ValueError(f"role must be one of {_SPLITS}, got {self.role!r}")
        groups = self.groups
        if groups is not None:
            groups = np.asarray(groups, dtype=np.int64)
            if groups.shape != (feats.shape[0],):
                raise ValueError("groups must have length n")
        aux = self.aux_scores
        if aux is not None:
            aux = np.asarray(aux, dtype=np.float64)
            if aux.shape != (feats.shape[0],):
                raise ValueError("aux_scores must have length n")
        for arr in (feats, labels, groups, aux):
            if arr is not None:
                arr.setflags(write=False)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "groups", groups)
        object.__setattr__(self, "aux_scores", aux)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def n_classes(self) -> int:
        if self.labels.dtype.kind != "i":
            raise ValueError("n_classes is only defined for class-indexed labels")
        return int(self.labels.max()) + 1

    def subset(self, idx: np.ndarray, role: str | None = None) -> "Dataset":
        return Dataset(
            features=self.features[idx],
            labels=self.labels[idx],
            groups=None if self.groups is None else self.groups[idx],
            aux_scores=None if self.aux_scores is None else self.aux_scores[idx],
            role=role or self.role,
        )


@dataclass(frozen=True)
class ToySpec:
    """Two-feature synthetic task with shifted train and validation/test marginals.

    Features are drawn per split from beta distributions (one (a, b) pair per
    feature); the clean class boundary is the anti-diagonal x1 + x2 = 1, with
    the positive class above it, and each label is flipped independently with
    probability `label_noise`.
    """

    n_train: int = 5000
    n_val: int = 1000
    n_test: int = 5000
    beta_train: tuple[tuple[float, float], ...] = ((2.0, 1.0), (2.0, 1.0))
    beta_test: tuple[tuple[float, float], ...] = ((1.0, 2.0), (1.0, 2.0))
    label_noise: float = 0.15
    seed: int = 0

    def __post_init__(self):
        for n in (self.n_train, self.n_val, self.n_test):
            if n < 1:
                raise ValueError("split sizes must be positive")
        for pair in (*self.beta_train, *self.beta_test):
            if pair[0] <= 0 or pair[1] <= 0:
                raise ValueError("beta parameters must be > 0")
        if not 0.0 <= self.label_noise < 0.5:
            raise ValueError("label_noise must be in [0, 0.5)")


def _draw_toy_split(rng: np.random.Generator, n: int, betas, noise: float, role: str) -> Dataset:
    cols = [rng.beta(a, b, size=n) for a, b in betas]
    feats = np.column_stack(cols)
    clean = (feats[:, 0] + feats[:, 1] > 1.0).astype(np.int64)
    flips = rng.random(n) < noise
    labels = np.where(flips, 1 - clean, clean)
    return Dataset(features=feats, labels=labels, role=role)


def generate_toy(spec: ToySpec) -> tuple[Dataset, Dataset, Dataset]:
    """Draw (train, validation, test) splits; deterministic given spec.seed.

    Each split consumes an independent random stream, so changing one split
    size leaves the other splits' draws untouched.
    """
    streams = np.random.SeedSequence(spec.seed).spawn(3)
    train = _draw_toy_split(np.random.default_rng(streams[0]), spec.n_train,
                            spec.beta_train, spec.label_noise, "train")
    val = _draw_toy_split(np.random.default_rng(streams[1]), spec.n_val,
                          spec.beta_test, spec.label_noise, "validation")
    test = _draw_toy_split(np.random.default_rng(streams[2]), spec.n_test,
                           spec.beta_test, spec.label_noise, "test")
    return train, val, test


def load_csv(path, schema: dict[str, str], role: str = "train",
             label_kind: str = "numeric") -> Dataset:
    """Load one Dataset from a headered CSV file.

    `schema` maps header names to roles: feature, label, group, aux_score or
    split. When a split column is declared, only rows whose split value equals
    `role` are kept. Class labels (label_kind "class") and group ids are mapped
    to dense indices in order of first appearance over the whole file.
    """
    for col, r in schema.items():
        if r not in _ROLES:
            raise SchemaError(f"unknown role {r!r} for column {col!r}")
    if "label" not in schema.values():
        raise SchemaError("schema declares no label column")
    if label_kind not in ("numeric", "class"):
        raise ValueError(f"label_kind must be 'numeric' or 'class', got {label_kind!r}")

    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        missing = [c for c in schema if c not in header]
        if missing:
            raise SchemaError(f"{path}: columns {missing} not found in header {header}")
        col_idx = {c: header.index(c) for c in schema}
        feature_cols = [c for c in header if schema.get(c) == "feature"]
        label_col = next(c for c in schema if schema[c] == "label")
        group_col = next((c for c in schema if schema[c] == "group"), None)
        aux_col = next((c for c in schema if schema[c] == "aux_score"), None)
        split_col = next((c for c in schema if schema[c] == "split"), None)

        feats, raw_labels, raw_groups, aux = [], [], [], []
        for rownum, row in enumerate(reader, start=2):
            if split_col is not None and row[col_idx[split_col]] != role:
                continue
            vals = []
            for c in feature_cols:
                cell = row[col_idx[c]]
                try:
                    v = float(cell)
                except ValueError:
                    raise ParseError(f"{path}: row {rownum}, column {c!r}: "
                                     f"cannot parse {cell!r} as a real") from None
                if not math.isfinite(v):
                    raise ParseError(f"{path}: row {rownum}, column {c!r}: non-finite value")
                vals.append(v)
            feats.append(vals)
            raw_labels.append(row[col_idx[label_col]])
            if group_col is not None:
                raw_groups.append(row[col_idx[group_col]])
            if aux_col is not None:
                cell = row[col_idx[aux_col]]
                try:
                    aux.append(float(cell))
                except ValueError:
                    raise ParseError(f"{path}: row {rownum}, column {aux_col!r}: "
                                     f"cannot parse {cell!r} as a real") from None

    if not feats:
        raise ParseError(f"{path}: no rows for role {role!r}")

    if label_kind == "class":
        labels = np.array(_dense_indices(raw_labels), dtype=np.int64)
    else:
        labels = np.empty(len(raw_labels))
        for i, cell in enumerate(raw_labels):
            try:
                labels[i] = float(cell)
            except ValueError:
                raise ParseError(f"{path}: row {i + 2}, column {label_col!r}: "
                                 f"cannot parse {cell!r} as a real") from None
    groups = np.array(_dense_indices(raw_groups), dtype=np.int64) if group_col else None
    return Dataset(
        features=np.asarray(feats, dtype=np.float64),
        labels=labels,
        groups=groups,
        aux_scores=np.asarray(aux) if aux_col else None,
        role=role,
    )


def _dense_indices(values) -> list[int]:
    """Map values to 0-based indices in order of first appearance."""
    seen: dict = {}
    out = []
    for v in values:
        if v not in seen:
            seen[v] = len(seen)
        out.append(seen[v])
    return out


def transform_labels(ds: Dataset, kind: str) -> Dataset:
    """Apply an elementwise label transform ("identity" or "log").

    The inverse (for scoring in original units) is `invert_labels`.
    """
    if kind == "identity":
        return ds
    if kind != "log":
        raise ValueError(f"unknown label transform {kind!r}")
    labels = ds.labels.astype(np.float64)
    if np.any(labels <= 0):
        raise ValueError("log transform requires strictly positive labels")
    return replace(ds, labels=np.log(labels))


def invert_labels(values: np.ndarray, kind: str) -> np.ndarray:
    """Map transformed-label-space values back to original units."""
    if kind == "identity":
        return values
    if kind != "log":
        raise ValueError(f"unknown label transform {kind!r}")
    return np.exp(values)


@dataclass(frozen=True)
class Standardizer:
    """Per-column affine feature scaling fit on the training split."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, train: Dataset) -> "Standardizer":
        mean = train.features.mean(axis=0)
        std = train.features.std(axis=0)
        std = np.where(std > 0, std, 1.0)  # constant columns pass through
        return cls(mean=mean, std=std)

    def transform(self, ds: Dataset) -> Dataset:
        return replace(ds, features=(ds.features - self.mean) / self.std)

    def apply(self, features: np.ndarray) -> np.ndarray:
        return (features - self.mean) / self.std


def standardize_splits(train: Dataset, *others: Dataset):
    """Standardize all splits with statistics computed on `train`."""
    scaler = Standardizer.fit(train)
    return (scaler.transform(train), *(scaler.transform(ds) for ds in others)), scaler
