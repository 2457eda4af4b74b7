"""Example-weighting function, importance-ratio estimation, and baseline weightings.

A weighting is parameterized by a low-dimensional coefficient vector `alpha`
confined to an L2 ball: each example's weight is its label importance ratio
times a sigmoid of the embedded example dotted with alpha, rescaled to mean 1
over the training set.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

IMPORTANCE_KINDS = ("class_ratio", "histogram", "constant_one", "user_supplied")
RATIO_FLOOR = 1e-3
HISTOGRAM_BINS = 10


class ImportanceEstimationError(ValueError):
    """Validation labels fall where the train distribution has no support."""


@dataclass(frozen=True)
class ImportanceTable:
    """Per-label importance ratios pi(y) = p_val(y) / p_train(y).

    class_ratio uses a per-class ratio vector, histogram uses equal-frequency
    bins of the train labels, constant_one is uniform, and user_supplied holds
    a per-example ratio vector aligned with the training set.
    """

    kind: str
    class_ratios: np.ndarray | None = None
    bin_edges: np.ndarray | None = None
    bin_ratios: np.ndarray | None = None
    per_example: np.ndarray | None = None
    floor: float = RATIO_FLOOR

    def __post_init__(self):
        if self.kind not in IMPORTANCE_KINDS:
            raise ValueError(f"kind must be one of {IMPORTANCE_KINDS}")
        for arr in (self.class_ratios, self.bin_ratios, self.per_example):
            if arr is not None and (not np.all(np.isfinite(arr)) or np.any(arr < self.floor)):
                raise ValueError("importance ratios must be finite and >= floor")

    def ratios_for(self, ds) -> np.ndarray:
        """Per-example ratio vector for a dataset."""
        if self.kind == "constant_one":
            return np.ones(ds.n)
        if self.kind == "class_ratio":
            labels = ds.labels.astype(np.int64)
            if labels.max() >= self.class_ratios.shape[0]:
                raise ImportanceEstimationError(
                    f"class {int(labels.max())} absent from the estimation train labels")
            return self.class_ratios[labels]
        if self.kind == "histogram":
            bins = np.searchsorted(self.bin_edges, ds.labels, side="left")
            return self.bin_ratios[bins]
        if self.per_example.shape[0] != ds.n:
            raise ValueError(f"user-supplied ratios have length "
                             f"{self.per_example.shape[0]}, dataset has {ds.n}")
        return self.per_example


def estimate_importance(train_labels: np.ndarray, val_labels: np.ndarray,
                        kind: str = "class_ratio") -> ImportanceTable:
    """Estimate pi(y) from empirical label frequencies of the two splits.

    class_ratio: per-class frequency ratios; a class present in train but
    absent from validation gets the floor; a class present in validation but
    absent from train raises. histogram: 10 equal-frequency bins of the train
    labels, per-bin frequency ratios, floor-clamped.
    """
    train_labels = np.asarray(train_labels)
    val_labels = np.asarray(val_labels)
    if train_labels.size == 0 or val_labels.size == 0:
        raise ValueError("label vectors must be nonempty")
    if kind == "constant_one":
        return ImportanceTable(kind="constant_one")
    if kind == "class_ratio":
        t = train_labels.astype(np.int64)
        v = val_labels.astype(np.int64)
        n_classes = int(max(t.max(), v.max())) + 1
        t_count = np.bincount(t, minlength=n_classes)
        v_count = np.bincount(v, minlength=n_classes)
        orphans = np.flatnonzero((v_count > 0) & (t_count == 0))
        if orphans.size:
            raise ImportanceEstimationError(
                f"validation classes {orphans.tolist()} absent from train")
        t_freq = t_count / t.shape[0]
        v_freq = v_count / v.shape[0]
        ratios = np.maximum(np.divide(v_freq, t_freq, out=np.zeros(n_classes),
                                      where=t_freq > 0), RATIO_FLOOR)
        return ImportanceTable(kind="class_ratio", class_ratios=ratios)
    if kind == "histogram":
        qs = np.arange(1, HISTOGRAM_BINS) / HISTOGRAM_BINS
        edges = np.quantile(train_labels, qs)
        t_bins = np.searchsorted(edges, train_labels, side="left")
        v_bins = np.searchsorted(edges, val_labels, side="left")
        t_freq = np.bincount(t_bins, minlength=HISTOGRAM_BINS) / train_labels.shape[0]
        v_freq = np.bincount(v_bins, minlength=HISTOGRAM_BINS) / val_labels.shape[0]
        if np.any(t_freq == 0):
            raise ImportanceEstimationError("empty train histogram bin (degenerate labels)")
        ratios = np.maximum(v_freq / t_freq, RATIO_FLOOR)
        return ImportanceTable(kind="histogram", bin_edges=edges, bin_ratios=ratios)
    raise ValueError(f"unknown importance kind {kind!r}")


def user_importance(per_example_ratios: np.ndarray) -> ImportanceTable:
    ratios = np.maximum(np.asarray(per_example_ratios, dtype=np.float64), RATIO_FLOOR)
    return ImportanceTable(kind="user_supplied", per_example=ratios)


def eval_weights(alpha: np.ndarray, ds, embedder, pi: ImportanceTable) -> np.ndarray:
    """Example weights pi(y_j) * sigmoid(z_j . alpha), rescaled to mean 1.

    Strictly positive; with alpha = 0 this reduces exactly to the normalized
    importance weighting.
    """
    alpha = np.asarray(alpha, dtype=np.float64)
    if ds.n < 1:
        raise ValueError("dataset is empty")
    if alpha.shape != (embedder.dim,):
        raise ValueError(f"alpha has dimension {alpha.shape}, embedder dimension is {embedder.dim}")
    z = embedder.embed(ds.features, ds.labels)
    raw = pi.ratios_for(ds) * expit(z @ alpha)
    return raw / raw.mean()


def weight_normalizer(alpha: np.ndarray, ds, embedder, pi: ImportanceTable) -> float:
    """Mean pre-normalization weight over `ds` (the constant eval_weights divides by)."""
    alpha = np.asarray(alpha, dtype=np.float64)
    z = embedder.embed(ds.features, ds.labels)
    return float((pi.ratios_for(ds) * expit(z @ alpha)).mean())


BASELINE_KINDS = ("uniform", "random", "importance", "user")


def baseline_weights(ds, kind: str, seed: int | None = None,
                     pi: ImportanceTable | None = None,
                     path=None) -> np.ndarray:
    """Reference weightings, each normalized to mean 1 over the dataset.

    uniform: all ones. random: i.i.d. Uniform(0,1) draws. importance: pi(y).
    user: one positive real per line, row-aligned with the training data (for
    analytically known density ratios).
    """
    if ds.n < 1:
        raise ValueError("dataset is empty")
    if kind == "uniform":
        return np.ones(ds.n)
    if kind == "random":
        if seed is None:
            raise ValueError("random baseline requires a seed")
        w = np.random.default_rng(seed).random(ds.n)
        return w / w.mean()
    if kind == "importance":
        if pi is None:
            raise ValueError("importance baseline requires an ImportanceTable")
        w = pi.ratios_for(ds)
        return w / w.mean()
    if kind == "user":
        if path is None:
            raise ValueError("user baseline requires a weights file")
        with open(path, encoding="utf-8") as fh:
            w = np.array([float(line) for line in fh if line.strip()])
        if w.shape[0] != ds.n:
            raise ValueError(f"weights file has {w.shape[0]} rows, dataset has {ds.n}")
        if np.any(w <= 0) or not np.all(np.isfinite(w)):
            raise ValueError("user weights must be positive finite reals")
        return w / w.mean()
    raise ValueError(f"unknown baseline kind {kind!r}")
