"""Black-box evaluation metrics over a prediction set, plus threshold utilities.

Every metric is registered with an orientation; `evaluate_metric` negates
minimize-oriented values exactly once so callers always maximize. Flagging is
strict (score > threshold) throughout.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

POST_SHIFT_SEARCH_ITERS = 64


class MetricError(ValueError):
    """The bundle cannot support the requested metric (empty class/bucket/group)."""


@dataclass(frozen=True)
class EvalBundle:
    """Model outputs and ground truth for one split.

    scores: (n,) decision scores, or (n, C) logits for multiclass metrics.
    """

    scores: np.ndarray
    labels: np.ndarray
    groups: np.ndarray | None = None
    aux_scores: np.ndarray | None = None

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=np.float64)
        labels = np.asarray(self.labels)
        n = labels.shape[0]
        if scores.shape[0] != n:
            raise ValueError("scores and labels must be aligned")
        for name in ("groups", "aux_scores"):
            arr = getattr(self, name)
            if arr is not None and np.asarray(arr).shape[0] != n:
                raise ValueError(f"{name} must be aligned with labels")
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "labels", labels)

    @property
    def n(self) -> int:
        return self.labels.shape[0]


def precision_at_recall(b: EvalBundle, target_recall: float) -> float:
    """Precision at the largest threshold whose recall meets the target.

    Flagged = {score > t}; among thresholds achieving recall >= target_recall
    the largest wins, which flags the fewest examples.
    """
    labels = np.asarray(b.labels).astype(np.int64)
    pos = labels == 1
    n_pos = int(pos.sum())
    if n_pos == 0:
        raise MetricError("precision_at_recall requires at least one positive")
    order = np.argsort(-b.scores, kind="stable")
    sorted_scores = b.scores[order]
    tp_cum = np.cumsum(pos[order])
    # candidate thresholds: each unique score (flagging everything strictly
    # above it) from high to low; index i flags the first i+1 sorted examples
    # when score[i] > score[i+1].
    boundary = np.flatnonzero(np.diff(sorted_scores) != 0)
    cut_idx = np.concatenate([boundary, [b.n - 1]])  # last cut flags all
    recalls = tp_cum[cut_idx] / n_pos
    ok = np.flatnonzero(recalls >= target_recall)
    i = cut_idx[ok[0]]
    return float(tp_cum[i] / (i + 1))


def max_per_class_error(b: EvalBundle) -> float:
    """Largest within-class error rate; predictions are argmax over logits."""
    labels = np.asarray(b.labels).astype(np.int64)
    if b.scores.ndim == 2:
        preds = b.scores.argmax(axis=1)
    else:
        preds = np.rint(b.scores).astype(np.int64)
    n_classes = int(labels.max()) + 1
    counts = np.bincount(labels, minlength=n_classes)
    if np.any(counts == 0):
        raise MetricError(f"classes {np.flatnonzero(counts == 0).tolist()} absent from labels")
    wrong = np.bincount(labels[preds != labels], minlength=n_classes)
    return float((wrong / counts).max())


def worst_quartile_relative_error(b: EvalBundle, thresholds) -> float:
    """Max over 4 label buckets of the mean |pred/label - 1|.

    Labels must be positive and in original units (back-transform predictions
    before building the bundle). Buckets are label <= t1, t1 < label <= t2, ...
    """
    thresholds = np.asarray(thresholds, dtype=np.float64)
    if thresholds.shape != (3,) or np.any(np.diff(thresholds) <= 0):
        raise ValueError("need 3 increasing label thresholds")
    labels = np.asarray(b.labels, dtype=np.float64)
    if np.any(labels <= 0):
        raise MetricError("labels must be positive for relative error")
    bucket = np.searchsorted(thresholds, labels, side="left")
    rel = np.abs(b.scores / labels - 1.0)
    worst = 0.0
    for q in range(4):
        mask = bucket == q
        if not mask.any():
            raise MetricError(f"label bucket {q} is empty")
        worst = max(worst, float(rel[mask].mean()))
    return worst


def _group_fpr(scores, labels, groups, thresholds: dict) -> dict:
    fprs = {}
    for g in np.unique(groups):
        neg = (groups == g) & (labels == 0)
        if not neg.any():
            raise MetricError(f"group {g} has no negatives")
        fprs[int(g)] = float((scores[neg] > thresholds[int(g)]).mean())
    return fprs


def fairness_violation_fpr_gap(b: EvalBundle, threshold) -> float:
    """Highest minus lowest per-group false-positive rate.

    `threshold` is a global scalar or a {group id: threshold} mapping.
    """
    if b.groups is None:
        raise MetricError("fairness metric requires group ids")
    groups = np.asarray(b.groups)
    labels = np.asarray(b.labels).astype(np.int64)
    if isinstance(threshold, dict):
        per_group = {int(g): float(threshold[int(g)]) for g in np.unique(groups)}
    else:
        per_group = {int(g): float(threshold) for g in np.unique(groups)}
    fprs = _group_fpr(b.scores, labels, groups, per_group)
    return max(fprs.values()) - min(fprs.values())


def threshold_at_coverage(scores: np.ndarray, coverage: float) -> float:
    """Smallest threshold t with fraction(scores > t) <= coverage."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size == 0:
        raise ValueError("scores must be nonempty")
    if not 0.0 < coverage <= 1.0:
        raise ValueError("coverage must be in (0, 1]")
    uniq = np.unique(scores)
    candidates = np.concatenate([[uniq[0] - 1.0], uniq])
    # fraction strictly above candidate k: count of scores > candidates[k]
    above = scores.size - np.searchsorted(np.sort(scores), candidates, side="right")
    ok = np.flatnonzero(above / scores.size <= coverage)
    return float(candidates[ok[0]])


def accuracy_at_best_threshold(b: EvalBundle) -> float:
    """Binary accuracy maximized over thresholds at observed scores.

    Exhaustive search over {unique scores} plus an all-flagged threshold.
    """
    labels = np.asarray(b.labels).astype(np.int64)
    uniq = np.unique(b.scores)
    best = 0.0
    for t in np.concatenate([[uniq[0] - 1.0], uniq]):
        acc = float(((b.scores > t).astype(np.int64) == labels).mean())
        best = max(best, acc)
    return best


def post_shift_thresholds(train_bundle: EvalBundle, coverage: float) -> dict:
    """Per-group thresholds equalizing group FPR at a fixed overall coverage.

    Bisects a common target FPR; each group takes the threshold whose FPR is
    nearest the target (ties to the higher threshold). Overall flagged
    fraction is monotone in the target, so the search is exact on finite
    score sets; if the coverage is unattainable the nearest achievable
    thresholds are returned.
    """
    if train_bundle.groups is None:
        raise MetricError("post-shift requires group ids")
    scores = train_bundle.scores
    labels = np.asarray(train_bundle.labels).astype(np.int64)
    groups = np.asarray(train_bundle.groups)
    ids = [int(g) for g in np.unique(groups)]

    # per group: candidate thresholds (descending) and their FPRs (ascending)
    tables = {}
    for g in ids:
        in_g = groups == g
        neg = in_g & (labels == 0)
        if not neg.any():
            raise MetricError(f"group {g} has no negatives")
        uniq = np.unique(scores[in_g])
        cands = np.concatenate([uniq[::-1], [uniq[0] - 1.0]])  # descending thresholds
        neg_sorted = np.sort(scores[neg])
        fprs = (neg.sum() - np.searchsorted(neg_sorted, cands, side="right")) / neg.sum()
        tables[g] = (cands, fprs)

    def pick(target_fpr: float) -> dict:
        chosen = {}
        for g, (cands, fprs) in tables.items():
            gaps = np.abs(fprs - target_fpr)
            chosen[g] = float(cands[np.argmin(gaps)])  # first min = higher threshold
        return chosen

    def flagged_fraction(thresholds: dict) -> float:
        flags = 0
        for g in ids:
            in_g = groups == g
            flags += int((scores[in_g] > thresholds[g]).sum())
        return flags / scores.size

    lo, hi = 0.0, 1.0
    best = (np.inf, pick(0.0))
    for _ in range(POST_SHIFT_SEARCH_ITERS):
        mid = 0.5 * (lo + hi)
        thresholds = pick(mid)
        frac = flagged_fraction(thresholds)
        gap = abs(frac - coverage)
        if gap < best[0]:
            best = (gap, thresholds)
        if frac < coverage:
            lo = mid
        else:
            hi = mid
    for edge in (lo, hi, 1.0):
        thresholds = pick(edge)
        gap = abs(flagged_fraction(thresholds) - coverage)
        if gap < best[0]:
            best = (gap, thresholds)
    return best[1]


def accuracy_with_thresholds(b: EvalBundle, thresholds: dict) -> float:
    """Binary accuracy under per-group decision thresholds."""
    if b.groups is None:
        raise MetricError("per-group thresholds require group ids")
    groups = np.asarray(b.groups)
    labels = np.asarray(b.labels).astype(np.int64)
    preds = np.zeros(b.n, dtype=np.int64)
    for g in np.unique(groups):
        in_g = groups == g
        preds[in_g] = (b.scores[in_g] > thresholds[int(g)]).astype(np.int64)
    return float((preds == labels).mean())


def mean_aux_of_flagged(b: EvalBundle, coverage: float) -> float:
    """Mean fine-grained score over examples flagged at the coverage threshold."""
    if b.aux_scores is None:
        raise MetricError("mean_aux_of_flagged requires aux_scores")
    t = threshold_at_coverage(b.scores, coverage)
    flagged = b.scores > t
    if not flagged.any():
        raise MetricError("no examples flagged at the requested coverage")
    return float(np.asarray(b.aux_scores)[flagged].mean())


# --- registry ---------------------------------------------------------------

@dataclass(frozen=True)
class MetricSpec:
    """Named metric plus its parameter map, as referenced from experiment configs."""

    name: str
    params: dict = field(default_factory=dict)


def _fairness_from_bundle(b: EvalBundle, params, train_bundle):
    mode = params.get("threshold", "best_accuracy")
    if mode == "best_accuracy":
        labels = np.asarray(b.labels).astype(np.int64)
        uniq = np.unique(b.scores)
        cands = np.concatenate([[uniq[0] - 1.0], uniq])
        best_t, best_acc = cands[0], -1.0
        for t in cands:
            acc = float(((b.scores > t).astype(np.int64) == labels).mean())
            if acc > best_acc:
                best_t, best_acc = t, acc
        return fairness_violation_fpr_gap(b, best_t)
    return fairness_violation_fpr_gap(b, mode)


def _post_shift_accuracy(b: EvalBundle, params, train_bundle):
    if train_bundle is None:
        raise MetricError("post_shift_accuracy needs training-split scores")
    thresholds = post_shift_thresholds(train_bundle, params["coverage"])
    return accuracy_with_thresholds(b, thresholds)


# name -> (fn(bundle, params, train_bundle), orientation, needs_train_scores)
_REGISTRY = {
    "precision_at_recall": (
        lambda b, p, tb: precision_at_recall(b, p["target_recall"]), "maximize", False),
    "max_per_class_error": (
        lambda b, p, tb: max_per_class_error(b), "minimize", False),
    "worst_quartile_relative_error": (
        lambda b, p, tb: worst_quartile_relative_error(b, p["thresholds"]), "minimize", False),
    "fairness_violation": (_fairness_from_bundle, "minimize", False),
    "accuracy": (
        lambda b, p, tb: accuracy_at_best_threshold(b), "maximize", False),
    "post_shift_accuracy": (_post_shift_accuracy, "maximize", True),
    "mean_aux_of_flagged": (
        lambda b, p, tb: mean_aux_of_flagged(b, p["coverage"]), "maximize", False),
}


def metric_names() -> tuple[str, ...]:
    return tuple(_REGISTRY)


def metric_needs_train_scores(spec: MetricSpec) -> bool:
    return _REGISTRY[spec.name][2]


def metric_orientation(spec: MetricSpec) -> str:
    return _REGISTRY[spec.name][1]


def evaluate_metric(spec: MetricSpec, bundle: EvalBundle,
                    train_bundle: EvalBundle | None = None) -> float:
    """Evaluate a named metric, returned so that larger is always better."""
    if spec.name not in _REGISTRY:
        raise ValueError(f"unknown metric {spec.name!r}; known: {sorted(_REGISTRY)}")
    fn, orientation, _ = _REGISTRY[spec.name]
    value = fn(bundle, spec.params, train_bundle)
    return -value if orientation == "minimize" else value
