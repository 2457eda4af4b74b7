"""End-to-end weighting search: batches of candidates, weighted trainings,
black-box metric scoring, and best-of-N baselines.

Every stochastic piece is seeded from (master seed, repeat, batch, candidate,
stage), so candidate trainings can run in parallel without perturbing results.
"""

from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from multiprocessing import get_context
from zlib import crc32

import numpy as np

from . import embed as embed_mod
from . import gpr, metrics, nn, search
from . import weights as weights_mod
from .data import (Dataset, ToySpec, generate_toy, invert_labels, load_csv,
                   standardize_splits, transform_labels)

NOISE_ESTIMATION_SEEDS = 5
MOEW_METHOD = "moew"


class RunError(RuntimeError):
    """Every candidate in a batch diverged; the search cannot continue."""


def derive_seed(*parts) -> int:
    """Deterministic seed from a mixed tuple of ints and stage names."""
    ints = [crc32(p.encode()) if isinstance(p, str) else int(p) for p in parts]
    return int(np.random.SeedSequence(ints).generate_state(1)[0])


@dataclass(frozen=True)
class CsvSource:
    """CSV-backed splits: either three files or one file with a split column."""

    train_path: str
    validation_path: str | None = None
    test_path: str | None = None
    schema: dict = field(default_factory=dict)
    label_transform: str = "identity"
    subsample_train: int | None = None
    subsample_validation: int | None = None
    subsample_test: int | None = None


@dataclass(frozen=True)
class EmbeddingConfig:
    """Which (x, y) embedding backs the weighting function."""

    kind: str = "autoencoder"          # autoencoder | label_passthrough
    dim: int = 2
    hidden: tuple[int, ...] = (10,)    # encoder hiddens, mirrored in the decoder
    feature_loss_weight: float = 0.5
    train: nn.TrainConfig = nn.TrainConfig()

    def __post_init__(self):
        if self.kind not in ("autoencoder", "label_passthrough"):
            raise ValueError(f"unknown embedding kind {self.kind!r}")
        if self.dim < 1:
            raise ValueError("embedding dim must be >= 1")


@dataclass(frozen=True)
class ExperimentConfig:
    data: ToySpec | CsvSource
    metric: metrics.MetricSpec
    label_kind: str                    # numeric | binary | multiclass
    hidden_layers: tuple[int, ...]
    train: nn.TrainConfig
    embedding: EmbeddingConfig
    importance: str = "class_ratio"    # class_ratio | histogram | constant_one | user
    batches: int = 10
    bucb: search.BucbConfig = search.BucbConfig()
    generator: str = "bucb"            # bucb | random | grid
    grid_epsilon: float = 0.5
    baselines: tuple[tuple[str, int], ...] = ()
    user_weights_path: str | None = None
    repeats: int = 1
    seed: int = 0
    standardize: bool = True

    def __post_init__(self):
        if self.batches < 1:
            raise ValueError("batches must be >= 1")
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")
        if self.label_kind not in embed_mod.LABEL_KINDS:
            raise ValueError(f"label_kind must be one of {embed_mod.LABEL_KINDS}")
        if self.generator not in ("bucb", "random", "grid"):
            raise ValueError(f"unknown generator {self.generator!r}")
        for kind, budget in self.baselines:
            if kind not in weights_mod.BASELINE_KINDS:
                raise ValueError(f"unknown baseline kind {kind!r}")
            if budget < 1:
                raise ValueError("baseline budgets must be >= 1")


@dataclass(frozen=True)
class RunRecord:
    method: str
    repeat: int
    batch: int
    candidate: int
    alpha: np.ndarray | None
    val_metric: float
    test_metric: float
    wall_time: float

    def key(self):
        """Everything that determinism contracts compare (wall time excluded)."""
        alpha = None if self.alpha is None else tuple(self.alpha.tolist())
        return (self.method, self.repeat, self.batch, self.candidate, alpha,
                self.val_metric, self.test_metric)


@dataclass(frozen=True)
class ResolvedData:
    """Splits ready for training plus original-unit labels for metric bundles."""

    train: Dataset
    validation: Dataset
    test: Dataset
    metric_labels: dict                 # split name -> original-unit labels
    label_transform: str
    scaler_mean: np.ndarray | None
    scaler_std: np.ndarray | None


_CSV_CACHE: dict = {}


def _load_csv_cached(path, schema, role, label_kind):
    key = (str(path), tuple(sorted(schema.items())), role, label_kind)
    if key not in _CSV_CACHE:
        _CSV_CACHE[key] = load_csv(path, schema, role=role, label_kind=label_kind)
    return _CSV_CACHE[key]


def resolve_data(cfg: ExperimentConfig, repeat: int) -> ResolvedData:
    """Load or generate the three splits for one repeat.

    Toy data is redrawn per repeat; CSV data is loaded once and subsampled per
    repeat when subsample sizes are configured. Features are standardized with
    train statistics, labels transformed for training with originals kept for
    metric evaluation.
    """
    if isinstance(cfg.data, ToySpec):
        spec = replace(cfg.data, seed=derive_seed(cfg.seed, repeat, "data"))
        train, val, test = generate_toy(spec)
        transform = "identity"
    else:
        src = cfg.data
        csv_label_kind = "numeric" if cfg.label_kind == "numeric" else "class"
        train = _load_csv_cached(src.train_path, src.schema, "train", csv_label_kind)
        val = _load_csv_cached(src.validation_path or src.train_path, src.schema,
                               "validation", csv_label_kind)
        test = _load_csv_cached(src.test_path or src.train_path, src.schema,
                                "test", csv_label_kind)
        splits = []
        for ds, size, name in ((train, src.subsample_train, "train"),
                               (val, src.subsample_validation, "validation"),
                               (test, src.subsample_test, "test")):
            if size is not None and size < ds.n:
                rng = np.random.default_rng(derive_seed(cfg.seed, repeat, "subsample", name))
                idx = np.sort(rng.choice(ds.n, size=size, replace=False))
                ds = ds.subset(idx)
            splits.append(ds)
        train, val, test = splits
        transform = src.label_transform

    metric_labels = {"train": train.labels, "validation": val.labels, "test": test.labels}
    if transform != "identity":
        train = transform_labels(train, transform)
        val = transform_labels(val, transform)
        test = transform_labels(test, transform)
    scaler_mean = scaler_std = None
    if cfg.standardize:
        (train, val, test), scaler = standardize_splits(train, val, test)
        scaler_mean, scaler_std = scaler.mean, scaler.std
    return ResolvedData(train=train, validation=val, test=test,
                        metric_labels=metric_labels, label_transform=transform,
                        scaler_mean=scaler_mean, scaler_std=scaler_std)


def build_arch(cfg: ExperimentConfig, train: Dataset) -> nn.MlpArchitecture:
    out = train.n_classes if cfg.train.loss == "cross_entropy" else 1
    return nn.MlpArchitecture((train.n_features, *cfg.hidden_layers, out),
                              nn.output_kind_for(cfg.train.loss))


def build_embedder(cfg: ExperimentConfig, data: ResolvedData, seed: int):
    if cfg.embedding.kind == "label_passthrough":
        return embed_mod.label_passthrough_embedder(data.train.labels)
    width = data.train.n_features + embed_mod.label_width(
        cfg.label_kind,
        data.train.n_classes if cfg.label_kind == "multiclass" else None)
    sizes = (width, *cfg.embedding.hidden, cfg.embedding.dim,
             *reversed(cfg.embedding.hidden), width)
    ae_cfg = embed_mod.AutoencoderConfig(
        layer_sizes=sizes, label_kind=cfg.label_kind,
        feature_loss_weight=cfg.embedding.feature_loss_weight,
        train=replace(cfg.embedding.train, seed=seed))
    return embed_mod.train_autoencoder(data.train, ae_cfg)


def build_importance(cfg: ExperimentConfig, data: ResolvedData) -> weights_mod.ImportanceTable:
    if cfg.importance == "user":
        if cfg.user_weights_path is None:
            raise ValueError("importance kind 'user' requires user_weights_path")
        with open(cfg.user_weights_path, encoding="utf-8") as fh:
            ratios = np.array([float(line) for line in fh if line.strip()])
        if ratios.shape[0] != data.train.n:
            raise ValueError(f"user ratios have {ratios.shape[0]} rows, train has {data.train.n}")
        return weights_mod.user_importance(ratios)
    return weights_mod.estimate_importance(data.train.labels, data.validation.labels,
                                           cfg.importance)


# --- per-candidate training + scoring (also the process-pool worker) --------

@dataclass(frozen=True)
class _ScoreContext:
    train: Dataset
    validation: Dataset
    test: Dataset
    metric_labels: dict
    label_transform: str
    arch: nn.MlpArchitecture
    train_cfg: nn.TrainConfig
    metric: metrics.MetricSpec
    label_kind: str


def _bundle(ctx: _ScoreContext, params: nn.ModelParams, split: str) -> metrics.EvalBundle:
    ds = getattr(ctx, split)
    out = nn.predict(params, ds.features)
    if out.shape[1] == 1:
        scores = out[:, 0]
        if ctx.label_kind == "numeric":
            scores = invert_labels(scores, ctx.label_transform)
    else:
        scores = out
    return metrics.EvalBundle(scores=scores, labels=ctx.metric_labels[split],
                              groups=ds.groups, aux_scores=ds.aux_scores)


def _score_params(ctx: _ScoreContext, params: nn.ModelParams) -> tuple[float, float]:
    train_bundle = None
    if metrics.metric_needs_train_scores(ctx.metric):
        train_bundle = _bundle(ctx, params, "train")
    val = metrics.evaluate_metric(ctx.metric, _bundle(ctx, params, "validation"), train_bundle)
    test = metrics.evaluate_metric(ctx.metric, _bundle(ctx, params, "test"), train_bundle)
    return float(val), float(test)


def _train_and_score(ctx: _ScoreContext, weights_vec: np.ndarray, seed: int):
    start = time.perf_counter()
    try:
        params = nn.train_weighted(ctx.train, weights_vec, ctx.arch,
                                   replace(ctx.train_cfg, seed=seed))
        val, test = _score_params(ctx, params)
        flat = params.flat
    except nn.DivergenceError:
        val, test, flat = float("-inf"), float("-inf"), None
    return val, test, flat, time.perf_counter() - start


_WORKER_CTX: _ScoreContext | None = None


def _init_worker(ctx: _ScoreContext):
    global _WORKER_CTX
    _WORKER_CTX = ctx


def _worker_task(task):
    weights_vec, seed = task
    return _train_and_score(_WORKER_CTX, weights_vec, seed)


def _run_tasks(ctx: _ScoreContext, tasks, jobs: int):
    """Run (weights, seed) tasks, in order, optionally on a process pool."""
    if jobs <= 1 or len(tasks) <= 1:
        return [_train_and_score(ctx, w, s) for w, s in tasks]
    with ProcessPoolExecutor(max_workers=jobs, mp_context=get_context("fork"),
                             initializer=_init_worker, initargs=(ctx,)) as pool:
        return list(pool.map(_worker_task, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))


# --- the outer search  -------------------------------------------------------

@dataclass
class MoewResult:
    best: RunRecord
    records: list
    best_params: nn.ModelParams | None
    embedder: object
    importance: weights_mod.ImportanceTable
    noise_variance: float
    data: ResolvedData


@dataclass
class BaselineResult:
    best: RunRecord
    records: list
    best_params: nn.ModelParams | None


def estimate_metric_noise(cfg: ExperimentConfig, ctx: _ScoreContext,
                          base_weights: np.ndarray, repeat: int) -> float:
    """Validation-metric variance of the zero-coefficient weighting retrained
    with NOISE_ESTIMATION_SEEDS different seeds; feeds the GP noise level."""
    vals = []
    for s in range(NOISE_ESTIMATION_SEEDS):
        seed = derive_seed(cfg.seed, repeat, "noise", s)
        val, _test, _flat, _wt = _train_and_score(ctx, base_weights, seed)
        if np.isfinite(val):
            vals.append(val)
    if len(vals) < 2:
        raise RunError("noise estimation failed: fewer than 2 finite metrics")
    return float(np.var(vals, ddof=1))


def _make_ctx(cfg: ExperimentConfig, data: ResolvedData) -> _ScoreContext:
    return _ScoreContext(train=data.train, validation=data.validation, test=data.test,
                         metric_labels=data.metric_labels,
                         label_transform=data.label_transform,
                         arch=build_arch(cfg, data.train), train_cfg=cfg.train,
                         metric=cfg.metric, label_kind=cfg.label_kind)


def _generate_candidates(cfg: ExperimentConfig, history, dim: int, batch: int,
                         repeat: int, noise_variance: float,
                         grid_cache: list | None) -> np.ndarray:
    seed = derive_seed(cfg.seed, repeat, "candidates", batch)
    k = cfg.bucb.k
    if cfg.generator == "random":
        return search.get_candidates_random(k, dim, cfg.bucb.radius, seed)
    if cfg.generator == "grid":
        full = grid_cache[0]
        return full[batch * k:(batch + 1) * k]
    return search.get_candidates_bucb(history, dim, replace(cfg.bucb, seed=seed),
                                      noise_variance)


def run_moew(cfg: ExperimentConfig, repeat: int = 0,
             data: ResolvedData | None = None, jobs: int = 1) -> MoewResult:
    """Run the full batched search for one repeat.

    Trains the embedder, estimates the importance table and the metric noise
    level, then iterates `batches` batches of k candidate coefficient vectors
    (the first candidate of the first batch is pinned to zero, i.e. the
    importance weighting); returns the records plus the best-by-validation
    model. Diverged candidates score -inf and are skipped by the surrogate.
    """
    if data is None:
        data = resolve_data(cfg, repeat)
    if data.validation.n < 1:
        raise ValueError("validation split is empty")
    ctx = _make_ctx(cfg, data)
    embedder = build_embedder(cfg, data, derive_seed(cfg.seed, repeat, "embedder"))
    pi = build_importance(cfg, data)
    dim = embedder.dim

    zero_weights = weights_mod.eval_weights(np.zeros(dim), data.train, embedder, pi)
    noise_variance = estimate_metric_noise(cfg, ctx, zero_weights, repeat)

    grid_cache = None
    if cfg.generator == "grid":
        full = search.get_candidates_grid(dim, cfg.grid_epsilon) * cfg.bucb.radius
        origin = int(np.argmin(np.linalg.norm(full, axis=1)))
        order = [origin] + [i for i in range(full.shape[0]) if i != origin]
        grid_cache = [full[order]]

    history: search.History = []
    records: list[RunRecord] = []
    best: RunRecord | None = None
    best_flat = None
    for b in range(cfg.batches):
        cands = _generate_candidates(cfg, history, dim, b, repeat, noise_variance, grid_cache)
        if len(cands) == 0:
            break  # grid exhausted
        cands = np.array(cands, copy=True)
        if b == 0 and cfg.generator != "grid":
            cands[0] = 0.0
        tasks = [(weights_mod.eval_weights(c, data.train, embedder, pi),
                  derive_seed(cfg.seed, repeat, "train", b, k))
                 for k, c in enumerate(cands)]
        outcomes = _run_tasks(ctx, tasks, jobs)
        any_finite = False
        for k, (val, test, flat, wall) in enumerate(outcomes):
            rec = RunRecord(MOEW_METHOD, repeat, b, k, cands[k], val, test, wall)
            records.append(rec)
            if np.isfinite(val):
                any_finite = True
                history.append((cands[k], val))
            if best is None or val > best.val_metric:
                best, best_flat = rec, flat
        if not any_finite:
            raise RunError(f"all {len(cands)} candidates diverged in batch {b}")

    best_params = None
    if best_flat is not None:
        best_params = nn.ModelParams(ctx.arch, np.array(best_flat, copy=True))
    return MoewResult(best=best, records=records, best_params=best_params,
                      embedder=embedder, importance=pi,
                      noise_variance=noise_variance, data=data)


def run_baseline(cfg: ExperimentConfig, kind: str, budget: int, repeat: int = 0,
                 data: ResolvedData | None = None, jobs: int = 1) -> BaselineResult:
    """Train `budget` models under one baseline weighting and keep the best.

    uniform and importance reuse one weight vector with varying training
    seeds; random redraws the weights per trial.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    if data is None:
        data = resolve_data(cfg, repeat)
    ctx = _make_ctx(cfg, data)
    pi = None
    if kind == "importance":
        pi = build_importance(cfg, data)

    # trial i shares the training seed of search candidate (batch 0, k=i), so a
    # search whose first candidate is pinned to zero reproduces the importance
    # baseline's first trial exactly
    tasks = []
    alphas = []
    for i in range(budget):
        if kind == "random":
            w = weights_mod.baseline_weights(
                data.train, "random", seed=derive_seed(cfg.seed, repeat, "bweights", kind, i))
        elif kind == "user":
            w = weights_mod.baseline_weights(data.train, "user", path=cfg.user_weights_path)
        else:
            w = weights_mod.baseline_weights(data.train, kind, pi=pi)
        tasks.append((w, derive_seed(cfg.seed, repeat, "train", 0, i)))
        alphas.append(None)

    outcomes = _run_tasks(ctx, tasks, jobs)
    records = []
    best = None
    best_flat = None
    for i, (val, test, flat, wall) in enumerate(outcomes):
        rec = RunRecord(kind, repeat, 0, i, alphas[i], val, test, wall)
        records.append(rec)
        if best is None or val > best.val_metric:
            best, best_flat = rec, flat
    if best_flat is None:
        raise RunError(f"all {budget} {kind}-baseline trainings diverged")
    best_params = nn.ModelParams(ctx.arch, np.array(best_flat, copy=True))
    return BaselineResult(best=best, records=records, best_params=best_params)


@dataclass(frozen=True)
class MethodSummary:
    method: str
    repeats: int
    mean_test_metric: float
    margin95: float
    mean_val_metric: float


def summarize(values_by_method: dict) -> dict:
    """Per-method mean test metric and 95% normal-approximation error margin."""
    out = {}
    for method, pairs in values_by_method.items():
        tests = np.array([t for _v, t in pairs])
        vals = np.array([v for v, _t in pairs])
        margin = 1.96 * tests.std(ddof=1) / np.sqrt(len(tests)) if len(tests) > 1 else float("nan")
        out[method] = MethodSummary(method=method, repeats=len(tests),
                                    mean_test_metric=float(tests.mean()),
                                    margin95=float(margin),
                                    mean_val_metric=float(vals.mean()))
    return out


@dataclass
class ExperimentResult:
    summary: dict                 # method -> MethodSummary
    records: list                 # every RunRecord of every repeat
    selected: dict                # method -> (RunRecord, ModelParams)
    moew_artifacts: dict | None   # embedder/importance/normalizer of last repeat


def run_experiment(cfg: ExperimentConfig, jobs: int = 1) -> ExperimentResult:
    """All repeats of the search and every configured baseline."""
    records: list[RunRecord] = []
    values: dict[str, list] = {MOEW_METHOD: []}
    selected: dict = {}
    moew_artifacts = None
    for r in range(cfg.repeats):
        data = resolve_data(cfg, r)
        moew = run_moew(cfg, r, data=data, jobs=jobs)
        records.extend(moew.records)
        values[MOEW_METHOD].append((moew.best.val_metric, moew.best.test_metric))
        if (MOEW_METHOD not in selected
                or moew.best.val_metric > selected[MOEW_METHOD][0].val_metric):
            selected[MOEW_METHOD] = (moew.best, moew.best_params)
        normalizer = weights_mod.weight_normalizer(
            moew.best.alpha, data.train, moew.embedder, moew.importance)
        moew_artifacts = {
            "embedder": moew.embedder, "importance": moew.importance,
            "alpha": moew.best.alpha, "normalizer": normalizer,
            "scaler_mean": data.scaler_mean, "scaler_std": data.scaler_std,
            "label_kind": cfg.label_kind,
            "label_values": np.unique(data.train.labels),
        }
        for kind, budget in cfg.baselines:
            res = run_baseline(cfg, kind, budget, r, data=data, jobs=jobs)
            records.extend(res.records)
            values.setdefault(kind, []).append((res.best.val_metric, res.best.test_metric))
            if kind not in selected or res.best.val_metric > selected[kind][0].val_metric:
                selected[kind] = (res.best, res.best_params)
    return ExperimentResult(summary=summarize(values), records=records,
                            selected=selected, moew_artifacts=moew_artifacts)


def run_repeats(cfg: ExperimentConfig, jobs: int = 1) -> ExperimentResult:
    """Repeat the whole process and summarize; requires repeats >= 2."""
    if cfg.repeats < 2:
        raise ValueError("run_repeats requires repeats >= 2")
    return run_experiment(cfg, jobs=jobs)
