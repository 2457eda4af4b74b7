"""Configuration-driven experiment runner and report/plot-data emitter.

Commands: run, weight-grid, report, toy-gen. Exit codes: 0 success, 1 config
error, 2 runtime error. All outputs are plain text with '.' decimals.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import yaml
from scipy.special import expit

from . import driver, embed as embed_mod, metrics, nn, search
from . import weights as weights_mod
from .data import ToySpec, generate_toy

CONFIG_VERSION = 1


class ConfigError(ValueError):
    """Configuration problem; message names the offending key path."""


def _fmt(x: float) -> str:
    return f"{x:.17g}"


# --- config parsing ----------------------------------------------------------

def _section(raw: dict, path: str, required: tuple = (), optional: tuple = ()) -> dict:
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: expected a mapping")
    allowed = set(required) | set(optional)
    for key in raw:
        if key not in allowed:
            raise ConfigError(f"{path}.{key}: unknown key")
    for key in required:
        if key not in raw:
            raise ConfigError(f"{path}.{key}: missing required key")
    return raw


def _train_config(raw: dict, path: str, defaults: nn.TrainConfig) -> nn.TrainConfig:
    raw = _section(raw, path, optional=("steps", "learning_rate", "batch_size",
                                        "loss", "adam_beta1", "adam_beta2", "adam_eps"))
    try:
        return nn.TrainConfig(
            steps=int(raw.get("steps", defaults.steps)),
            learning_rate=float(raw.get("learning_rate", defaults.learning_rate)),
            batch_size=int(raw.get("batch_size", defaults.batch_size)),
            loss=raw.get("loss", defaults.loss),
            adam_beta1=float(raw.get("adam_beta1", defaults.adam_beta1)),
            adam_beta2=float(raw.get("adam_beta2", defaults.adam_beta2)),
            adam_eps=float(raw.get("adam_eps", defaults.adam_eps)),
        )
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def parse_config(path) -> driver.ExperimentConfig:
    """Parse and validate a YAML experiment config into an ExperimentConfig."""
    with open(path, encoding="utf-8") as fh:
        raw = yaml.safe_load(fh)
    if not isinstance(raw, dict):
        raise ConfigError("config: top level must be a mapping")
    _section(raw, "config",
             required=("version", "data", "metric", "model", "label_kind"),
             optional=("seed", "repeats", "embedding", "importance", "search",
                       "baselines", "standardize", "user_weights_path"))
    if raw["version"] != CONFIG_VERSION:
        raise ConfigError(f"version: expected {CONFIG_VERSION}, got {raw['version']!r}")

    label_kind = raw["label_kind"]
    if label_kind not in embed_mod.LABEL_KINDS:
        raise ConfigError(f"label_kind: must be one of {embed_mod.LABEL_KINDS}")

    data_raw = _section(dict(raw["data"]), "data", required=("kind",),
                        optional=("n_train", "n_val", "n_test", "label_noise",
                                  "train", "validation", "test", "schema",
                                  "label_transform", "subsample_train",
                                  "subsample_validation", "subsample_test"))
    kind = data_raw.pop("kind")
    try:
        if kind == "toy":
            data = ToySpec(n_train=int(data_raw.pop("n_train", 5000)),
                           n_val=int(data_raw.pop("n_val", 1000)),
                           n_test=int(data_raw.pop("n_test", 5000)),
                           label_noise=float(data_raw.pop("label_noise", 0.15)))
            if data_raw:
                raise ConfigError(f"data.{next(iter(data_raw))}: not a toy-data key")
        elif kind == "csv":
            schema = data_raw.pop("schema", None)
            if not isinstance(schema, dict):
                raise ConfigError("data.schema: required mapping of column -> role")
            data = driver.CsvSource(
                train_path=str(data_raw.pop("train")),
                validation_path=(str(data_raw["validation"])
                                 if data_raw.pop("validation", None) is not None else None),
                test_path=(str(data_raw["test"])
                           if data_raw.pop("test", None) is not None else None),
                schema={str(k): str(v) for k, v in schema.items()},
                label_transform=str(data_raw.pop("label_transform", "identity")),
                subsample_train=data_raw.pop("subsample_train", None),
                subsample_validation=data_raw.pop("subsample_validation", None),
                subsample_test=data_raw.pop("subsample_test", None),
            )
            if data_raw:
                raise ConfigError(f"data.{next(iter(data_raw))}: not a csv-data key")
        else:
            raise ConfigError(f"data.kind: unknown kind {kind!r}")
    except KeyError as exc:
        raise ConfigError(f"data.{exc.args[0]}: missing required key") from None

    metric_raw = _section(dict(raw["metric"]), "metric", required=("name",),
                          optional=("params",))
    if metric_raw["name"] not in metrics.metric_names():
        raise ConfigError(f"metric.name: unknown metric {metric_raw['name']!r}; "
                          f"known: {sorted(metrics.metric_names())}")
    params = metric_raw.get("params") or {}
    if "thresholds" in params:
        params = dict(params, thresholds=tuple(params["thresholds"]))
    metric = metrics.MetricSpec(name=metric_raw["name"], params=params)

    model_raw = _section(dict(raw["model"]), "model", required=("hidden",),
                         optional=("steps", "learning_rate", "batch_size", "loss",
                                   "adam_beta1", "adam_beta2", "adam_eps"))
    hidden = tuple(int(h) for h in model_raw.pop("hidden"))
    base = nn.TrainConfig(loss=nn.default_loss_for(label_kind))
    train_cfg = _train_config(model_raw, "model", base)

    emb_raw = _section(dict(raw.get("embedding") or {}), "embedding",
                       optional=("kind", "dim", "hidden", "feature_loss_weight",
                                 "steps", "learning_rate", "batch_size"))
    emb_kind = emb_raw.pop("kind", "autoencoder")
    emb_dim = int(emb_raw.pop("dim", 2))
    emb_hidden = tuple(int(h) for h in emb_raw.pop("hidden", (10,)))
    mix = float(emb_raw.pop("feature_loss_weight", 0.5))
    emb_train = _train_config(emb_raw, "embedding", nn.TrainConfig())
    try:
        embedding = driver.EmbeddingConfig(kind=emb_kind, dim=emb_dim, hidden=emb_hidden,
                                           feature_loss_weight=mix, train=emb_train)
    except ValueError as exc:
        raise ConfigError(f"embedding: {exc}") from None

    search_raw = _section(dict(raw.get("search") or {}), "search",
                          optional=("generator", "batches", "batch_size", "p", "q",
                                    "radius", "acquisition_samples", "grid_epsilon"))
    try:
        bucb = search.BucbConfig(
            k=int(search_raw.get("batch_size", 20)),
            p=float(search_raw.get("p", 68.3)),
            q=float(search_raw.get("q", 68.3)),
            radius=float(search_raw.get("radius", 3.0)),
            acquisition_samples=int(search_raw.get("acquisition_samples", 10000)),
        )
    except ValueError as exc:
        raise ConfigError(f"search: {exc}") from None

    baselines_raw = raw.get("baselines") or {}
    if not isinstance(baselines_raw, dict):
        raise ConfigError("baselines: expected a mapping of kind -> budget")
    for kind_name in baselines_raw:
        if kind_name not in weights_mod.BASELINE_KINDS:
            raise ConfigError(f"baselines.{kind_name}: unknown baseline kind")
    baselines = tuple((str(k), int(v)) for k, v in baselines_raw.items())

    try:
        return driver.ExperimentConfig(
            data=data, metric=metric, label_kind=label_kind, hidden_layers=hidden,
            train=train_cfg, embedding=embedding,
            importance=str(raw.get("importance", "class_ratio")),
            batches=int(search_raw.get("batches", 10)), bucb=bucb,
            generator=str(search_raw.get("generator", "bucb")),
            grid_epsilon=float(search_raw.get("grid_epsilon", 0.5)),
            baselines=baselines,
            user_weights_path=raw.get("user_weights_path"),
            repeats=int(raw.get("repeats", 1)),
            seed=int(raw.get("seed", 0)),
            standardize=bool(raw.get("standardize", True)),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


# --- commands ----------------------------------------------------------------

def _write_runs_csv(path, records, dim: int):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        header = (["method", "repeat", "batch", "candidate"]
                  + [f"alpha_{i}" for i in range(dim)]
                  + ["val_metric", "test_metric", "wall_time_s"])
        writer.writerow(header)
        for rec in records:
            alpha = ([""] * dim if rec.alpha is None
                     else [_fmt(a) for a in rec.alpha])
            writer.writerow([rec.method, rec.repeat, rec.batch, rec.candidate,
                             *alpha, _fmt(rec.val_metric), _fmt(rec.test_metric),
                             _fmt(rec.wall_time)])


def _write_summary_csv(path, summary: dict):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "repeats", "mean_test_metric", "margin95"])
        for method in summary:
            s = summary[method]
            writer.writerow([method, s.repeats, _fmt(s.mean_test_metric), _fmt(s.margin95)])


def _save_importance(pi: weights_mod.ImportanceTable) -> dict:
    out = {"kind": pi.kind, "floor": pi.floor}
    for name in ("class_ratios", "bin_edges", "bin_ratios", "per_example"):
        arr = getattr(pi, name)
        if arr is not None:
            out[name] = [float(v) for v in arr]
    return out


def _load_importance(blob: dict) -> weights_mod.ImportanceTable:
    arrays = {k: np.asarray(v) for k, v in blob.items() if k not in ("kind", "floor")}
    return weights_mod.ImportanceTable(kind=blob["kind"], floor=blob["floor"], **arrays)


def cmd_run(config_path, out_dir, seed: int | None = None, jobs: int = 1) -> int:
    """Run the configured experiment; write runs.csv, summary.csv and the
    selected models. Partial outputs are removed if the run fails."""
    cfg = parse_config(config_path)
    if seed is not None:
        cfg = replace(cfg, seed=seed)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    try:
        result = driver.run_experiment(cfg, jobs=jobs)
        dim = cfg.embedding.dim
        if cfg.embedding.kind == "label_passthrough":
            art = result.moew_artifacts
            dim = art["embedder"].dim if art else dim

        runs_path = out / "runs.csv"
        written.append(runs_path)
        _write_runs_csv(runs_path, result.records, dim)

        summary_path = out / "summary.csv"
        written.append(summary_path)
        _write_summary_csv(summary_path, result.summary)

        for method, (rec, params) in result.selected.items():
            p = out / f"model_{method}.txt"
            written.append(p)
            nn.save_params(p, params, meta={"method": method, "repeat": str(rec.repeat)})

        art = result.moew_artifacts
        if art is not None:
            emb_path = out / "moew_embedder.txt"
            written.append(emb_path)
            embed_mod.save_embedder(emb_path, art["embedder"])
            weighting = {
                "alpha": [float(a) for a in art["alpha"]],
                "normalizer": float(art["normalizer"]),
                "label_kind": art["label_kind"],
                "label_values": [float(v) for v in art["label_values"]],
                "importance": _save_importance(art["importance"]),
                "scaler_mean": (None if art["scaler_mean"] is None
                                else [float(v) for v in art["scaler_mean"]]),
                "scaler_std": (None if art["scaler_std"] is None
                               else [float(v) for v in art["scaler_std"]]),
            }
            w_path = out / "moew_weighting.json"
            written.append(w_path)
            w_path.write_text(json.dumps(weighting, indent=1), encoding="utf-8")
    except Exception:
        for p in written:
            p.unlink(missing_ok=True)
        raise
    for method in result.summary:
        s = result.summary[method]
        print(f"{method}: mean test metric {s.mean_test_metric:.6g} "
              f"+- {s.margin95:.6g} over {s.repeats} repeat(s)")
    return 0


def cmd_weight_grid(model_dir, resolution: int, out_path=None) -> int:
    """Tabulate the learned weighting on a resolution x resolution lattice of
    the unit square, one block per label value: x1, x2, label, weight."""
    model_dir = Path(model_dir)
    blob = json.loads((model_dir / "moew_weighting.json").read_text(encoding="utf-8"))
    embedder = embed_mod.load_embedder(model_dir / "moew_embedder.txt")
    pi = _load_importance(blob["importance"])
    alpha = np.asarray(blob["alpha"])
    normalizer = blob["normalizer"]
    label_kind = blob["label_kind"]

    if blob["scaler_mean"] is not None and len(blob["scaler_mean"]) != 2:
        raise RuntimeError("weight-grid only supports 2-feature models")

    axis = np.linspace(0.0, 1.0, resolution)
    xx, yy = np.meshgrid(axis, axis, indexing="ij")
    feats = np.column_stack([xx.ravel(), yy.ravel()])
    feats_std = feats
    if blob["scaler_mean"] is not None:
        feats_std = (feats - np.asarray(blob["scaler_mean"])) / np.asarray(blob["scaler_std"])
    if getattr(embedder, "enc_weights", None) is not None:
        if embedder.enc_weights[0].shape[0] != feats_std.shape[1] + embed_mod.label_width(
                label_kind, embedder.n_classes):
            raise RuntimeError("weight-grid only supports 2-feature models")

    lines = ["x1\tx2\tlabel\tweight"]
    for label in blob["label_values"]:
        y = np.full(feats.shape[0], label)
        if label_kind != "numeric":
            y = y.astype(np.int64)
        z = embedder.embed(feats_std, y)
        fake = _FakeSplit(feats_std, y)
        raw = pi.ratios_for(fake) * expit(z @ alpha)
        w = raw / normalizer
        for (x1, x2), wi in zip(feats, w):
            lines.append(f"{_fmt(x1)}\t{_fmt(x2)}\t{_fmt(float(label))}\t{_fmt(float(wi))}")
    text = "\n".join(lines) + "\n"
    if out_path is None:
        sys.stdout.write(text)
    else:
        Path(out_path).write_text(text, encoding="utf-8")
    return 0


class _FakeSplit:
    """Minimal Dataset stand-in for importance lookups on grid points."""

    def __init__(self, features, labels):
        self.features = features
        self.labels = labels
        self.n = features.shape[0]


def cmd_report(runs_path) -> int:
    """Print the validation/test Pearson correlation of the search candidates
    and the per-batch best-so-far validation trajectory."""
    rows = []
    with open(runs_path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            rows.append(row)
    moew_rows = [r for r in rows if r["method"] == driver.MOEW_METHOD] or rows
    pairs = [(float(r["val_metric"]), float(r["test_metric"])) for r in moew_rows]
    pairs = [(v, t) for v, t in pairs if np.isfinite(v) and np.isfinite(t)]
    if len(pairs) < 2:
        raise RuntimeError("need at least 2 finite rows to report")
    vals = np.array([v for v, _ in pairs])
    tests = np.array([t for _, t in pairs])
    corr = float(np.corrcoef(vals, tests)[0, 1])
    print(f"validation-test correlation: {corr:.6f}")

    by_repeat: dict = {}
    for r in moew_rows:
        v = float(r["val_metric"])
        by_repeat.setdefault(int(r["repeat"]), {}).setdefault(int(r["batch"]), []).append(v)
    batches = sorted({b for per in by_repeat.values() for b in per})
    print("batch\tmean_best_so_far_val")
    for b in batches:
        bests = []
        for per in by_repeat.values():
            seen = [v for bb in sorted(per) if bb <= b for v in per[bb] if np.isfinite(v)]
            if seen:
                bests.append(max(seen))
        print(f"{b}\t{_fmt(float(np.mean(bests)))}")
    return 0


def cmd_toy_gen(out_dir, n_train: int, n_val: int, n_test: int,
                label_noise: float, seed: int) -> int:
    """Write the synthetic task as train/validation/test CSVs."""
    spec = ToySpec(n_train=n_train, n_val=n_val, n_test=n_test,
                   label_noise=label_noise, seed=seed)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, ds in zip(("train", "validation", "test"), generate_toy(spec)):
        with open(out / f"{name}.csv", "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["x1", "x2", "label"])
            for (x1, x2), y in zip(ds.features, ds.labels):
                writer.writerow([_fmt(x1), _fmt(x2), int(y)])
    print(f"wrote toy splits to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="moew",
                                     description="Example-weight search experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a configured experiment")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--out", required=True)
    p_run.add_argument("--seed", type=int, default=None,
                       help="override the config's master seed")
    p_run.add_argument("--jobs", type=int, default=1,
                       help="max concurrent candidate trainings")

    p_grid = sub.add_parser("weight-grid", help="tabulate the learned weighting")
    p_grid.add_argument("--model-dir", required=True)
    p_grid.add_argument("--resolution", type=int, default=51)
    p_grid.add_argument("--out", default=None)

    p_rep = sub.add_parser("report", help="correlation and trajectory from runs.csv")
    p_rep.add_argument("--runs", required=True)

    p_toy = sub.add_parser("toy-gen", help="write toy-task CSVs")
    p_toy.add_argument("--out", required=True)
    p_toy.add_argument("--n-train", type=int, default=5000)
    p_toy.add_argument("--n-val", type=int, default=1000)
    p_toy.add_argument("--n-test", type=int, default=5000)
    p_toy.add_argument("--label-noise", type=float, default=0.15)
    p_toy.add_argument("--seed", type=int, default=0)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return cmd_run(args.config, args.out, seed=args.seed, jobs=args.jobs)
        if args.command == "weight-grid":
            return cmd_weight_grid(args.model_dir, args.resolution, args.out)
        if args.command == "report":
            return cmd_report(args.runs)
        return cmd_toy_gen(args.out, args.n_train, args.n_val, args.n_test,
                           args.label_noise, args.seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failures
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
