import csv

import numpy as np
import pytest

from moew.cli import (ConfigError, cmd_report, cmd_run, cmd_toy_gen,
                      cmd_weight_grid, main, parse_config)
from moew.data import load_csv

TOY_CONFIG = """\
version: 1
seed: 7
repeats: 2
label_kind: binary
data:
  kind: toy
  n_train: 120
  n_val: 60
  n_test: 60
metric:
  name: precision_at_recall
  params: {target_recall: 0.9}
model:
  hidden: [3]
  steps: 60
  batch_size: 30
embedding:
  kind: autoencoder
  dim: 2
  hidden: [4]
  steps: 60
  batch_size: 30
search:
  generator: bucb
  batches: 2
  batch_size: 3
  acquisition_samples: 200
baselines:
  uniform: 2
  importance: 2
"""


def _write_config(tmp_path, text=TOY_CONFIG, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


def _read_rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def test_parse_config_roundtrip(tmp_path):
    cfg = parse_config(_write_config(tmp_path))
    assert cfg.repeats == 2
    assert cfg.metric.name == "precision_at_recall"
    assert cfg.bucb.k == 3
    assert cfg.train.loss == "hinge"  # derived from binary label kind


def test_parse_config_missing_metric_name(tmp_path):
    bad = TOY_CONFIG.replace("  name: precision_at_recall\n", "")
    with pytest.raises(ConfigError, match="metric.name"):
        parse_config(_write_config(tmp_path, bad))


def test_parse_config_unknown_key(tmp_path):
    bad = TOY_CONFIG + "search_extra: 3\n"
    with pytest.raises(ConfigError, match="search_extra"):
        parse_config(_write_config(tmp_path, bad))
    bad2 = TOY_CONFIG.replace("  generator: bucb", "  generater: bucb")
    with pytest.raises(ConfigError, match="generater"):
        parse_config(_write_config(tmp_path, bad2))


def test_parse_config_wrong_version(tmp_path):
    bad = TOY_CONFIG.replace("version: 1", "version: 99")
    with pytest.raises(ConfigError, match="version"):
        parse_config(_write_config(tmp_path, bad))


def test_cmd_run_outputs(tmp_path):
    cfg_path = _write_config(tmp_path)
    out = tmp_path / "out"
    assert cmd_run(cfg_path, out) == 0
    rows = _read_rows(out / "runs.csv")
    moew_rows = [r for r in rows if r["method"] == "moew"]
    assert len(moew_rows) == 2 * 3 * 2  # batches * k * repeats
    assert len(rows) == 2 * (6 + 2 + 2)  # repeats * (search + both baselines)
    assert (out / "summary.csv").exists()
    assert (out / "model_moew.txt").exists()
    assert (out / "model_uniform.txt").exists()
    assert (out / "moew_embedder.txt").exists()
    assert (out / "moew_weighting.json").exists()
    # baseline rows carry no coefficients
    base_rows = [r for r in rows if r["method"] == "uniform"]
    assert all(r["alpha_0"] == "" for r in base_rows)


def _strip_wall_time(path):
    rows = _read_rows(path)
    return [{k: v for k, v in row.items() if k != "wall_time_s"} for row in rows]


def test_cmd_run_deterministic_output(tmp_path):
    cfg_path = _write_config(tmp_path)
    cmd_run(cfg_path, tmp_path / "a")
    cmd_run(cfg_path, tmp_path / "b")
    assert _strip_wall_time(tmp_path / "a" / "runs.csv") == \
        _strip_wall_time(tmp_path / "b" / "runs.csv")


def test_cmd_run_seed_override_changes_results(tmp_path):
    cfg_path = _write_config(tmp_path)
    cmd_run(cfg_path, tmp_path / "a")
    cmd_run(cfg_path, tmp_path / "c", seed=8)
    assert _strip_wall_time(tmp_path / "a" / "runs.csv") != \
        _strip_wall_time(tmp_path / "c" / "runs.csv")


def test_main_exit_codes(tmp_path):
    bad_cfg = _write_config(tmp_path, TOY_CONFIG.replace("  name: precision_at_recall\n", ""),
                            name="bad.yaml")
    assert main(["run", "--config", str(bad_cfg), "--out", str(tmp_path / "x")]) == 1
    # runtime error: report on a missing file
    assert main(["report", "--runs", str(tmp_path / "missing.csv")]) == 2


def test_cmd_run_failure_removes_partial_outputs(tmp_path, monkeypatch):
    cfg_path = _write_config(tmp_path)
    out = tmp_path / "out"
    from moew import cli as cli_mod

    def boom(path, summary):
        raise RuntimeError("disk full")

    monkeypatch.setattr(cli_mod, "_write_summary_csv", boom)
    with pytest.raises(RuntimeError):
        cmd_run(cfg_path, out)
    assert not (out / "runs.csv").exists()
    assert not (out / "summary.csv").exists()


def test_weight_grid(tmp_path):
    # B=1, K=1 pins the selected coefficients to zero, so the weight must be
    # constant per label value
    cfg_text = TOY_CONFIG.replace("batches: 2", "batches: 1").replace(
        "batch_size: 3", "batch_size: 1")
    cfg_path = _write_config(tmp_path, cfg_text)
    out = tmp_path / "out"
    cmd_run(cfg_path, out)
    grid_path = tmp_path / "grid.tsv"
    assert cmd_weight_grid(out, 3, grid_path) == 0
    lines = grid_path.read_text(encoding="utf-8").strip().split("\n")
    assert lines[0] == "x1\tx2\tlabel\tweight"
    data_rows = [line.split("\t") for line in lines[1:]]
    assert len(data_rows) == 2 * 3 * 3  # labels * G^2
    weights = np.array([float(r[3]) for r in data_rows])
    labels = np.array([float(r[2]) for r in data_rows])
    assert np.all(weights > 0)
    for lab in (0.0, 1.0):
        w = weights[labels == lab]
        assert np.allclose(w, w[0], rtol=1e-12)


def test_cmd_report(tmp_path, capsys):
    runs = tmp_path / "runs.csv"
    with open(runs, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "repeat", "batch", "candidate", "alpha_0",
                         "val_metric", "test_metric", "wall_time_s"])
        vals = [0.1, 0.4, 0.2, 0.9]
        tests = [0.2, 0.3, 0.1, 0.8]
        for i, (v, t) in enumerate(zip(vals, tests)):
            writer.writerow(["moew", 0, i // 2, i % 2, "0.0", v, t, 0.01])
    assert cmd_report(runs) == 0
    out = capsys.readouterr().out
    want = np.corrcoef(vals, tests)[0, 1]
    assert f"{want:.6f}" in out
    assert "batch" in out

    # val == test -> correlation 1; val == -test -> -1
    for sign, expect in ((1.0, "1.000000"), (-1.0, "-1.000000")):
        runs2 = tmp_path / f"runs{sign}.csv"
        with open(runs2, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["method", "repeat", "batch", "candidate", "alpha_0",
                             "val_metric", "test_metric", "wall_time_s"])
            for i, v in enumerate([0.1, 0.5, 0.9]):
                writer.writerow(["moew", 0, 0, i, "0.0", v, sign * v, 0.01])
        cmd_report(runs2)
        assert expect in capsys.readouterr().out


def test_cmd_report_too_few_rows(tmp_path):
    runs = tmp_path / "runs.csv"
    runs.write_text("method,repeat,batch,candidate,alpha_0,val_metric,test_metric,wall_time_s\n"
                    "moew,0,0,0,0.0,0.5,0.5,0.01\n", encoding="utf-8")
    with pytest.raises(RuntimeError):
        cmd_report(runs)


def test_cmd_toy_gen(tmp_path):
    out = tmp_path / "toy"
    assert cmd_toy_gen(out, 50, 20, 30, 0.1, seed=4) == 0
    schema = {"x1": "feature", "x2": "feature", "label": "label"}
    train = load_csv(out / "train.csv", schema, label_kind="class")
    val = load_csv(out / "validation.csv", schema, label_kind="class")
    test = load_csv(out / "test.csv", schema, label_kind="class")
    assert (train.n, val.n, test.n) == (50, 20, 30)
