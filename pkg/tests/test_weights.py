import numpy as np
import pytest
from scipy.special import expit

from moew.data import Dataset
from moew.embed import label_passthrough_embedder
from moew.weights import (ImportanceEstimationError, ImportanceTable,
                          baseline_weights, estimate_importance, eval_weights,
                          user_importance, weight_normalizer)


def _binary_ds(pos_rate, n, seed=0):
    rng = np.random.default_rng(seed)
    labels = (rng.random(n) < pos_rate).astype(np.int64)
    return Dataset(features=rng.normal(size=(n, 2)), labels=labels)


def test_identical_distributions_give_unit_ratios():
    labels = np.array([0, 1, 0, 1, 1, 0])
    pi = estimate_importance(labels, labels, "class_ratio")
    assert np.allclose(pi.class_ratios, 1.0, atol=1e-15)


def test_class_ratio_hand_case():
    train = np.array([1] * 25 + [0] * 75)
    val = np.array([1] * 5 + [0] * 95)
    pi = estimate_importance(train, val, "class_ratio")
    assert pi.class_ratios[1] == pytest.approx(0.2, rel=1e-12)
    assert pi.class_ratios[0] == pytest.approx(95 / 75, rel=1e-12)


def test_class_ratio_missing_classes():
    # class present in train but absent from validation -> floor, not an error
    pi = estimate_importance(np.array([0, 1, 2, 0, 1, 2]), np.array([0, 1, 0, 1]),
                             "class_ratio")
    assert pi.class_ratios[2] == pi.floor
    # class present in validation but absent from train -> estimation error
    with pytest.raises(ImportanceEstimationError):
        estimate_importance(np.array([0, 1, 0, 1]), np.array([0, 1, 2]), "class_ratio")


def test_histogram_shifted_support():
    train = np.arange(1.0, 101.0)
    val = np.arange(51.0, 101.0)
    pi = estimate_importance(train, val, "histogram")
    assert pi.bin_ratios.shape == (10,)
    assert np.all(pi.bin_ratios[:4] == pi.floor)  # bins clearly below the median
    assert np.allclose(pi.bin_ratios[6:], 2.0, atol=0.15)


def test_histogram_equal_distributions():
    rng = np.random.default_rng(1)
    train = rng.normal(size=5000)
    val = rng.normal(size=5000)
    pi = estimate_importance(train, val, "histogram")
    assert np.all(np.abs(pi.bin_ratios - 1.0) < 0.25)


def _embedder_and_ds(n=50, c=2, seed=2):
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, c, size=n)
    ds = Dataset(features=rng.normal(size=(n, 3)), labels=labels)
    return label_passthrough_embedder(ds.labels, n_classes=c), ds


def test_eval_weights_alpha_zero_is_importance_baseline_bitwise():
    emb, ds = _embedder_and_ds()
    pi = estimate_importance(ds.labels, np.array([0] * 30 + [1] * 10), "class_ratio")
    w_alpha0 = eval_weights(np.zeros(emb.dim), ds, emb, pi)
    w_base = baseline_weights(ds, "importance", pi=pi)
    assert np.array_equal(w_alpha0, w_base)


def test_eval_weights_mean_one_and_positive():
    emb, ds = _embedder_and_ds(n=70, seed=5)
    pi = estimate_importance(ds.labels, ds.labels[::-1], "class_ratio")
    rng = np.random.default_rng(6)
    for _ in range(5):
        alpha = rng.normal(size=emb.dim)
        w = eval_weights(alpha, ds, emb, pi)
        assert np.all(w > 0)
        assert abs(w.mean() - 1.0) < 1e-12


def test_eval_weights_sigmoid_factor():
    assert expit(10.0) == pytest.approx(0.9999546021312976, abs=1e-12)
    # an example with z . alpha = +10 carries that sigmoid factor pre-normalization
    emb, ds = _embedder_and_ds(n=20, seed=7)
    pi = ImportanceTable(kind="constant_one")
    alpha = np.full(emb.dim, 3.0)
    z = emb.embed(ds.features, ds.labels)
    w = eval_weights(alpha, ds, emb, pi)
    c = weight_normalizer(alpha, ds, emb, pi)
    assert np.allclose(w * c, expit(z @ alpha), rtol=1e-12)


def test_eval_weights_doubling_alpha_is_monotone_per_example():
    emb, ds = _embedder_and_ds(n=40, seed=8)
    pi = ImportanceTable(kind="constant_one")
    alpha = np.random.default_rng(9).normal(size=emb.dim)
    z = emb.embed(ds.features, ds.labels)
    pre1 = eval_weights(alpha, ds, emb, pi) * weight_normalizer(alpha, ds, emb, pi)
    pre2 = eval_weights(2 * alpha, ds, emb, pi) * weight_normalizer(2 * alpha, ds, emb, pi)
    score = z @ alpha
    assert np.all(pre2[score > 0] >= pre1[score > 0])
    assert np.all(pre2[score < 0] <= pre1[score < 0])


def test_eval_weights_dimension_mismatch():
    emb, ds = _embedder_and_ds()
    with pytest.raises(ValueError):
        eval_weights(np.zeros(emb.dim + 1), ds, emb, ImportanceTable(kind="constant_one"))


def test_baseline_uniform():
    ds = _binary_ds(0.5, 5)
    assert np.array_equal(baseline_weights(ds, "uniform"), np.ones(5))


def test_baseline_random_reproducible_mean_one():
    ds = _binary_ds(0.5, 64, seed=3)
    a = baseline_weights(ds, "random", seed=123)
    b = baseline_weights(ds, "random", seed=123)
    assert np.array_equal(a, b)
    assert abs(a.mean() - 1.0) < 1e-12
    assert np.all(a > 0)


def test_baseline_user_file(tmp_path):
    ds = _binary_ds(0.5, 4, seed=4)
    # analytic density-ratio weighting for the toy shift:
    # beta(1,2)^2 / beta(2,1)^2 = ((1-x1)(1-x2)) / (x1 x2), equal to 1 at (0.5, 0.5)
    x = np.array([[0.5, 0.5], [0.2, 0.4], [0.8, 0.9], [0.3, 0.3]])
    ratio = (1 - x[:, 0]) * (1 - x[:, 1]) / (x[:, 0] * x[:, 1])
    assert ratio[0] == pytest.approx(1.0, rel=1e-12)
    path = tmp_path / "w.txt"
    path.write_text("".join(f"{r}\n" for r in ratio), encoding="utf-8")
    w = baseline_weights(ds, "user", path=path)
    assert abs(w.mean() - 1.0) < 1e-12
    assert np.allclose(w / w[0], ratio / ratio[0], rtol=1e-12)

    (tmp_path / "short.txt").write_text("1.0\n2.0\n", encoding="utf-8")
    with pytest.raises(ValueError):
        baseline_weights(ds, "user", path=tmp_path / "short.txt")


def test_user_importance_floor():
    pi = user_importance(np.array([1.0, 1e-9, 2.0]))
    assert pi.per_example[1] == pi.floor
