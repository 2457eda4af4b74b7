import numpy as np
import pytest

from moew.gpr import GprModel, NumericalError, _rbf, fit, predict, quantile


def _random_model(n, d, seed, width=1.5, noise=0.01):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, d))
    y = rng.normal(size=n)
    return fit((x, y), kernel_width=width, noise_variance=noise), x, y


def test_kernel_unit_diagonal():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(6, 3))
    k = _rbf(a, a, 2.0)
    assert np.allclose(np.diag(k), 1.0, atol=1e-15)


def test_single_noiseless_point_interpolates():
    model = fit([(np.array([0.4, -0.2]), 3.7)], kernel_width=1.0, noise_variance=0.0)
    mean, var = predict(model, np.array([0.4, -0.2]))
    assert mean == pytest.approx(3.7, abs=1e-9)
    assert var == pytest.approx(0.0, abs=1e-9)


def test_duplicate_observations_with_noise_fit():
    pts = [(np.zeros(2), 1.0), (np.zeros(2), 1.2)]
    model = fit(pts, kernel_width=1.0, noise_variance=0.05)
    mean, _ = predict(model, np.zeros(2))
    assert 1.0 < mean < 1.2


def test_duplicate_noiseless_uses_jitter_path():
    pts = [(np.zeros(1), 1.0), (np.zeros(1), 1.0), (np.ones(1), 2.0)]
    model = fit(pts, kernel_width=1.0, noise_variance=0.0)
    mean, _ = predict(model, np.zeros(1))
    assert mean == pytest.approx(1.0, abs=1e-3)


def test_far_query_reverts_to_prior():
    model, x, y = _random_model(8, 2, seed=1, width=0.5, noise=0.0)
    mean, var = predict(model, np.full(2, 100.0))
    assert mean == pytest.approx(y.mean(), abs=1e-10)
    assert var == pytest.approx(model.value_std ** 2, rel=1e-10)


def test_two_point_midpoint_closed_form():
    x = np.array([[-1.0], [1.0]])
    y = np.array([0.0, 2.0])
    width, noise = 1.3, 0.04
    model = fit((x, y), kernel_width=width, noise_variance=noise)
    mean, var = predict(model, np.array([0.0]))

    # direct 2x2 solve in standardized space
    mu, sd = y.mean(), y.std()
    ys = (y - mu) / sd
    k = np.exp(-np.array([[0.0, 4.0], [4.0, 0.0]]) / (2 * width ** 2))
    k += (noise / sd ** 2) * np.eye(2)
    ks = np.exp(-np.array([1.0, 1.0]) / (2 * width ** 2))
    mean_ref = mu + sd * (ks @ np.linalg.solve(k, ys))
    var_ref = sd ** 2 * (1.0 - ks @ np.linalg.solve(k, ks))
    assert mean == pytest.approx(mean_ref, abs=1e-12)
    assert var == pytest.approx(var_ref, abs=1e-12)


def test_predict_matches_dense_solve_oracle():
    rng = np.random.default_rng(2)
    for trial in range(20):
        n = int(rng.integers(2, 31))
        d = int(rng.integers(1, 11))
        width = float(rng.uniform(0.5, 3.0))
        noise = float(rng.uniform(0.0, 0.2))
        x = rng.normal(size=(n, d))
        y = rng.normal(size=n) * rng.uniform(0.5, 4.0) + rng.normal()
        model = fit((x, y), kernel_width=width, noise_variance=noise)
        queries = rng.normal(size=(7, d))
        means, variances = predict(model, queries)

        mu, sd = y.mean(), y.std()
        if sd <= 0:
            sd = 1.0
        k = np.exp(-((x[:, None, :] - x[None, :, :]) ** 2).sum(-1) / (2 * width ** 2))
        k += (noise / sd ** 2) * np.eye(n)
        for i, q in enumerate(queries):
            ks = np.exp(-((x - q) ** 2).sum(-1) / (2 * width ** 2))
            sol = np.linalg.solve(k, (y - mu) / sd)
            mean_ref = mu + sd * (ks @ sol)
            var_ref = sd ** 2 * (1.0 - ks @ np.linalg.solve(k, ks))
            assert abs(means[i] - mean_ref) < 1e-8
            assert abs(variances[i] - max(var_ref, 0.0)) < 1e-8


def test_posterior_mean_permutation_invariant():
    model, x, y = _random_model(12, 3, seed=3)
    rng = np.random.default_rng(4)
    perm = rng.permutation(12)
    permuted = fit((x[perm], y[perm]), kernel_width=1.5, noise_variance=0.01)
    q = rng.normal(size=(5, 3))
    m1, v1 = predict(model, q)
    m2, v2 = predict(permuted, q)
    assert np.max(np.abs(m1 - m2)) < 1e-10
    assert np.max(np.abs(v1 - v2)) < 1e-10


def test_posterior_variance_bounded_by_prior():
    model, _, _ = _random_model(15, 2, seed=5, noise=0.1)
    q = np.random.default_rng(6).normal(size=(50, 2))
    _, variances = predict(model, q)
    assert np.all(variances <= model.value_std ** 2 + 1e-10)


def test_hallucination_at_posterior_mean_preserves_mean_function():
    model, x, _y = _random_model(10, 2, seed=7, noise=0.05)
    rng = np.random.default_rng(8)
    spot = rng.normal(size=2)
    mean_at_spot, _ = predict(model, spot)
    extended = model.with_point(spot, mean_at_spot)
    probes = rng.normal(size=(40, 2))
    m1, _ = predict(model, probes)
    m2, _ = predict(extended, probes)
    assert np.max(np.abs(m1 - m2)) < 1e-8


def test_quantile_median_is_mean():
    assert quantile(2.5, 4.0, 50.0) == 2.5


def test_quantile_one_sigma_level():
    # p = q = 68.3 -> level 84.15 -> mean + 1.0003 sigma
    z = quantile(0.0, 1.0, 84.15)
    assert z == pytest.approx(1.0003, abs=1e-3)


def test_quantile_symmetry():
    rng = np.random.default_rng(9)
    for _ in range(20):
        mean, var, a = rng.normal(), rng.uniform(0.1, 4.0), rng.uniform(1.0, 49.0)
        up = quantile(mean, var, 50.0 + a)
        down = quantile(mean, var, 50.0 - a)
        assert up - mean == pytest.approx(mean - down, rel=1e-12)


def test_fit_validation():
    with pytest.raises(ValueError):
        fit([], kernel_width=1.0)
    with pytest.raises(ValueError):
        fit([(np.zeros(2), 1.0)], kernel_width=0.0)
    with pytest.raises(ValueError):
        quantile(0.0, 1.0, 0.0)
