import numpy as np
import pytest
from scipy.special import ndtr

from moew import gpr
from moew.search import (BucbConfig, CoverSizeError, get_candidates_bucb,
                         get_candidates_grid, get_candidates_random, sample_ball)


def test_random_candidates_inside_ball_and_deterministic():
    for d, r in ((1, 1.0), (3, 2.5), (8, 0.7)):
        a = get_candidates_random(50, d, r, seed=3)
        b = get_candidates_random(50, d, r, seed=3)
        assert a.shape == (50, d)
        assert np.array_equal(a, b)
        assert np.all(np.linalg.norm(a, axis=1) <= r + 1e-12)


def test_ball_sampling_symmetric_in_1d():
    draws = sample_ball(100_000, 1, 1.0, np.random.default_rng(0))
    assert abs(draws.mean()) < 0.02


def test_ball_sampling_mean_radius_2d():
    # E||x|| for uniform draws in a d-ball is R * d / (d + 1)
    r = 1.7
    draws = sample_ball(100_000, 2, r, np.random.default_rng(1))
    assert abs(np.linalg.norm(draws, axis=1).mean() - (2 / 3) * r) < 0.01 * r


def test_bucb_empty_history_is_uniform_sampling():
    cfg = BucbConfig(k=7, radius=2.0, seed=11)
    cands = get_candidates_bucb([], 3, cfg, noise_variance=0.01)
    assert cands.shape == (7, 3)
    assert np.all(np.linalg.norm(cands, axis=1) <= 2.0 + 1e-12)
    again = get_candidates_bucb([], 3, cfg, noise_variance=0.01)
    assert np.array_equal(cands, again)


def test_bucb_zero_percents_collapse_to_identical_candidates():
    rng = np.random.default_rng(5)
    history = [(rng.normal(size=2) * 0.5, float(rng.normal())) for _ in range(9)]
    cfg = BucbConfig(k=6, p=0.0, q=0.0, radius=2.0, acquisition_samples=500, seed=7)
    cands = get_candidates_bucb(history, 2, cfg, noise_variance=0.02)
    for row in cands[1:]:
        assert np.array_equal(row, cands[0])


def test_bucb_single_observation_explores_boundary_1d():
    history = [(np.zeros(1), 1.0)]
    cfg = BucbConfig(k=1, p=68.3, q=68.3, radius=1.0, acquisition_samples=5000, seed=3)
    cand = get_candidates_bucb(history, 1, cfg, noise_variance=0.0)[0]
    assert abs(cand[0]) > 0.99  # variance is maximal at the boundary

    # dense 1-d scan: the acquisition is monotone in |alpha| here
    model = gpr.fit(history, kernel_width=1.0, noise_variance=0.0)
    grid = np.linspace(-1, 1, 201)[:, None]
    means, variances = gpr.predict(model, grid)
    acq = gpr.quantile(means, variances, 50 + 68.3 / 2)
    order = np.argsort(np.abs(grid[:, 0]))
    assert np.all(np.diff(acq[order]) >= -1e-12)


def test_bucb_deterministic_given_history_and_seed():
    rng = np.random.default_rng(6)
    history = [(rng.normal(size=3), float(rng.normal())) for _ in range(5)]
    cfg = BucbConfig(k=4, radius=3.0, acquisition_samples=800, seed=9)
    a = get_candidates_bucb(history, 3, cfg, noise_variance=0.05)
    b = get_candidates_bucb(list(history), 3, cfg, noise_variance=0.05)
    assert np.array_equal(a, b)
    assert np.all(np.linalg.norm(a, axis=1) <= 3.0 + 1e-12)


def test_bucb_percent_consistency_with_one_sigma():
    # 100 * (2 * Phi(1) - 1) percent -> exactly +- one standard deviation
    level = 100.0 * (2.0 * ndtr(1.0) - 1.0)
    up = gpr.quantile(0.0, 1.0, 50.0 + level / 2.0)
    dn = gpr.quantile(0.0, 1.0, 50.0 - level / 2.0)
    assert up == pytest.approx(1.0, abs=1e-12)
    assert dn == pytest.approx(-1.0, abs=1e-12)


def test_grid_1d_unit_epsilon():
    pts = get_candidates_grid(1, 1.0)
    assert sorted(pts[:, 0].tolist()) == [-1.0, 0.0, 1.0]


@pytest.mark.parametrize("dim,eps", [(1, 1.0), (2, 1.0), (3, 1.0),
                                     (2, 0.5), (3, 0.5), (4, 0.5), (2, 0.25)])
def test_grid_cover_property_and_size_bound(dim, eps):
    pts = get_candidates_grid(dim, eps)
    assert np.all(np.linalg.norm(pts, axis=1) <= 1.0 + 1e-9)
    assert np.any(np.all(pts == 0.0, axis=1))  # origin included
    assert pts.shape[0] <= (1.0 + 2.0 / eps) ** dim

    rng = np.random.default_rng(dim * 100 + int(eps * 10))
    probes = sample_ball(10_000, dim, 1.0, rng)
    d2 = ((probes[:, None, :] - pts[None, :, :]) ** 2).sum(-1)
    assert np.all(np.sqrt(d2.min(axis=1)) <= eps + 1e-9)


def test_grid_size_cap():
    with pytest.raises(CoverSizeError) as err:
        get_candidates_grid(8, 0.05)
    assert err.value.count > err.value.cap


def test_grid_rejects_bad_epsilon():
    with pytest.raises(ValueError):
        get_candidates_grid(2, 0.0)
    with pytest.raises(ValueError):
        get_candidates_grid(2, 1.5)
