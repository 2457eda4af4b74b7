"""Candidate generation for the weighting-coefficient search.

Three generators over the radius-R ball: batched GP upper-confidence-bound
sampling with pessimistic within-batch hallucinations, i.i.d. uniform ball
samples, and a deterministic epsilon-cover lattice of the unit ball.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import gpr

History = list  # of (alpha, validation metric) pairs


class CoverSizeError(ValueError):
    """The requested cover exceeds the configured size cap; `count` carries |A|."""

    def __init__(self, count: int, cap: int):
        super().__init__(f"cover would need {count} points, cap is {cap}")
        self.count = count
        self.cap = cap


@dataclass(frozen=True)
class BucbConfig:
    """Batched UCB knobs: batch size, explore/exploit percents, ball radius."""

    k: int = 20
    p: float = 68.3
    q: float = 68.3
    radius: float = 3.0
    acquisition_samples: int = 10000
    seed: int = 0

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("batch size k must be >= 1")
        if not (0.0 <= self.p <= 100.0 and 0.0 <= self.q <= 100.0):
            raise ValueError("p and q must be percents in [0, 100]")
        if self.radius <= 0:
            raise ValueError("radius must be positive")
        if self.acquisition_samples < 1:
            raise ValueError("acquisition_samples must be >= 1")


def sample_ball(n: int, dim: int, radius: float, rng: np.random.Generator) -> np.ndarray:
    """Uniform draws from the d-ball: normal directions, radii ~ R * U^(1/d)."""
    raw = rng.standard_normal((n, dim))
    norms = np.linalg.norm(raw, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    radii = radius * rng.random(n) ** (1.0 / dim)
    return raw / norms * radii[:, None]


def get_candidates_random(k: int, dim: int, radius: float, seed: int) -> np.ndarray:
    """k i.i.d. uniform ball samples; deterministic per seed."""
    if k < 1:
        raise ValueError("k must be >= 1")
    return sample_ball(k, dim, radius, np.random.default_rng(seed))


def get_candidates_bucb(history: History, dim: int, cfg: BucbConfig,
                        noise_variance: float) -> np.ndarray:
    """One batch of k candidates by sequential UCB with hallucinated outcomes.

    Each pick maximizes the (50 + p/2)% posterior quantile over a fixed pool
    (acquisition_samples uniform ball points, all historical coefficients, and
    the origin), then is hallucinated into the surrogate at its (50 - q/2)%
    quantile; hallucinations do not outlive the call. With empty history the
    prior is flat and the batch is plain uniform ball samples.
    """
    rng = np.random.default_rng(cfg.seed)
    if not len(history):
        return sample_ball(cfg.k, dim, cfg.radius, rng)

    hist_x = np.asarray([a for a, _ in history], dtype=np.float64)
    hist_v = np.asarray([v for _, v in history], dtype=np.float64)
    if hist_x.shape[1] != dim:
        raise ValueError(f"history has dimension {hist_x.shape[1]}, expected {dim}")
    pool = np.vstack([
        sample_ball(cfg.acquisition_samples, dim, cfg.radius, rng),
        hist_x,
        np.zeros((1, dim)),
    ])

    model = gpr.fit((hist_x, hist_v), kernel_width=cfg.radius,
                    noise_variance=noise_variance)
    picks = []
    for _ in range(cfg.k):
        means, variances = gpr.predict(model, pool)
        acquisition = gpr.quantile(means, variances, 50.0 + cfg.p / 2.0)
        j = int(np.argmax(acquisition))
        alpha = pool[j].copy()
        pessimistic = float(gpr.quantile(means[j], variances[j], 50.0 - cfg.q / 2.0))
        model = model.with_point(alpha, pessimistic)
        picks.append(alpha)
    return np.asarray(picks)


def get_candidates_grid(dim: int, epsilon: float, max_size: int = 200_000) -> np.ndarray:
    """Deterministic epsilon-cover of the unit ball.

    Axis-aligned lattice with spacing 2*eps/sqrt(d) (so nearest-lattice
    rounding errs by at most eps in L2); lattice points just outside the ball
    are projected onto the sphere, which cannot increase their distance to any
    in-ball point. Rows come back lexicographically sorted.
    """
    if not 0.0 < epsilon <= 1.0:
        raise ValueError("epsilon must be in (0, 1]")
    spacing = 2.0 * epsilon / np.sqrt(dim)
    reach = int(np.floor((1.0 + epsilon) / spacing))
    per_axis = 2 * reach + 1
    if per_axis ** dim > 50 * max_size:
        raise CoverSizeError(per_axis ** dim, max_size)

    axes = np.arange(-reach, reach + 1) * spacing
    mesh = np.meshgrid(*([axes] * dim), indexing="ij")
    points = np.stack([m.ravel() for m in mesh], axis=1)
    norms = np.linalg.norm(points, axis=1)
    points = points[norms <= 1.0 + epsilon]
    norms = norms[norms <= 1.0 + epsilon]

    outside = norms > 1.0
    points[outside] /= norms[outside, None]
    points = np.unique(np.round(points, 12), axis=0)
    if points.shape[0] > max_size:
        raise CoverSizeError(points.shape[0], max_size)
    return points
