"""Exact Gaussian process regression with an RBF kernel over weighting coefficients.

Observed values are standardized internally (zero mean, unit variance, unit
signal variance); predictions are returned in original units. Posterior
variance is function variance only, without observation noise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import ndtri

JITTERS = (0.0, 1e-9, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4, 1e-3)


class NumericalError(RuntimeError):
    """Kernel matrix could not be factorized even at maximum jitter."""


def _rbf(a: np.ndarray, b: np.ndarray, width: float) -> np.ndarray:
    sq = np.sum(a * a, axis=1)[:, None] + np.sum(b * b, axis=1)[None, :] - 2.0 * (a @ b.T)
    np.maximum(sq, 0.0, out=sq)
    return np.exp(sq / (-2.0 * width * width))


@dataclass(frozen=True)
class GprModel:
    """Immutable fitted model; prediction uses the cached Cholesky factor."""

    points: np.ndarray        # (n, d) observed coefficients
    values: np.ndarray        # (n,) observed metrics, original units
    kernel_width: float
    noise_variance: float     # observation noise, original units
    value_mean: float
    value_std: float
    chol: np.ndarray
    coef: np.ndarray          # (K + sigma^2 I)^-1 standardized values

    @property
    def n(self) -> int:
        return self.points.shape[0]

    def with_point(self, alpha: np.ndarray, value: float) -> "GprModel":
        """Condition on one more observation, keeping the standardization fixed.

        This is the hallucination path of batched candidate generation: adding
        a point at the current posterior mean must leave the mean function
        unchanged, which requires the prior (here, the standardization) to stay
        put.
        """
        points = np.vstack([self.points, np.asarray(alpha, dtype=np.float64)[None, :]])
        values = np.append(self.values, float(value))
        return _assemble(points, values, self.kernel_width, self.noise_variance,
                         self.value_mean, self.value_std)


def _assemble(points, values, kernel_width, noise_variance, mean, std) -> GprModel:
    k = _rbf(points, points, kernel_width)
    noise_std_space = noise_variance / (std * std)
    n = points.shape[0]
    chol = None
    for jitter in JITTERS:
        try:
            chol = np.linalg.cholesky(k + (noise_std_space + jitter) * np.eye(n))
            break
        except np.linalg.LinAlgError:
            continue
    if chol is None:
        raise NumericalError(f"kernel factorization failed for n={n} even at jitter {JITTERS[-1]}")
    std_values = (values - mean) / std
    coef = solve_triangular(chol.T, solve_triangular(chol, std_values, lower=True), lower=False)
    return GprModel(points=points, values=values, kernel_width=kernel_width,
                    noise_variance=noise_variance, value_mean=mean, value_std=std,
                    chol=chol, coef=coef)


def fit(points, kernel_width: float, noise_variance: float = 0.0) -> GprModel:
    """Fit on (coefficient vector, metric value) observations.

    `points` is a list of (alpha, value) pairs or an (X, y) array pair.
    """
    if isinstance(points, tuple) and len(points) == 2:
        x, y = points
    else:
        x = [p for p, _ in points]
        y = [v for _, v in points]
    y = np.asarray(y, dtype=np.float64)
    if y.size < 1:
        raise ValueError("need at least one observation")
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if kernel_width <= 0:
        raise ValueError("kernel_width must be positive")
    if noise_variance < 0:
        raise ValueError("noise_variance must be >= 0")
    mean = float(y.mean())
    std = float(y.std())
    if std <= 0.0:
        std = 1.0
    return _assemble(x, y, kernel_width, noise_variance, mean, std)


def predict(model: GprModel, alpha: np.ndarray):
    """Posterior (mean, variance) at one point or row-wise at an (m, d) batch."""
    a = np.asarray(alpha, dtype=np.float64)
    single = a.ndim == 1
    if single:
        a = a[None, :]
    k_star = _rbf(model.points, a, model.kernel_width)
    mean_std = k_star.T @ model.coef
    v = solve_triangular(model.chol, k_star, lower=True)
    var_std = np.maximum(1.0 - np.sum(v * v, axis=0), 0.0)
    mean = model.value_mean + model.value_std * mean_std
    var = (model.value_std ** 2) * var_std
    if single:
        return float(mean[0]), float(var[0])
    return mean, var


def quantile(mean, variance, level: float):
    """mean + inverse-normal-CDF(level / 100) * sqrt(variance)."""
    if not 0.0 < level < 100.0:
        raise ValueError("level must be a percent in (0, 100)")
    return mean + ndtri(level / 100.0) * np.sqrt(variance)
