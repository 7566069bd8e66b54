"""Log-domain simplex weights, weighted particle clouds and weighted Gaussian KDEs."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import logsumexp

from .exceptions import DegenerateWeightsError, InvalidParameterError

LOG_2PI = float(np.log(2.0 * np.pi))


def log_sum_exp(values) -> float:
    """Stable ``log(sum(exp(values)))``; ``-inf`` entries are absorbed."""
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise ValueError("log_sum_exp of an empty sequence")
    return float(logsumexp(values))


def normalize_log_weights(logw) -> np.ndarray:
    """Return simplex weights ``exp(logw) / sum(exp(logw))``.

    Raises
    ------
    DegenerateWeightsError
        If no entry is finite (NaN entries count as depleted).
    """
    logw = np.asarray(logw, dtype=float)
    finite = np.isfinite(logw)
    if not finite.any():
        raise DegenerateWeightsError("all log-weights are -inf")
    if np.any(np.isnan(logw)) or np.any(logw == np.inf):
        raise DegenerateWeightsError("log-weights contain NaN or +inf")
    shifted = np.exp(logw - logw[finite].max())
    return shifted / shifted.sum()


def normalized_log_weights(logw) -> np.ndarray:
    """Log of :func:`normalize_log_weights`, computed without leaving log space."""
    logw = np.asarray(logw, dtype=float)
    normalize_log_weights(logw)  # validation only
    return logw - logsumexp(logw)


def effective_sample_size(weights) -> float:
    """``1 / sum(w_i^2)`` for simplex weights ``w``."""
    w = np.asarray(weights, dtype=float)
    return float(1.0 / np.sum(w * w))


def weighted_moments(points, weights):
    """Weighted per-dimension mean and standard deviation."""
    points = np.asarray(points, dtype=float)
    mean = weights @ points
    var = weights @ (points - mean) ** 2
    return mean, np.sqrt(np.maximum(var, 0.0))


def median_pairwise_distance(points, rng=None, max_points=1000) -> float:
    """Median Euclidean distance over distinct pairs (subsampled above ``max_points``)."""
    points = np.asarray(points, dtype=float)
    if points.ndim == 1:
        points = points[:, None]
    if points.shape[0] > max_points:
        rng = np.random.default_rng(0) if rng is None else rng
        points = points[rng.choice(points.shape[0], max_points, replace=False)]
    sq = np.sum(points**2, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * points @ points.T
    iu = np.triu_indices(points.shape[0], k=1)
    if iu[0].size == 0:
        return 0.0
    return float(np.median(np.sqrt(np.maximum(d2[iu], 0.0))))


def _as_points(theta, dim):
    theta = np.asarray(theta, dtype=float)
    if theta.ndim == 0:
        theta = theta.reshape(1, 1)
    elif theta.ndim == 1:
        theta = theta.reshape(1, dim) if theta.shape[0] == dim else theta[:, None]
    return theta


@dataclass(frozen=True)
class ParticleCloud:
    """``m`` support points with log-domain simplex weights.

    ``log_base`` optionally stores the log density of the distribution the
    points were drawn from; it is ``None`` when they came from the prior.
    """

    points: np.ndarray
    log_weights: np.ndarray
    log_base: np.ndarray | None = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        logw = np.asarray(self.log_weights, dtype=float).reshape(-1)
        if pts.shape[0] < 1 or pts.shape[0] != logw.shape[0]:
            raise InvalidParameterError(
                f"{pts.shape[0]} points but {logw.shape[0]} log-weights"
            )
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "log_weights", normalized_log_weights(logw))
        if self.log_base is not None:
            object.__setattr__(self, "log_base", np.asarray(self.log_base, dtype=float))

    @classmethod
    def uniform(cls, points, log_base=None):
        points = np.asarray(points, dtype=float)
        return cls(points, np.zeros(len(points)), log_base)

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_weights)

    def ess(self) -> float:
        return effective_sample_size(self.weights)

    def mean(self) -> np.ndarray:
        return self.weights @ self.points

    def expectation(self, f) -> float:
        return integral_estimate(self, f)

    def to_csv(self) -> str:
        return cloud_to_csv(self.points, self.weights)


@dataclass(frozen=True)
class KdeDensity:
    """Weighted Gaussian-kernel mixture ``sum_i w_i N(theta; c_i, h^2 S S^T)``.

    ``scale`` standardises coordinates: ``None`` (identity), a per-dimension
    vector, or a lower-triangular factor ``S``.  The kernel is isotropic with
    bandwidth ``h`` in standardised coordinates.
    """

    centers: np.ndarray
    log_weights: np.ndarray
    bandwidth: float
    scale: np.ndarray = field(default=None)

    def __post_init__(self):
        c = np.asarray(self.centers, dtype=float)
        if c.ndim == 1:
            c = c[:, None]
        logw = np.asarray(self.log_weights, dtype=float).reshape(-1)
        if c.shape[0] < 1 or c.shape[0] != logw.shape[0]:
            raise InvalidParameterError(f"{c.shape[0]} centers but {logw.shape[0]} log-weights")
        if not self.bandwidth > 0:
            raise InvalidParameterError(f"bandwidth must be positive, got {self.bandwidth}")
        d = c.shape[1]
        scale = np.eye(d) if self.scale is None else np.asarray(self.scale, dtype=float)
        if scale.ndim == 1:
            scale = np.diag(scale)
        if scale.shape != (d, d) or np.any(np.diag(scale) <= 0):
            raise InvalidParameterError("scale must be a positive vector or lower-triangular d x d factor")
        object.__setattr__(self, "centers", c)
        object.__setattr__(self, "log_weights", normalized_log_weights(logw))
        object.__setattr__(self, "bandwidth", float(self.bandwidth))
        object.__setattr__(self, "scale", np.tril(scale))

    @property
    def size(self) -> int:
        return self.centers.shape[0]

    @property
    def dim(self) -> int:
        return self.centers.shape[1]

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_weights)

    @property
    def kernel_std(self) -> np.ndarray:
        """Per-dimension kernel standard deviation."""
        return self.bandwidth * np.sqrt(np.sum(self.scale**2, axis=1))

    @property
    def kernel_cov(self) -> np.ndarray:
        return self.bandwidth**2 * self.scale @ self.scale.T

    def ess(self) -> float:
        return effective_sample_size(self.weights)

    def mean(self) -> np.ndarray:
        return self.weights @ self.centers

    def _whiten(self, x):
        return solve_triangular(self.scale, x.T, lower=True).T / self.bandwidth

    def logpdf(self, theta, chunk: int = 2048) -> np.ndarray:
        theta = _as_points(theta, self.dim)
        keep = np.isfinite(self.log_weights)
        c = self._whiten(self.centers[keep])
        logw = self.log_weights[keep]
        q = self._whiten(theta)
        col = logw - 0.5 * np.sum(c**2, axis=1)
        log_norm = (
            -0.5 * self.dim * LOG_2PI
            - self.dim * np.log(self.bandwidth)
            - np.sum(np.log(np.diag(self.scale)))
        )
        out = np.empty(q.shape[0])
        # fixed-order chunking over query points keeps results reproducible
        for start in range(0, q.shape[0], chunk):
            block = q[start:start + chunk]
            a = block @ c.T
            a += col[None, :]
            out[start:start + chunk] = _row_logsumexp(a) - 0.5 * np.sum(block**2, axis=1)
        return out + log_norm

    def pdf(self, theta) -> np.ndarray:
        return np.exp(self.logpdf(theta))

    def sample(self, rng: np.random.Generator, count: int) -> np.ndarray:
        """Draw ``count`` i.i.d. samples (categorical center + Gaussian jitter)."""
        idx = categorical_inverse_cdf(self.weights, rng.random(count))
        noise = rng.standard_normal((count, self.dim))
        return self.centers[idx] + self.bandwidth * noise @ self.scale.T

    def to_csv(self) -> str:
        return cloud_to_csv(self.centers, self.weights)


def _row_logsumexp(a: np.ndarray) -> np.ndarray:
    """Row-wise log-sum-exp of a finite-max matrix; overwrites ``a``."""
    mx = a.max(axis=1, keepdims=True)
    a -= mx
    # exp of subnormal-range arguments is very slow and contributes < 1e-300
    np.maximum(a, -700.0, out=a)
    np.exp(a, out=a)
    return np.log(a.sum(axis=1)) + mx[:, 0]


def categorical_inverse_cdf(weights, u) -> np.ndarray:
    """First index whose cumulative weight is ``>= u`` (stored index order)."""
    cdf = np.cumsum(weights)
    cdf /= cdf[-1]
    idx = np.searchsorted(cdf, u, side="left")
    return np.minimum(idx, len(cdf) - 1)


def kde_evaluate(kde: KdeDensity, theta):
    """Density and log-density of ``kde`` at ``theta``."""
    logd = kde.logpdf(theta)
    return np.exp(logd), logd


def kde_sample(kde: KdeDensity, rng, count: int) -> np.ndarray:
    if count < 1:
        raise InvalidParameterError("count must be at least 1")
    return kde.sample(rng, count)


@dataclass(frozen=True)
class BandwidthRule:
    """``h = scale * m ** (-1 / (d + 2 beta))``.

    ``scale=None`` means the scale is anchored by the median trick when the
    first KDE is built (see :func:`median_trick_scale`).
    """

    beta: float = 2.0
    scale: float | None = None
    median_factor: float = 0.1

    def __post_init__(self):
        if self.beta <= 0:
            raise InvalidParameterError("beta must be positive")
        if self.scale is not None and self.scale <= 0:
            raise InvalidParameterError("scale must be positive")

    def exponent(self, d: int) -> float:
        return -1.0 / (d + 2.0 * self.beta)

    def with_scale(self, scale: float) -> "BandwidthRule":
        return BandwidthRule(self.beta, scale, self.median_factor)


def bandwidth(rule: BandwidthRule, m: int, d: int) -> float:
    if m < 1:
        raise InvalidParameterError("m must be at least 1")
    if rule.scale is None:
        raise InvalidParameterError("bandwidth scale has not been anchored")
    return float(rule.scale * m ** rule.exponent(d))


def median_trick_scale(rule: BandwidthRule, points) -> float:
    """``median_factor`` times the median pairwise distance of ``points``."""
    c = rule.median_factor * median_pairwise_distance(points)
    if not c > 0:
        raise InvalidParameterError("median pairwise distance is zero")
    return float(c)


def standardizing_scale(points, weights, floor_fraction: float = 0.05) -> np.ndarray:
    """Cholesky factor of the weighted covariance, used to standardise KDE coordinates.

    With near-degenerate weights the weighted spread collapses, so the
    covariance is regularised by ``floor_fraction^2`` times the unweighted
    per-dimension variance of the same points.
    """
    points = np.asarray(points, dtype=float)
    if points.ndim == 1:
        points = points[:, None]
    mean = weights @ points
    centred = points - mean
    cov = (centred * weights[:, None]).T @ centred
    floor = floor_fraction**2 * points.var(axis=0)
    floor = np.where(floor > 0, floor, 1e-12)
    return np.linalg.cholesky(cov + np.diag(floor))


def standardize(points, scale) -> np.ndarray:
    """Map ``points`` to coordinates in which ``scale`` is the identity."""
    return solve_triangular(scale, np.asarray(points, dtype=float).T, lower=True).T


def weighted_kde(points, log_weights, bandwidth: float, standardized: bool = True) -> KdeDensity:
    """Place a Gaussian kernel on each weighted point.

    With ``standardized`` the kernel is isotropic in the coordinates given by
    :func:`standardizing_scale`; otherwise it is isotropic in raw coordinates.
    """
    points = np.asarray(points, dtype=float)
    if points.ndim == 1:
        points = points[:, None]
    scale = None
    if standardized:
        scale = standardizing_scale(points, normalize_log_weights(log_weights))
    return KdeDensity(points, log_weights, bandwidth, scale)


def integral_estimate(state, f) -> float:
    """``sum_i w_i f(theta_i)`` for a particle cloud (or KDE centers)."""
    points = state.points if isinstance(state, ParticleCloud) else state.centers
    values = np.asarray(f(points), dtype=float).reshape(-1)
    return float(state.weights @ values)


def cloud_to_csv(points, weights) -> str:
    points = np.asarray(points, dtype=float)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([f"theta_{j + 1}" for j in range(points.shape[1])] + ["weight"])
    for row, w in zip(points, weights):
        writer.writerow([repr(float(v)) for v in row] + [repr(float(w))])
    return buf.getvalue()


def cloud_from_csv(text: str) -> ParticleCloud:
    """Inverse of :func:`cloud_to_csv`; leading ``#`` comment lines are skipped."""
    lines = text.splitlines()
    while lines and lines[0].startswith("#"):
        lines.pop(0)
    reader = csv.reader(lines)
    header = next(reader)
    if header[-1] != "weight":
        raise ValueError("last CSV column must be 'weight'")
    rows = np.array([[float(v) for v in r] for r in reader if r])
    w = rows[:, -1]
    with np.errstate(divide="ignore"):
        return ParticleCloud(rows[:, :-1], np.log(w))
