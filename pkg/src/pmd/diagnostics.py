"""Ground-truth oracles and metrics: grid posteriors, TV, cross entropy, rate fits."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .density import KdeDensity, ParticleCloud, median_pairwise_distance
from .exceptions import InvalidDataError, InvalidParameterError, MassLeakError
from .model import Dataset, Model

LOG_FLOOR = np.log(1e-300)


@dataclass(frozen=True)
class GridOracle:
    """Normalised log posterior on a regular grid of cell midpoints (d <= 2).

    ``axes`` holds one ``(lo, hi, n)`` triple per dimension; cell ``k`` spans
    ``[lo + k w, lo + (k + 1) w]`` with ``w = (hi - lo) / n``.
    """

    axes: tuple
    log_density: np.ndarray

    def __post_init__(self):
        axes = tuple((float(lo), float(hi), int(n)) for lo, hi, n in self.axes)
        if not 1 <= len(axes) <= 2:
            raise InvalidParameterError("grid oracles support d = 1 or 2 only")
        logd = np.asarray(self.log_density, dtype=float).reshape(-1)
        if logd.size != int(np.prod([n for _, _, n in axes])):
            raise InvalidParameterError("log_density does not match the grid size")
        object.__setattr__(self, "axes", axes)
        object.__setattr__(self, "log_density", logd)

    @classmethod
    def from_log_values(cls, axes, log_values):
        """Normalise arbitrary log values (unnormalised density) on ``axes``."""
        axes = tuple((float(lo), float(hi), int(n)) for lo, hi, n in axes)
        vol = float(np.prod([(hi - lo) / n for lo, hi, n in axes]))
        log_values = np.asarray(log_values, dtype=float).reshape(-1)
        return cls(axes, log_values - logsumexp(log_values) - np.log(vol))

    @property
    def dim(self) -> int:
        return len(self.axes)

    @property
    def shape(self) -> tuple:
        return tuple(n for _, _, n in self.axes)

    @property
    def cell_widths(self) -> np.ndarray:
        return np.array([(hi - lo) / n for lo, hi, n in self.axes])

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.cell_widths))

    @property
    def midpoints(self) -> np.ndarray:
        return grid_points(self.axes)

    @property
    def density(self) -> np.ndarray:
        return np.exp(self.log_density)

    @property
    def cell_mass(self) -> np.ndarray:
        return np.exp(self.log_density + np.log(self.cell_volume))

    def entropy(self) -> float:
        return float(-np.sum(self.cell_mass * self.log_density))

    def mean(self) -> np.ndarray:
        return self.cell_mass @ self.midpoints

    def covariance(self) -> np.ndarray:
        c = self.midpoints - self.mean()
        return (c * self.cell_mass[:, None]).T @ c

    def modes(self, count: int = 2, min_separation: float = 1.0) -> np.ndarray:
        """Highest grid points that are at least ``min_separation`` apart."""
        order = np.argsort(-self.log_density, kind="stable")
        pts = self.midpoints
        found = []
        for k in order:
            if all(np.linalg.norm(pts[k] - pts[j]) >= min_separation for j in found):
                found.append(k)
                if len(found) == count:
                    break
        return pts[found]

    def boundary_mass(self) -> float:
        mass = self.cell_mass.reshape(self.shape)
        inner = mass[(slice(1, -1),) * self.dim] if min(self.shape) > 2 else np.zeros(0)
        return float(mass.sum() - inner.sum())

    def to_csv(self, estimate=None) -> str:
        """Grid export: midpoint coordinates, oracle density and optional estimate."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        header = [f"theta_{j + 1}" for j in range(self.dim)] + ["oracle_density"]
        est = None
        if estimate is not None:
            header.append("estimate_density")
            est = np.exp(log_density_on(estimate, self.midpoints))
        w.writerow(header)
        for k, row in enumerate(self.midpoints):
            vals = [repr(float(v)) for v in row] + [repr(float(np.exp(self.log_density[k])))]
            if est is not None:
                vals.append(repr(float(est[k])))
            w.writerow(vals)
        return buf.getvalue()


def grid_points(axes) -> np.ndarray:
    """Cell midpoints in row-major (C) order, shape ``(n_cells, d)``."""
    mids = [lo + (np.arange(n) + 0.5) * (hi - lo) / n for lo, hi, n in axes]
    mesh = np.meshgrid(*mids, indexing="ij")
    return np.column_stack([m.reshape(-1) for m in mesh])


def build_grid_oracle(model: Model, axes, data=None, leak_tol: float = 1e-4) -> GridOracle:
    """Brute-force posterior ``p(theta) prod_n p(x_n|theta)`` on a grid."""
    if model.dim not in (1, 2):
        raise InvalidParameterError("grid oracles support d = 1 or 2 only")
    if len(axes) != model.dim:
        raise InvalidParameterError(f"{len(axes)} axes for a {model.dim}-dimensional model")
    pts = grid_points(axes)
    if data is None:
        logv = model.log_joint(pts)
    else:
        rows = data.rows
        logv = np.empty(pts.shape[0])
        for s in range(0, pts.shape[0], 4096):
            blk = pts[s:s + 4096]
            logv[s:s + 4096] = model.log_prior(blk) + model.log_lik(rows, blk).sum(axis=0)
    oracle = GridOracle.from_log_values(axes, logv)
    leak = oracle.boundary_mass()
    if leak > leak_tol:
        raise MassLeakError(f"boundary cells carry {leak:.3g} of the posterior mass")
    return oracle


def auto_grid_axes(
    model: Model,
    n_points: int = 200,
    drop: float = 40.0,
    inflate: float = 0.2,
    coarse_points: int = 161,
    prior_sd: float = 8.0,
    rng=None,
) -> tuple:
    """Grid axes covering the region where the log posterior is within ``drop``
    nats of its maximum, inflated by ``inflate`` on each side.

    The region is located on a coarse grid spanning ``prior_sd`` prior standard
    deviations, refined once around the high-density box.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    prior = model.sample_prior(rng, 4000)
    centre = prior.mean(axis=0)
    half = prior_sd * prior.std(axis=0)
    box = [(c - h, c + h) for c, h in zip(centre, half)]
    for _ in range(3):
        axes = [(lo, hi, coarse_points) for lo, hi in box]
        pts = grid_points(axes)
        logv = model.log_joint(pts)
        keep = pts[logv >= logv.max() - drop]
        widths = np.array([(hi - lo) / coarse_points for lo, hi in box])
        lo, hi = keep.min(axis=0) - widths, keep.max(axis=0) + widths
        box = [(a, b) for a, b in zip(lo, hi)]
    span = hi - lo
    return tuple((float(a - inflate * s), float(b + inflate * s), int(n_points)) for a, b, s in zip(lo, hi, span))


def log_density_on(estimate, points) -> np.ndarray:
    """Evaluate an estimate's log density at ``points``.

    ``estimate`` may be a :class:`GridOracle` on the same grid, a particle
    cloud (converted with :func:`cloud_to_kde`), anything with ``logpdf``, or
    a plain callable returning log densities.
    """
    if isinstance(estimate, GridOracle):
        return estimate.log_density
    if isinstance(estimate, ParticleCloud):
        estimate = cloud_to_kde(estimate)
    if hasattr(estimate, "logpdf"):
        return np.asarray(estimate.logpdf(points), dtype=float)
    return np.asarray(estimate(points), dtype=float)


def _estimate_log_mass(oracle: GridOracle, estimate):
    logq = log_density_on(estimate, oracle.midpoints)
    if np.all(np.isneginf(logq)):
        return logq, logq
    logm = logq + np.log(oracle.cell_volume)
    return logq, logm - logsumexp(logm)


def total_variation(oracle: GridOracle, estimate) -> float:
    """``0.5 sum |p_cell - q_cell|`` with the estimate renormalised on the grid."""
    _, logm = _estimate_log_mass(oracle, estimate)
    if np.all(np.isneginf(logm)):
        return 1.0
    return float(min(1.0, 0.5 * np.sum(np.abs(oracle.cell_mass - np.exp(logm)))))


def cross_entropy(oracle: GridOracle, estimate) -> float:
    """``-sum_cells p_cell log q(midpoint)`` with ``q`` floored at 1e-300."""
    logq, _ = _estimate_log_mass(oracle, estimate)
    return float(-np.sum(oracle.cell_mass * np.maximum(logq, LOG_FLOOR)))


def kl_divergence(oracle: GridOracle, estimate) -> float:
    """``KL(oracle || estimate)`` = cross entropy minus oracle entropy."""
    return cross_entropy(oracle, estimate) - oracle.entropy()


def cloud_to_kde(cloud: ParticleCloud, factor: float = 0.1, rng=None) -> KdeDensity:
    """Gaussian KDE over a weighted cloud, bandwidth ``factor`` x median pairwise distance."""
    h = factor * median_pairwise_distance(cloud.points, rng=rng)
    if not h > 0:
        h = 1e-6
    return KdeDensity(cloud.points, cloud.log_weights, h)


def conjugate_gaussian_posterior(prior_mean, prior_var, obs_var, data):
    """Closed-form posterior ``(mean, var)`` of the isotropic conjugate Gaussian model."""
    prior_mean = np.atleast_1d(np.asarray(prior_mean, dtype=float))
    x = np.asarray(data.features if isinstance(data, Dataset) else data, dtype=float)
    if x.size == 0:
        return prior_mean.copy(), float(prior_var)
    x = x.reshape(-1, prior_mean.shape[0])
    n = x.shape[0]
    precision = 1.0 / prior_var + n / obs_var
    var = 1.0 / precision
    mean = var * (prior_mean / prior_var + x.sum(axis=0) / obs_var)
    return mean, float(var)


def rate_fit(sizes, errors) -> float:
    """Least-squares slope of ``log(error)`` against ``log(size)``."""
    sizes = np.asarray(sizes, dtype=float)
    errors = np.asarray(errors, dtype=float)
    if sizes.shape != errors.shape or sizes.size < 3:
        raise InvalidDataError("rate_fit needs at least three matched points")
    if np.any(sizes <= 0) or np.any(errors <= 0):
        raise InvalidDataError("rate_fit needs positive sizes and errors")
    slope, _ = np.polyfit(np.log(sizes), np.log(errors), 1)
    return float(slope)


def objective_on_grid(q, log_prior, log_lik_sum, dx) -> float:
    """Bayes objective ``-int q sum_n log p(x_n|.) + KL(q || prior)`` by quadrature.

    ``q`` holds density values on the grid; ``log_prior`` and ``log_lik_sum``
    are evaluated at the same points.
    """
    q = np.asarray(q, dtype=float)
    pos = q > 0
    kl = np.sum(q[pos] * (np.log(q[pos]) - log_prior[pos])) * dx
    return float(-np.sum(q * log_lik_sum) * dx + kl)


def objective_gradient_on_grid(q, log_prior, log_lik_sum) -> np.ndarray:
    """Functional gradient ``log q - log p - sum_n log p(x_n|.) + 1``."""
    return np.log(q) - log_prior - log_lik_sum + 1.0


def grid_kl(q1, q2, dx) -> float:
    pos = q1 > 0
    return float(np.sum(q1[pos] * (np.log(q1[pos]) - np.log(q2[pos]))) * dx)


def predictive_accuracy(model, state, features, labels) -> float:
    """Posterior-predictive accuracy of a logistic model under a weighted state."""
    points = state.points if isinstance(state, ParticleCloud) else state.centers
    prob = model.predict_proba(features, points, state.log_weights)
    pred = np.where(prob >= 0.5, 1.0, -1.0)
    return float(np.mean(pred == np.asarray(labels)))


def map_estimate(model, x0=None):
    """MAP parameters by L-BFGS on the negative log posterior (deterministic)."""
    from scipy.optimize import minimize

    rows = model.data.rows

    def f(theta):
        t = theta[None, :]
        val = model.log_prior(t)[0] + model.log_lik(rows, t).sum()
        grad = model.grad_log_prior(t)[0] + model.grad_log_lik(rows, t)[:, 0, :].sum(axis=0)
        return -val, -grad

    x0 = np.zeros(model.dim) if x0 is None else np.asarray(x0, dtype=float)
    res = minimize(f, x0, jac=True, method="L-BFGS-B", options={"maxiter": 1000, "gtol": 1e-10})
    return res.x
