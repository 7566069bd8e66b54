"""Probabilistic models: prior, per-datum likelihood and (optional) gradients.

All density maps are vectorised.  Parameters are passed as an ``(n, d)``
array of candidate values and data as a ``(B, D)`` array of rows; per-datum
log-likelihoods come back as a ``(B, n)`` array.  Supervised data carry their
label folded into the last column of each row, so a mini-batch is always a
plain row subset.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .exceptions import GradientUnavailableError, InvalidDataError, InvalidParameterError

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class Dataset:
    """N data rows, optionally with a ``{-1, +1}`` label per row."""

    features: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        x = np.asarray(self.features, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if x.ndim != 2 or x.shape[0] < 1:
            raise InvalidDataError("dataset must contain at least one row")
        if not np.all(np.isfinite(x)):
            raise InvalidDataError("dataset contains NaN or Inf")
        object.__setattr__(self, "features", x)
        if self.labels is not None:
            y = np.asarray(self.labels, dtype=float).reshape(-1)
            if y.shape[0] != x.shape[0]:
                raise InvalidDataError(
                    f"{y.shape[0]} labels for {x.shape[0]} rows"
                )
            object.__setattr__(self, "labels", y)

    @property
    def size(self) -> int:
        return self.features.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    @property
    def rows(self) -> np.ndarray:
        """Model-facing rows; labels (if any) appended as the last column."""
        if self.labels is None:
            return self.features
        return np.column_stack([self.features, self.labels])

    def subset(self, index) -> "Dataset":
        labels = None if self.labels is None else self.labels[index]
        return Dataset(self.features[index], labels)


def _as_theta(theta, dim):
    theta = np.asarray(theta, dtype=float)
    if theta.ndim == 1:
        theta = theta.reshape(1, dim) if theta.shape[0] == dim else theta[:, None]
    return theta


class Model:
    """Base class for a Bayesian model with ``N`` i.i.d. observations.

    Subclasses implement ``log_prior``, ``log_lik`` and ``sample_prior``.
    Gradients are optional; ``has_gradients`` reports whether they exist.
    """

    dim: int
    data: Dataset

    @property
    def data_size(self) -> int:
        return self.data.size

    @property
    def has_gradients(self) -> bool:
        return False

    def log_prior(self, theta: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def log_lik(self, x: np.ndarray, theta: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def sample_prior(self, rng: np.random.Generator, count: int) -> np.ndarray:
        raise NotImplementedError

    def grad_log_prior(self, theta):
        raise GradientUnavailableError(f"{type(self).__name__} has no gradients")

    def grad_log_lik(self, x, theta):
        raise GradientUnavailableError(f"{type(self).__name__} has no gradients")

    def log_joint(self, theta: np.ndarray, chunk: int = 4096) -> np.ndarray:
        """Unnormalised log posterior ``log p(theta) + sum_n log p(x_n|theta)``."""
        theta = _as_theta(theta, self.dim)
        out = np.empty(theta.shape[0])
        rows = self.data.rows
        for start in range(0, theta.shape[0], chunk):
            block = theta[start:start + chunk]
            out[start:start + chunk] = self.log_prior(block) + self.log_lik(rows, block).sum(axis=0)
        return out


class ConjugateGaussian(Model):
    """Isotropic Gaussian prior and Gaussian likelihood with known variance."""

    def __init__(self, prior_mean, prior_var: float, obs_var: float, data: Dataset):
        if prior_var <= 0 or obs_var <= 0:
            raise InvalidParameterError("variances must be positive")
        self.prior_mean = np.atleast_1d(np.asarray(prior_mean, dtype=float))
        self.dim = self.prior_mean.shape[0]
        if data.feature_dim != self.dim or data.labels is not None:
            raise InvalidDataError(
                f"data dimension {data.feature_dim} does not match parameter dimension {self.dim}"
            )
        self.prior_var = float(prior_var)
        self.obs_var = float(obs_var)
        self.data = data

    @property
    def has_gradients(self) -> bool:
        return True

    def log_prior(self, theta):
        theta = _as_theta(theta, self.dim)
        sq = np.sum((theta - self.prior_mean) ** 2, axis=1)
        return -0.5 * sq / self.prior_var - 0.5 * self.dim * (LOG_2PI + np.log(self.prior_var))

    def log_lik(self, x, theta):
        theta = _as_theta(theta, self.dim)
        x = np.asarray(x, dtype=float).reshape(-1, self.dim)
        sq = (
            np.sum(x**2, axis=1)[:, None]
            - 2.0 * x @ theta.T
            + np.sum(theta**2, axis=1)[None, :]
        )
        return -0.5 * np.maximum(sq, 0.0) / self.obs_var - 0.5 * self.dim * (
            LOG_2PI + np.log(self.obs_var)
        )

    def sample_prior(self, rng, count):
        return self.prior_mean + np.sqrt(self.prior_var) * rng.standard_normal((count, self.dim))

    def grad_log_prior(self, theta):
        theta = _as_theta(theta, self.dim)
        return -(theta - self.prior_mean) / self.prior_var

    def grad_log_lik(self, x, theta):
        theta = _as_theta(theta, self.dim)
        x = np.asarray(x, dtype=float).reshape(-1, self.dim)
        return (x[:, None, :] - theta[None, :, :]) / self.obs_var


class TiedMixture(Model):
    """Two-component 1-D Gaussian mixture whose means are tied.

    ``x ~ p N(theta1, sx^2) + (1 - p) N(theta1 + theta2, sx^2)`` with
    independent Gaussian priors ``theta1 ~ N(0, s1^2)``, ``theta2 ~ N(0, s2^2)``.
    """

    dim = 2

    def __init__(self, sigma1: float, sigma2: float, sigma_x: float, mix_p: float, data: Dataset):
        if min(sigma1, sigma2, sigma_x) <= 0:
            raise InvalidParameterError("scale parameters must be positive")
        if not 0.0 < mix_p < 1.0:
            raise InvalidParameterError(f"mix_p must lie in (0, 1), got {mix_p}")
        if data.feature_dim != 1 or data.labels is not None:
            raise InvalidDataError("tied mixture expects scalar observations")
        self.sigma1, self.sigma2, self.sigma_x = float(sigma1), float(sigma2), float(sigma_x)
        self.mix_p = float(mix_p)
        self.data = data

    @property
    def has_gradients(self) -> bool:
        return True

    @property
    def log_density_ceiling(self) -> float:
        return -np.log(self.sigma_x * np.sqrt(2.0 * np.pi))

    def log_prior(self, theta):
        theta = _as_theta(theta, 2)
        s = np.array([self.sigma1, self.sigma2])
        return np.sum(-0.5 * (theta / s) ** 2 - 0.5 * LOG_2PI - np.log(s), axis=1)

    def _component_logs(self, x, theta):
        theta = _as_theta(theta, 2)
        x = np.asarray(x, dtype=float).reshape(-1, 1)
        var = self.sigma_x**2
        norm = -0.5 * (LOG_2PI + np.log(var))
        r1 = x - theta[None, :, 0]
        r2 = x - (theta[None, :, 0] + theta[None, :, 1])
        a = np.log(self.mix_p) + norm - 0.5 * r1**2 / var
        b = np.log1p(-self.mix_p) + norm - 0.5 * r2**2 / var
        return a, b, r1, r2

    def log_lik(self, x, theta):
        a, b, _, _ = self._component_logs(x, theta)
        return np.logaddexp(a, b)

    def sample_prior(self, rng, count):
        return rng.standard_normal((count, 2)) * np.array([self.sigma1, self.sigma2])

    def grad_log_prior(self, theta):
        theta = _as_theta(theta, 2)
        return -theta / np.array([self.sigma1, self.sigma2]) ** 2

    def grad_log_lik(self, x, theta):
        a, b, r1, r2 = self._component_logs(x, theta)
        resp = expit(a - b)  # posterior probability of the first component
        var = self.sigma_x**2
        g1 = (resp * r1 + (1.0 - resp) * r2) / var
        g2 = (1.0 - resp) * r2 / var
        return np.stack([g1, g2], axis=-1)


class LogisticRegression(Model):
    """Bayesian logistic regression, ``p(y|x,w) = 1 / (1 + exp(-y w.x))``.

    Rows are ``[x_1, ..., x_D, y]`` with ``y`` in ``{-1, +1}``.
    """

    def __init__(self, data: Dataset, prior_var: float = 1.0):
        if prior_var <= 0:
            raise InvalidParameterError("prior_var must be positive")
        if data.labels is None:
            raise InvalidDataError("logistic regression needs labels")
        if not np.all(np.isin(data.labels, (-1.0, 1.0))):
            raise InvalidDataError("labels must be -1 or +1")
        self.data = data
        self.dim = data.feature_dim
        self.prior_var = float(prior_var)

    @property
    def has_gradients(self) -> bool:
        return True

    def log_prior(self, theta):
        theta = _as_theta(theta, self.dim)
        return -0.5 * np.sum(theta**2, axis=1) / self.prior_var - 0.5 * self.dim * (
            LOG_2PI + np.log(self.prior_var)
        )

    def _margins(self, x, theta):
        theta = _as_theta(theta, self.dim)
        x = np.asarray(x, dtype=float).reshape(-1, self.dim + 1)
        return x[:, -1:] * (x[:, :-1] @ theta.T), x

    def log_lik(self, x, theta):
        z, _ = self._margins(x, theta)
        return -np.logaddexp(0.0, -z)

    def sample_prior(self, rng, count):
        return np.sqrt(self.prior_var) * rng.standard_normal((count, self.dim))

    def grad_log_prior(self, theta):
        return -_as_theta(theta, self.dim) / self.prior_var

    def grad_log_lik(self, x, theta):
        z, x = self._margins(x, theta)
        coef = expit(-z) * x[:, -1:]
        return coef[:, :, None] * x[:, None, :-1]

    def predict_proba(self, features, theta, log_weights=None):
        """Posterior-predictive ``P(y = +1 | x)`` averaged over weighted parameters."""
        theta = _as_theta(theta, self.dim)
        p = expit(np.asarray(features, dtype=float) @ theta.T)
        if log_weights is None:
            return p.mean(axis=1)
        w = np.exp(log_weights - np.max(log_weights))
        return p @ (w / w.sum())


def make_conjugate_gaussian(prior_mean, prior_var, obs_var, data) -> ConjugateGaussian:
    return ConjugateGaussian(prior_mean, prior_var, obs_var, data)


def make_tied_mixture(sigma1, sigma2, sigma_x, mix_p, data) -> TiedMixture:
    return TiedMixture(sigma1, sigma2, sigma_x, mix_p, data)


def make_logistic(data, prior_var=1.0) -> LogisticRegression:
    return LogisticRegression(data, prior_var)
