"""Stochastic gradient Langevin dynamics, the gradient-based baseline.

A single chain is run with a decaying stepsize ``eps_t = a (b + t)^(-kappa)``;
the kept samples are returned both as a raw chain and as a uniformly weighted
:class:`~pmd.density.ParticleCloud` so the diagnostics treat it like any
other estimate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import MinibatchSampler, _root_seed, iteration_rng
from .density import ParticleCloud
from .exceptions import ConfigError, GradientUnavailableError, InvalidParameterError
from .model import Dataset, Model


@dataclass(frozen=True)
class SgldConfig:
    step_a: float = 0.01
    step_b: float = 10.0
    step_kappa: float = 0.55
    batch_size: int = 10
    iterations: int = 1000
    burn_in: int = 100
    thin: int = 1
    rng_seed: int = 0
    sampling: str = "with_replacement"

    def validate(self, model: Model | None = None, data: Dataset | None = None) -> None:
        if self.step_a <= 0 or self.step_b < 0:
            raise ConfigError("step_a must be positive and step_b non-negative")
        if not 0.5 < self.step_kappa <= 1.0:
            raise ConfigError(f"step_kappa must lie in (0.5, 1], got {self.step_kappa}")
        if self.iterations < 1 or self.thin < 1 or self.burn_in < 0:
            raise ConfigError("iterations and thin must be >= 1, burn_in >= 0")
        if self.burn_in >= self.iterations:
            raise ConfigError(
                f"burn_in ({self.burn_in}) must be smaller than iterations ({self.iterations})"
            )
        if self.sampling not in ("with_replacement", "epoch"):
            raise ConfigError(f"unknown sampling mode {self.sampling!r}")
        if model is not None:
            n = (data or model.data).size
            if self.batch_size < 1 or self.batch_size > n:
                raise ConfigError(f"batch_size must lie in [1, {n}], got {self.batch_size}")

    def stepsize(self, t: int) -> float:
        return self.step_a * (self.step_b + t) ** (-self.step_kappa)

    @property
    def kept(self) -> int:
        return (self.iterations - self.burn_in) // self.thin


def posterior_drift(theta: np.ndarray, model: Model, batch: np.ndarray) -> np.ndarray:
    """Mini-batch estimate of ``grad log p(theta) + N * mean_B grad log p(x|theta)``."""
    if not model.has_gradients:
        raise GradientUnavailableError(f"{type(model).__name__} has no gradients")
    theta = np.atleast_2d(theta)
    batch = np.asarray(batch, dtype=float)
    scale = model.data_size / batch.shape[0]
    return model.grad_log_prior(theta) + scale * model.grad_log_lik(batch, theta).sum(axis=0)


def sgld_step(theta, model: Model, batch, eps: float, rng: np.random.Generator) -> np.ndarray:
    """One Langevin update.

    ``theta' = theta + eps/2 * drift + sqrt(eps) * z`` with ``z ~ N(0, I)``.

    Parameters
    ----------
    theta : array_like, shape (d,) or (n, d)
        Current state.  A 2-D input advances ``n`` independent chains.
    eps : float
        Stepsize, ``>= 0``.  Zero leaves ``theta`` unchanged.
    """
    if eps < 0 or not np.isfinite(eps):
        raise InvalidParameterError(f"stepsize must be finite and non-negative, got {eps}")
    theta = np.asarray(theta, dtype=float)
    flat = theta.ndim == 1
    state = np.atleast_2d(theta)
    # overflow surfaces as non-finite values, which run_sgld reports as divergence
    with np.errstate(over="ignore", invalid="ignore"):
        drift = posterior_drift(state, model, batch)
        out = state + 0.5 * eps * drift + np.sqrt(eps) * rng.standard_normal(state.shape)
    return out[0] if flat else out


@dataclass(frozen=True)
class SgldResult:
    chain: np.ndarray  # kept samples, (kept, d)
    cloud: ParticleCloud
    stepsizes: np.ndarray
    data_visited: int


def run_sgld(
    config: SgldConfig,
    model: Model,
    data: Dataset | None = None,
    rng=None,
    init: np.ndarray | None = None,
) -> SgldResult:
    """Run one chain and keep every ``thin``-th sample after ``burn_in``.

    The chain starts from a prior draw unless ``init`` is given.  Each
    iteration uses its own child stream, so reruns are bit-identical.
    """
    data = model.data if data is None else data
    config.validate(model, data)
    if not model.has_gradients:
        raise GradientUnavailableError(f"{type(model).__name__} has no gradients")
    root = _root_seed(config, rng)
    rows = data.rows
    sampler = MinibatchSampler(data.size, config.batch_size, config.sampling)
    if init is None:
        theta = model.sample_prior(iteration_rng(root, 0), 1)[0]
    else:
        theta = np.asarray(init, dtype=float).reshape(model.dim)
    kept = np.empty((config.kept, model.dim))
    eps_all = np.empty(config.iterations)
    k = 0
    for t in range(1, config.iterations + 1):
        step_rng = iteration_rng(root, t)
        batch = rows[sampler.draw(step_rng)]
        eps = config.stepsize(t)
        eps_all[t - 1] = eps
        theta = sgld_step(theta, model, batch, eps, step_rng)
        if not np.all(np.isfinite(theta)):
            raise FloatingPointError(f"SGLD chain diverged at iteration {t}; reduce step_a")
        if t > config.burn_in and (t - config.burn_in) % config.thin == 0 and k < kept.shape[0]:
            kept[k] = theta
            k += 1
    cloud = ParticleCloud(kept, np.zeros(kept.shape[0]))
    return SgldResult(kept, cloud, eps_all, config.iterations * config.batch_size)
