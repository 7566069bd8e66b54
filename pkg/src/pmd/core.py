"""Particle mirror descent: stochastic functional mirror descent over densities.

Each iteration draws a mini-batch, forms the stochastic functional gradient
``g(theta) = log q(theta) - log p(theta) - (N/|B|) sum_B log p(x|theta)`` and
applies the multiplicative prox step ``q <- q exp(-gamma g) / Z`` through one
of two tractable representations:

* weighted particles: fixed support points, reweighted in log space;
* weighted KDE: fresh points drawn from the current estimate, importance
  reweighted, then smoothed with Gaussian kernels.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np

from .density import (
    BandwidthRule,
    KdeDensity,
    ParticleCloud,
    bandwidth,
    integral_estimate,
    median_trick_scale,
    normalize_log_weights,
    standardize,
    standardizing_scale,
)
from .exceptions import ConfigError, InvalidParameterError
from .model import Dataset, Model

# --------------------------------------------------------------------------
# schedules


@dataclass(frozen=True)
class EtaOverT:
    """``gamma_t = eta / t``, clamped to 1 for the first ``ceil(eta) - 1`` steps."""

    eta: float = 1.0

    def __post_init__(self):
        if self.eta <= 0:
            raise InvalidParameterError("eta must be positive")


@dataclass(frozen=True)
class CappedHarmonic:
    """``gamma_t = min(2 / (t + 1), delta / (M m_t^(beta / (d + 2 beta))))``."""

    M: float = 10.0
    delta: float = 1.0
    beta: float = 2.0

    def __post_init__(self):
        if min(self.M, self.delta, self.beta) <= 0:
            raise InvalidParameterError("M, delta and beta must be positive")


StepSchedule = Union[EtaOverT, CappedHarmonic]


def stepsize(schedule: StepSchedule, t: int, m_t: int = 1, d: int = 1) -> float:
    if t < 1:
        raise InvalidParameterError("iterations are numbered from 1")
    if isinstance(schedule, EtaOverT):
        gamma = schedule.eta / t
    elif isinstance(schedule, CappedHarmonic):
        b = schedule.beta
        gamma = min(2.0 / (t + 1), schedule.delta / (schedule.M * m_t ** (b / (d + 2 * b))))
    else:
        raise TypeError(f"unknown step schedule {schedule!r}")
    return min(gamma, 1.0)


@dataclass(frozen=True)
class Fixed:
    m: int

    def __post_init__(self):
        if self.m < 1:
            raise InvalidParameterError("particle count must be at least 1")


@dataclass(frozen=True)
class Linear:
    m0: int

    def __post_init__(self):
        if self.m0 < 1:
            raise InvalidParameterError("m0 must be at least 1")


@dataclass(frozen=True)
class Power:
    m0: float
    exponent: float

    def __post_init__(self):
        if self.m0 <= 0 or self.exponent < 0:
            raise InvalidParameterError("m0 must be positive and exponent nonnegative")


ParticleSchedule = Union[Fixed, Linear, Power]


def particle_count(schedule: ParticleSchedule, t: int) -> int:
    if isinstance(schedule, Fixed):
        return schedule.m
    if isinstance(schedule, Linear):
        return schedule.m0 * t
    if isinstance(schedule, Power):
        return max(1, math.ceil(schedule.m0 * t**schedule.exponent - 1e-9))
    raise TypeError(f"unknown particle schedule {schedule!r}")


# --------------------------------------------------------------------------
# strategies and configuration


@dataclass(frozen=True)
class WeightedParticles:
    pass


@dataclass(frozen=True)
class WeightedKde:
    pass


@dataclass(frozen=True)
class SwitchAt:
    """Run the KDE strategy before ``t_switch`` and weighted particles from it on."""

    t_switch: int


Strategy = Union[WeightedParticles, WeightedKde, SwitchAt]


@dataclass(frozen=True)
class PmdConfig:
    strategy: Strategy = WeightedKde()
    batch_size: int = 10
    iterations: int = 100
    step: StepSchedule = EtaOverT(1.0)
    particles: ParticleSchedule = Fixed(1000)
    particle_step: StepSchedule | None = None  # schedule after a switch; None reuses ``step``
    bandwidth_rule: BandwidthRule = BandwidthRule()
    rng_seed: int = 0
    sampling: str = "with_replacement"
    record: str = "geometric"
    standardize: str = "each_step"  # each_step | initial: kernel frame refit per step or frozen at t=1

    def validate(self, model: Model, data: Dataset | None = None) -> None:
        n = (data or model.data).size
        if self.batch_size < 1:
            raise ConfigError("batch_size must be positive")
        if self.batch_size > n:
            raise ConfigError(f"batch_size {self.batch_size} exceeds dataset size {n}")
        if self.iterations < 1:
            raise ConfigError("iterations must be positive")
        if isinstance(self.strategy, SwitchAt) and not 1 <= self.strategy.t_switch <= self.iterations:
            raise ConfigError("t_switch must lie in [1, iterations]")
        if self.sampling not in ("with_replacement", "epoch"):
            raise ConfigError(f"unknown sampling mode {self.sampling!r}")
        if self.standardize not in ("each_step", "initial"):
            raise ConfigError(f"unknown standardize mode {self.standardize!r}")
        if self.record not in ("geometric", "all"):
            raise ConfigError(f"unknown record cadence {self.record!r}")


# --------------------------------------------------------------------------
# prox steps


def minibatch_log_lik(model: Model, batch: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """``(N / |B|) sum_{x in B} log p(x | theta)`` for each row of ``theta``."""
    batch = np.asarray(batch, dtype=float)
    if batch.ndim == 1:
        batch = batch[:, None]
    if batch.shape[0] < 1:
        raise InvalidParameterError("mini-batch is empty")
    ll = model.log_lik(batch, theta)
    return model.data_size / batch.shape[0] * ll.sum(axis=0)


def _check_gamma(gamma):
    if not 0.0 <= gamma <= 1.0:
        raise InvalidParameterError(f"stepsize must lie in [0, 1], got {gamma}")


def reweight_particles(cloud: ParticleCloud, model: Model, batch, gamma: float) -> ParticleCloud:
    """Weighted-particle prox step; locations stay fixed.

    ``log w_i <- (1 - gamma) log w_i + gamma (N/|B|) sum_B log p(x|theta_i)``.
    If the cloud was drawn from a base density other than the prior
    (``cloud.log_base`` set), the exact step adds ``gamma (log p - log base)``.
    """
    _check_gamma(gamma)
    if gamma == 0.0:
        return cloud
    logw = (1.0 - gamma) * cloud.log_weights
    logw = logw + gamma * minibatch_log_lik(model, batch, cloud.points)
    if cloud.log_base is not None:
        logw = logw + gamma * (model.log_prior(cloud.points) - cloud.log_base)
    return ParticleCloud(cloud.points, logw, cloud.log_base)


class PriorDensity:
    """The prior as a sampleable, evaluable density (the initial estimate)."""

    def __init__(self, model: Model):
        self.model = model

    def sample(self, rng, count):
        return self.model.sample_prior(rng, count)

    def logpdf(self, theta):
        return self.model.log_prior(theta)


def kde_prox_step(
    kde,
    model: Model,
    batch,
    gamma: float,
    m_next: int,
    h_next: float,
    rng: np.random.Generator,
    standardized: bool = True,
) -> KdeDensity:
    """Weighted-KDE prox step.

    Draws ``m_next`` points from the current estimate ``kde`` (a
    :class:`KdeDensity` or :class:`PriorDensity`), weights them by
    ``q(theta)^-gamma p(theta)^gamma p(B|theta)^(N gamma / |B|)`` and
    smooths with bandwidth ``h_next``.
    """
    _check_gamma(gamma)
    if m_next < 1:
        raise InvalidParameterError("m_next must be at least 1")
    if not h_next > 0:
        raise InvalidParameterError(f"bandwidth must be positive, got {h_next}")
    centers, logw = _kde_weights(kde, model, batch, gamma, m_next, rng)
    scale = standardizing_scale(centers, normalize_log_weights(logw)) if standardized else None
    return KdeDensity(centers, logw, h_next, scale)


def _kde_weights(q, model, batch, gamma, m_next, rng):
    centers = q.sample(rng, m_next)
    if gamma == 0.0:
        return centers, np.zeros(m_next)
    logw = gamma * (
        model.log_prior(centers) - q.logpdf(centers) + minibatch_log_lik(model, batch, centers)
    )
    return centers, logw


# --------------------------------------------------------------------------
# driver


@dataclass
class TraceRecord:
    t: int
    gamma: float
    m: int
    ess: float
    data_visited: int
    wall_clock: float
    state: object
    metrics: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        """Serialisable fields.  Wall-clock is excluded so reruns are byte-identical."""
        out = {
            "t": self.t,
            "gamma": self.gamma,
            "m": self.m,
            "ess": self.ess,
            "data_visited": self.data_visited,
        }
        out.update(self.metrics)
        return out


@dataclass
class InferenceTrace:
    records: list = field(default_factory=list)
    final: object = None

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)


def record_iterations(T: int, cadence: str = "geometric") -> set:
    """Iterations at which the trace records: 1, 2, 4, 8, ... and T."""
    if cadence == "all":
        return set(range(1, T + 1))
    out, t = {T}, 1
    while t <= T:
        out.add(t)
        t *= 2
    return out


def iteration_rng(root: np.random.SeedSequence, t: int) -> np.random.Generator:
    """Generator for iteration ``t`` derived by counter from the run's root seed."""
    return np.random.default_rng(np.random.SeedSequence(root.entropy, spawn_key=(*root.spawn_key, t)))


class MinibatchSampler:
    """Uniform mini-batch draws, with replacement or by shuffled epochs."""

    def __init__(self, n: int, batch_size: int, mode: str = "with_replacement"):
        self.n, self.batch_size, self.mode = n, batch_size, mode
        self._perm = np.empty(0, dtype=int)

    def draw(self, rng: np.random.Generator) -> np.ndarray:
        if self.mode == "with_replacement":
            return rng.integers(0, self.n, size=self.batch_size)
        if self._perm.size < self.batch_size:
            self._perm = np.concatenate([self._perm, rng.permutation(self.n)])
        idx, self._perm = self._perm[: self.batch_size], self._perm[self.batch_size:]
        return idx


def _root_seed(config, rng):
    if rng is None:
        return np.random.SeedSequence(config.rng_seed)
    if isinstance(rng, np.random.SeedSequence):
        return rng
    if isinstance(rng, np.random.Generator):
        return np.random.SeedSequence(int(rng.integers(2**63)))
    return np.random.SeedSequence(int(rng))


def run_pmd(
    config: PmdConfig,
    model: Model,
    data: Dataset | None = None,
    rng=None,
    on_record: Callable | None = None,
) -> InferenceTrace:
    """Run ``config.iterations`` mirror-descent steps starting from the prior.

    ``rng`` may be a seed, a ``SeedSequence`` or a ``Generator``; by default
    ``config.rng_seed`` is used.  ``on_record(t, state)`` may return a dict of
    metrics stored with each recorded iteration.
    """
    data = model.data if data is None else data
    config.validate(model, data)
    root = _root_seed(config, rng)
    rows = data.rows
    d = model.dim
    sampler = MinibatchSampler(data.size, config.batch_size, config.sampling)
    recorded = record_iterations(config.iterations, config.record)
    rule = config.bandwidth_rule
    particle_step = config.step
    if isinstance(config.strategy, SwitchAt) and config.particle_step is not None:
        particle_step = config.particle_step

    strategy = config.strategy
    t_switch = strategy.t_switch if isinstance(strategy, SwitchAt) else None
    use_particles = isinstance(strategy, WeightedParticles) or t_switch == 1

    state = PriorDensity(model)
    frame = None
    trace = InferenceTrace()
    start = time.perf_counter()

    for t in range(1, config.iterations + 1):
        rng_t = iteration_rng(root, t)
        if t == t_switch:
            use_particles = True
        m_t = particle_count(config.particles, t)
        if use_particles and not isinstance(state, ParticleCloud):
            # line 7 of the algorithm: draw the support once, from the current estimate
            pts = state.sample(rng_t, m_t)
            base = None if isinstance(state, PriorDensity) else state.logpdf(pts)
            state = ParticleCloud.uniform(pts, base)
        batch = rows[sampler.draw(rng_t)]
        if use_particles:
            m_t = state.size
            gamma = stepsize(particle_step, t, m_t, d)
            state = reweight_particles(state, model, batch, gamma)
        else:
            gamma = stepsize(config.step, t, m_t, d)
            centers, logw = _kde_weights(state, model, batch, gamma, m_t, rng_t)
            if frame is None or config.standardize == "each_step":
                frame = standardizing_scale(centers, normalize_log_weights(logw))
            scale = frame
            if rule.scale is None:
                rule = rule.with_scale(median_trick_scale(rule, standardize(centers, scale)))
            state = KdeDensity(centers, logw, bandwidth(rule, m_t, d), scale)

        if t in recorded:
            metrics = on_record(t, state) if on_record is not None else {}
            trace.records.append(
                TraceRecord(
                    t=t,
                    gamma=gamma,
                    m=m_t,
                    ess=state.ess(),
                    data_visited=t * config.batch_size,
                    wall_clock=time.perf_counter() - start,
                    state=state,
                    metrics=dict(metrics or {}),
                )
            )
    trace.final = state
    return trace
