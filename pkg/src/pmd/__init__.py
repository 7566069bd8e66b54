"""Particle mirror descent: stochastic mirror descent over posterior densities,
represented by weighted particles or weighted kernel density estimates."""

from .core import (
    EtaOverT,
    Fixed,
    InferenceTrace,
    Linear,
    PmdConfig,
    Power,
    SwitchAt,
    CappedHarmonic,
    TraceRecord,
    WeightedKde,
    WeightedParticles,
    kde_prox_step,
    minibatch_log_lik,
    particle_count,
    reweight_particles,
    run_pmd,
    stepsize,
)
from .density import (
    BandwidthRule,
    KdeDensity,
    ParticleCloud,
    bandwidth,
    effective_sample_size,
    integral_estimate,
    kde_evaluate,
    kde_sample,
    log_sum_exp,
    normalize_log_weights,
)
from .exceptions import (
    ConfigError,
    DegenerateWeightsError,
    GradientUnavailableError,
    InvalidDataError,
    InvalidParameterError,
    MassLeakError,
    PMDError,
)
from .model import (
    ConjugateGaussian,
    Dataset,
    LogisticRegression,
    Model,
    TiedMixture,
    make_conjugate_gaussian,
    make_logistic,
    make_tied_mixture,
)
from .sgld import SgldConfig, run_sgld, sgld_step

__version__ = "0.1.0"
