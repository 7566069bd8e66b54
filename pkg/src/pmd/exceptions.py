"""Exception types raised across the package."""


class PMDError(Exception):
    """Base class for all package errors."""


class InvalidParameterError(PMDError, ValueError):
    """A model or schedule parameter is outside its valid range."""


class InvalidDataError(PMDError, ValueError):
    """A dataset is empty, malformed or inconsistent with the model."""


class DegenerateWeightsError(PMDError, FloatingPointError):
    """Every log-weight is -inf: the particle population has been depleted."""


class GradientUnavailableError(PMDError, NotImplementedError):
    """The model does not provide analytic gradients."""


class ConfigError(PMDError, ValueError):
    """An experiment or algorithm configuration failed validation."""


class MassLeakError(PMDError, RuntimeError):
    """A grid oracle does not cover enough of the posterior mass."""
