"""Shared exception types."""


class DriftcastError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(DriftcastError):
    """Operands have incompatible shapes."""


class NonFiniteError(DriftcastError):
    """A computation produced NaN or Inf from finite inputs."""


class TapeError(DriftcastError):
    """Gradient tape misuse (e.g. backward called twice)."""


class ConfigError(DriftcastError):
    """Invalid model, strategy, or experiment configuration."""


class DataError(DriftcastError):
    """Malformed or unusable input data."""
