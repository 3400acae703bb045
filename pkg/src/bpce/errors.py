"""Exception types raised across the package."""


class BpceError(Exception):
    """Base class for all package errors."""


class DomainError(BpceError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class EmbeddingFailure(BpceError, RuntimeError):
    """Circulant embedding produced a materially negative eigenvalue."""


class HorizonError(BpceError, ValueError):
    """Requested horizon exceeds the environment length."""


class PrecisionError(BpceError, ArithmeticError):
    """A quantity underflowed past the point where the result is meaningful."""


class ConfigError(BpceError, ValueError):
    """Invalid experiment configuration."""


class InsufficientData(BpceError, ValueError):
    """Too few usable points for a fit."""


class DegenerateData(BpceError, ValueError):
    """Fit input carries no information about the slope."""


class AlignmentError(BpceError, ValueError):
    """Tail tables do not share the thresholds a comparison needs."""
