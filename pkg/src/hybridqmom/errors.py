"""Exception types shared across the package."""


class HybridQMOMError(Exception):
    """Base class for all package errors."""


class DomainError(HybridQMOMError, ValueError):
    """A radius power was requested on a non-positive radius."""


class NonRealizableMoments(HybridQMOMError, ValueError):
    """Moment set has no valid CHyQMOM inversion.

    ``discriminant`` is the offending variance (radius or conditional velocity).
    """

    def __init__(self, message, discriminant):
        super().__init__(message)
        self.discriminant = discriminant


class IntegrationError(HybridQMOMError, RuntimeError):
    """Time integration failed (step underflow or unrecoverable state)."""

    def __init__(self, message, t=None, state=None):
        super().__init__(message)
        self.t = t
        self.state = state


class ContractError(HybridQMOMError, ValueError):
    """Input shape or argument contract violated."""


class CheckpointError(HybridQMOMError):
    """Model checkpoint is corrupt or has an unsupported version."""


class SchemaError(HybridQMOMError, ValueError):
    """A CSV/JSON file does not follow the expected schema."""


class MissingInputError(HybridQMOMError, FileNotFoundError):
    """A required input file or directory does not exist."""


class ConfigError(HybridQMOMError, ValueError):
    """Malformed or invalid configuration."""


class TrainingError(HybridQMOMError, FloatingPointError):
    """Training produced a non-finite loss."""
