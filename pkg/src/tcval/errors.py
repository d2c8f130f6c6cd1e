"""Exception hierarchy shared by all engines."""


class TcvalError(Exception):
    """Base class for every error raised by this package."""


class ConfigurationError(TcvalError, ValueError):
    """Invalid parameters, grids or solver settings."""

    def __init__(self, message: str, field: str | None = None):
        self.field = field
        self.detail = message
        if field is not None:
            message = f"{field}: {message}"
        super().__init__(message)


class ContractError(TcvalError, ValueError):
    """A declared property of an input (monotonicity, positivity) does not hold."""


class DomainError(TcvalError, ValueError):
    """A valuation left the domain where it is defined."""


class CalibrationError(TcvalError, ValueError):
    """Quadrinomial calibration impossible for the requested confidence level."""


class IntegrabilityError(TcvalError, ValueError):
    """An expectation required by a closed form does not exist."""


class UnsupportedRepresentationError(TcvalError, ValueError):
    """No closed-form representation exists for the requested inputs."""


class SliceLookupError(TcvalError, KeyError):
    """Requested time is not on the surface's time grid."""
