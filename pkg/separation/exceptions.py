"""
Error hierarchy for the separation engine.

Library code raises these; the engine's run loop converts step failures into a
failed SeparationResult, management commands turn them into CommandError and the
API into HttpError(400).
"""
from typing import Optional


class SeparationError(Exception):
    """Base class for every error raised by the separation package."""


class DimensionError(SeparationError, ValueError):
    """Operand shapes do not fit the operation (non-square, wrong block count, N = 0)."""


class NonFiniteInputError(SeparationError, ValueError):
    """Input contains NaN or infinite entries."""


class DegenerateChannelError(SeparationError):
    """A channel has (relatively) zero second moment."""

    def __init__(self, channel: int, second_moment: float):
        self.channel = channel
        self.second_moment = second_moment
        super().__init__(
            f"Channel {channel} is degenerate (second moment {second_moment:.3e})"
        )


class IllConditionedSystemError(SeparationError):
    """The Newton system matrix is (numerically) singular."""

    def __init__(self, condition: float, limit: float):
        self.condition = condition
        self.limit = limit
        super().__init__(
            f"Newton system is ill-conditioned: condition estimate {condition:.3e} exceeds {limit:.1e}"
        )


class StepRejectedError(SeparationError):
    """Every damped version of a Newton step increased the stationarity residual."""

    def __init__(self, residual: float, trial: float, halvings: int):
        self.residual = residual
        self.trial = trial
        self.halvings = halvings
        super().__init__(
            f"Newton step rejected after {halvings} halvings: residual {trial:.3e} not below {residual:.3e}"
        )


class MixtureGenerationError(SeparationError):
    """A synthetic mixture could not be generated as specified."""


class CSVParseError(SeparationError):
    """A signal CSV could not be parsed into finite reals."""

    def __init__(self, message: str, row: Optional[int] = None, column: Optional[str] = None):
        self.row = row
        self.column = column
        location = []
        if row is not None:
            location.append(f"row {row}")
        if column is not None:
            location.append(f"column '{column}'")
        suffix = f" ({', '.join(location)})" if location else ""
        super().__init__(f"{message}{suffix}")


class ConfigurationError(SeparationError, ValueError):
    """Solver or benchmark configuration is inconsistent."""
