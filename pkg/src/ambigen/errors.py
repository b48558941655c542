"""Shared exception types."""


class AmbigenError(Exception):
    """Base class for all package errors."""


class ConfigError(AmbigenError):
    """Invalid configuration or precondition violation caught at validation time."""


class DimensionError(AmbigenError):
    """Tensor shapes inconsistent with the declared operation."""


class NumericError(AmbigenError):
    """A computation produced NaN or Inf."""


class FormatError(AmbigenError):
    """Malformed file content. Carries the byte offset of the problem."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class UnlabelablePointError(AmbigenError):
    """Both discriminator scores vanish; the latent point is in an invalid region."""


class EmptyPlanError(AmbigenError):
    """Every grid cell received zero sampling weight."""


class SampleBudgetError(AmbigenError):
    """Rejection sampling exhausted its retry budget. Carries partial results."""

    def __init__(self, message: str, partial):
        super().__init__(message)
        self.partial = partial


class FitError(AmbigenError):
    """A supervisor fit could not be completed (e.g. empty class pool)."""


class NotCalculableError(AmbigenError):
    """A metric is undefined for the given row (e.g. no unique label top-pair)."""
