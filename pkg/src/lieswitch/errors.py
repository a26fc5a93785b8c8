"""Exception hierarchy.

Every error carries a stable class name; the CLI writes that name into the
report and maps the family to an exit code.
"""


class LieSwitchError(Exception):
    """Base class for all package errors."""


class InputError(LieSwitchError, ValueError):
    """Malformed matrices, signals or parameters."""


class AlgebraError(LieSwitchError):
    """Failure while building or decomposing a Lie algebra."""


class SolvabilityCheckFailed(AlgebraError):
    pass


class LiftingSingular(AlgebraError):
    pass


class ResidualTooLarge(AlgebraError):
    pass


class IntegrationError(LieSwitchError):
    """Failure while propagating an evolution operator."""


class StepTooCoarse(IntegrationError):
    pass


class IllConditioned(IntegrationError):
    pass


class GridMismatch(IntegrationError):
    pass


class OffGrid(LieSwitchError, ValueError):
    pass


class EntropyDataError(LieSwitchError):
    pass


class InsufficientGrowthData(EntropyDataError):
    pass


class StabilityError(LieSwitchError):
    pass


class EigenFailure(StabilityError):
    pass


class DegenerateEnvelope(StabilityError):
    pass
