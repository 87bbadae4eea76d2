"""Exception hierarchy.  Every error raised on purpose derives from
:class:`DensGroupError` so callers can catch the package's failures in one
place."""


class DensGroupError(Exception):
    pass


class InvalidBandwidthError(DensGroupError, ValueError):
    pass


class EmptyInputError(DensGroupError, ValueError):
    pass


class DomainError(DensGroupError, ValueError):
    pass


class DegenerateDensityError(DensGroupError, ValueError):
    pass


class UnstableCurveError(DensGroupError, ArithmeticError):
    pass


class DegenerateKnotsError(DensGroupError, ValueError):
    pass


class GridMismatchError(DensGroupError, ValueError):
    pass


class RankDeficiencyWarning(UserWarning):
    pass


class InvalidKError(DensGroupError, ValueError):
    pass


class PartitionMismatchError(DensGroupError, ValueError):
    pass


class EmptyWindowError(DensGroupError, ArithmeticError):
    """Local-linear weights sum to (numerically) zero."""


class DegenerateFitError(DensGroupError, ArithmeticError):
    pass


class IngestionError(DensGroupError, ValueError):
    pass


class ConfigError(DensGroupError, ValueError):
    """Invalid command-line or configuration-file parameters."""
