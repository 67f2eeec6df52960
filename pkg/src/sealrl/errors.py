"""Exception types shared across the package."""


class SealError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(SealError):
    """Malformed or incomplete configuration."""


class DataError(SealError):
    """Invalid dataset contents or an unreadable data file."""


class InvalidFoldCountError(SealError):
    """Requested fold count is outside [1, number of trajectories]."""


class ErgodicityError(SealError):
    """The behavior chain's stationary distribution did not converge."""


class CrossFittingError(SealError):
    """A pseudo-outcome would use a nuisance trained on its own fold."""


class EmptyDataError(SealError):
    """An operation received no samples."""


class NumericError(SealError):
    """A training loss or model output became non-finite."""


class ShapeError(SealError):
    """Array dimensions do not match the model or operation."""
