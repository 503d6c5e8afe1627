"""Exception taxonomy shared across the package.

CLI exit codes: ConfigurationError family -> 2, DataError family -> 3,
NumericError -> 4.
"""


class ThinsegError(Exception):
    """Base class for all package errors."""


class ConfigurationError(ThinsegError):
    """Invalid configuration: bad hyperparameter, impossible op setup."""


class DimensionError(ConfigurationError):
    """Tensor shape mismatch; message names the offending axes."""


class ContractError(ConfigurationError):
    """An operation was called outside its contract (e.g. backward on a
    non-scalar, feedback fusion at stage 1)."""


class DegenerateStatisticsError(ConfigurationError):
    """Batch statistics requested over fewer than two elements."""


class SizingError(ConfigurationError):
    """Image extents do not meet a divisibility requirement."""


class DataError(ThinsegError):
    """Missing, corrupt, or inconsistent data on disk."""


class LabelError(DataError):
    """A label map contains values outside the class alphabet."""


class DegenerateFrequencyError(DataError):
    """A class needed for frequency-based weighting is absent from the
    dataset; message names the class."""


class NumericError(ThinsegError):
    """Non-finite values encountered where finite ones are required."""
