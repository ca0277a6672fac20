"""Error taxonomy shared by the library and the CLI.

Exit-code mapping used by the CLI: configuration and data errors exit 1,
usage errors exit 2.
"""


class CtsError(Exception):
    """Base class for all library errors."""

    exit_code = 1


class ConfigurationError(CtsError):
    """Invalid model/run configuration (divisibility, shape mismatches, ...)."""

    exit_code = 1


class DataError(CtsError):
    """Bad input data: missing files, out-of-range labels, extent mismatches."""

    exit_code = 1


class UsageError(CtsError):
    """API misuse: backward on a non-scalar, missing gradients, bad CLI args."""

    exit_code = 2


class InsufficientDataError(DataError):
    """Statistical test called with too few usable observations."""
