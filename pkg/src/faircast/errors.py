"""Exception hierarchy shared across the package."""


class FaircastError(Exception):
    """Base class for all faircast errors."""


class InvalidInputError(FaircastError):
    """An argument violates an operation's preconditions."""


class ConfigError(FaircastError):
    """Run configuration is missing keys or holds unusable values."""


class DataError(FaircastError):
    """An input file is malformed; the message names the file and row."""


class DegenerateGroupError(FaircastError):
    """A fairness group is empty or carries zero population mass."""


class UndefinedCorrelationError(FaircastError):
    """Rank correlation is undefined, e.g. for a constant input vector."""


class NumericError(FaircastError):
    """Training or evaluation produced non-finite numbers."""
