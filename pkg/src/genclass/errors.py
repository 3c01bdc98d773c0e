"""Exception hierarchy.

Each family maps onto one CLI exit code: config/usage errors exit 1,
data and format errors exit 2, numeric aborts exit 3.
"""


class GenClassError(Exception):
    exit_code = 1


class ConfigError(GenClassError, ValueError):
    exit_code = 1


class ContractError(GenClassError, ValueError):
    """A caller broke an operation's precondition."""

    exit_code = 1


class DimensionError(ContractError):
    pass


class PairingError(ContractError):
    """The batch cannot yield both similar and dissimilar pairs; resample it."""


class DataError(GenClassError):
    exit_code = 2


class MagicMismatchError(DataError):
    pass


class TruncatedFileError(DataError):
    pass


class ShapeMismatchError(DataError):
    pass


class ManifestError(DataError):
    pass


class InvariantViolationError(DataError):
    def __init__(self, message, violations=()):
        super().__init__(message)
        self.violations = list(violations)


class MissingAttributeError(DataError):
    pass


class NumericAbort(GenClassError):
    exit_code = 3

    def __init__(self, message, iteration=None, breakdown=None):
        super().__init__(message)
        self.iteration = iteration
        self.breakdown = breakdown


class IncompatibleCheckpointError(DataError, DimensionError):
    """Checkpoint and dataset disagree on feature or attribute dimension."""
