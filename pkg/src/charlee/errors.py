"""Exception hierarchy shared by all charlee modules."""


class CharleeError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(CharleeError):
    """Invalid configuration: bad shapes, bad hyperparameters, bad config files."""

    exit_code = 2


class InputError(CharleeError):
    """Invalid input data: parse failures, malformed datasets, empty inputs."""

    exit_code = 3


class DomainError(CharleeError):
    """Argument outside the mathematical domain of an operation."""

    exit_code = 4


class StateError(CharleeError):
    """Operation applied to an object in the wrong state (e.g. stepping a finished episode)."""

    exit_code = 4


class InvariantViolation(CharleeError):
    """An internal invariant was broken by the caller (e.g. increasing utilization)."""

    exit_code = 4


class NumericFailure(CharleeError):
    """Non-finite values encountered during training or evaluation."""

    exit_code = 4
