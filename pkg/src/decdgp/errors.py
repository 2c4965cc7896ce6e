"""Exception hierarchy with distinct CLI exit codes per failure family."""


class DecdgpError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigurationError(DecdgpError):
    """Invalid shapes, flags, variants, or model configuration."""

    exit_code = 2


class IngestionError(DecdgpError):
    """Unreadable or unparseable dataset or checkpoint input."""

    exit_code = 3


class NumericalError(DecdgpError):
    """A numerical routine failed: factorization, non-finite values."""

    exit_code = 4


class TrainingError(NumericalError):
    """Training aborted on non-finite values.

    ``last_good`` carries the most recent finite parameter snapshot
    (a dict with ``params``, ``adam`` and ``epoch`` entries) so callers
    can checkpoint it.
    """

    def __init__(self, message, last_good=None):
        super().__init__(message)
        self.last_good = last_good


class OracleError(DecdgpError):
    """A brute-force reference computation could not be completed."""

    exit_code = 4


class VerificationError(DecdgpError):
    """A verification command (gradient check) exceeded its tolerance."""

    exit_code = 5
