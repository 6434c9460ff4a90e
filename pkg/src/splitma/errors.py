"""Shared exception types.

Exit-code mapping used by the CLI: ConfigurationError -> 2,
monitor/assertion failures -> 1, AdmissibilityLost / NumericalFailure -> 3.
"""


class SplitmaError(Exception):
    """Base class for all package errors."""


class ConfigurationError(SplitmaError):
    """Invalid grid dimensions, parameter ranges, or config file contents."""


class FieldFormatError(SplitmaError):
    """Corrupt header or payload in a field file."""


class PoissonDataError(SplitmaError):
    """Right-hand side violates the per-slice solvability condition."""


class AdmissibilityLost(SplitmaError):
    """A trace factor dropped to (or below) the admissibility floor.

    Signals either a time step beyond the stability limit or genuine
    degeneration of the flowed metric.
    """

    def __init__(self, message, t=None, which=None, value=None):
        super().__init__(message)
        self.t = t
        self.which = which
        self.value = value


class NumericalFailure(SplitmaError):
    """Unrecoverable numerical breakdown (e.g. repeated step rejection)."""


class BelowBetaThreshold(ConfigurationError):
    """Exponent ratio below the universal threshold required by the
    upper-bound constants."""
