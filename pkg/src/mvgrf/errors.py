"""Exception types shared across the package.

Plain ``ValueError`` is used for ordinary argument validation; the classes
here mark conditions the CLI maps to distinct exit codes (config errors
exit 2, numerical failures exit 3) or that tests need to match precisely.
"""


class MvgrfError(Exception):
    """Base class for package-specific errors."""


class ConfigError(MvgrfError):
    """Invalid configuration document (schema violation, unknown keys)."""


class FormatError(MvgrfError):
    """Malformed field file (bad magic, version, tag, or truncation)."""


class NumericalError(MvgrfError):
    """Numerical failure during a computation."""


class DefinitenessError(NumericalError):
    """Matrix is not positive (semi)definite within tolerance.

    Carries the offending eigenvalue or pivot so callers can report which
    frequency or index broke.
    """

    def __init__(self, message, *, eigenvalue=None, pivot_index=None, frequency=None):
        super().__init__(message)
        self.eigenvalue = eigenvalue
        self.pivot_index = pivot_index
        self.frequency = frequency


class SymmetryError(NumericalError):
    """Conjugate-symmetry violation detected (imaginary residual too large)."""


class BoundaryError(NumericalError):
    """Optimizer settled on the search boundary; the estimate is not interior."""
