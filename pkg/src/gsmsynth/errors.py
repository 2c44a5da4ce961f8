"""Exception types raised across the package."""


class GsmSynthError(Exception):
    """Base class for all package errors."""


class DimensionError(GsmSynthError, ValueError):
    """Array shapes do not agree."""


class InvalidInputError(GsmSynthError, ValueError):
    """Non-finite values or otherwise invalid numeric input."""


class DomainError(GsmSynthError, ValueError):
    """Argument outside the mathematical domain of an operation."""


class ConfigurationError(GsmSynthError, ValueError):
    """Unknown strategy name, bad schedule, invalid run configuration."""


class AssignmentError(GsmSynthError, IndexError):
    """A DOF assignment references a class that does not exist."""


class DegenerateColumnError(GsmSynthError, ArithmeticError):
    """An excitation column collapsed to zero norm."""


class RetractionError(GsmSynthError, ArithmeticError):
    """The factorization behind a retraction failed."""


class ResonanceError(GsmSynthError, ArithmeticError):
    """A system or termination matrix is singular (resonant configuration)."""


class MissingSampleError(GsmSynthError, KeyError):
    """A requested angle is not present in a far-field sample grid."""


class MetricUndefinedError(GsmSynthError, ArithmeticError):
    """Main-beam field is zero, so ratio metrics are undefined."""


class GradientUndefinedError(GsmSynthError, ArithmeticError):
    """Cost sits at the zero-main-beam sentinel; the caller should shrink the step."""


class NotDiagonalizableError(GsmSynthError, ArithmeticError):
    """Eigenvector matrix is too ill-conditioned to treat the matrix as diagonalizable."""


class SweepFailedError(GsmSynthError, ArithmeticError):
    """Every point of a reference-plane sweep was singular."""


class FitInfeasibleError(GsmSynthError, ValueError):
    """The modal transformation is not close enough to a real rotation."""


class DatasetError(GsmSynthError, ValueError):
    """Malformed or inconsistent dataset directory."""


class ReciprocityWarning(UserWarning):
    """Imported coupling data violates G(l,k) = G(k,l)^T."""
