"""Exception hierarchy shared by all modules."""


class ResMarkovError(Exception):
    """Base class for library errors."""


class DomainError(ResMarkovError, ValueError):
    """An argument lies outside the domain of the operation."""


class QuadratureError(ResMarkovError, ArithmeticError):
    """A numerical integral failed to converge to the requested tolerance."""


class StructuralError(ResMarkovError):
    """A structural invariant (e.g. sector block structure) is violated."""


class AmbiguityError(ResMarkovError, ValueError):
    """A grouping tolerance does not separate distinct values."""


class DiagonalizabilityError(ResMarkovError, ArithmeticError):
    """A matrix that must be diagonalizable is (numerically) defective."""


class OracleError(ResMarkovError):
    """The finite-mode reservoir violates a sizing or truncation guard."""


class ConfigError(ResMarkovError, ValueError):
    """A run configuration is malformed or fails schema validation."""
