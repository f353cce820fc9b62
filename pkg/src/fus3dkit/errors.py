"""Exception types shared across the package."""


class Fus3DError(Exception):
    """Base class for all package errors."""


class ValidationError(Fus3DError, ValueError):
    """Input violates a documented precondition."""


class SpecMismatchError(ValidationError):
    """Two grids that must share a lattice do not."""


class FormatError(ValidationError):
    """A binary or text file does not follow its declared layout."""


class NumericalError(Fus3DError, ArithmeticError):
    """A computation produced a degenerate or non-finite result."""


class DegenerateConfigurationError(NumericalError):
    """Point configuration is too degenerate to determine a transform."""


class EmptyResultError(NumericalError):
    """An operation that must produce output produced none."""
