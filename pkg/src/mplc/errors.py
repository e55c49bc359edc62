"""Exception types shared across the package."""


class MplcError(Exception):
    """Base class for all package errors."""


class GridMismatchError(MplcError, ValueError):
    """Two fields or masks live on different grids."""


class DegenerateFieldError(MplcError, ValueError):
    """A field (or overlap) has zero power where a nonzero one is required."""


class TruncationError(MplcError, ValueError):
    """A generated mode does not fit inside the computational grid."""


class PreconditionError(MplcError, ValueError):
    """An input violates an operation's documented precondition."""


class DomainError(MplcError, ValueError):
    """A scalar argument lies outside the function's domain."""


class UnsupportedDimensionError(MplcError, ValueError):
    """The requested qudit dimension has no supported MUB construction."""


class FileFormatError(MplcError, ValueError):
    """A data file does not follow the expected layout."""
