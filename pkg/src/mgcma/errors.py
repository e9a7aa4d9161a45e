"""Exception types shared across the package."""


class MgcmaError(Exception):
    """Base class for all package-specific errors."""


class ShapeError(MgcmaError, ValueError):
    """Operand extents do not agree."""


class EmptySequenceError(MgcmaError, ValueError):
    """A sequence operation received zero tokens."""


class DegenerateInputError(MgcmaError, ValueError):
    """Input is outside the operation's domain (e.g. zero-norm vector)."""


class NonFiniteError(MgcmaError, ArithmeticError):
    """A NaN or Inf appeared where only finite values are allowed."""


class ContractError(MgcmaError, ValueError):
    """A documented precondition was violated by the caller."""


class FormatError(MgcmaError, ValueError):
    """A file has the wrong magic, version, or declared layout."""


class CorruptionError(MgcmaError, IOError):
    """A file is truncated or otherwise inconsistent with its header."""
