"""Exception hierarchy shared across the package."""


class CodecError(Exception):
    """Base class for every error raised by colorlic."""


class UsageError(CodecError, ValueError):
    """Invalid arguments or violated preconditions."""


class DimensionError(CodecError, ValueError):
    """Tensor or image shapes do not agree."""


class NumericError(CodecError, ArithmeticError):
    """A computation produced NaN/Inf or an invalid intermediate."""


class FormatError(CodecError, ValueError):
    """A bitstream or checkpoint could not be parsed."""
