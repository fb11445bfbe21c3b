"""Exception types.

Every error raised on purpose by melpatch derives from :class:`MelpatchError`.
The ``exit_code`` attribute is what the command line returns for it.
"""


class MelpatchError(Exception):
    exit_code = 3


class ConfigError(MelpatchError, ValueError):
    """Bad configuration or usage."""

    exit_code = 2


class FormatError(MelpatchError, ValueError):
    """Malformed or unsupported file / stream contents."""

    exit_code = 3


class TruncatedStreamError(FormatError):
    pass


class CorruptStreamError(FormatError):
    pass


class CodebookMismatchError(FormatError):
    pass


class ShapeError(MelpatchError, ValueError):
    exit_code = 3


class NumericalError(MelpatchError, ArithmeticError):
    """Non-finite values appeared during training or evaluation."""

    exit_code = 4
