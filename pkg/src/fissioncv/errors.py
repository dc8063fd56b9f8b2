"""Exception hierarchy. CLI exit codes are attached to each class."""


class FissionError(Exception):
    exit_code = 2


class InvalidParameterError(FissionError, ValueError):
    exit_code = 2


class DimensionError(FissionError, ValueError):
    exit_code = 2


class UnsupportedError(FissionError, TypeError):
    exit_code = 2


class CalibrationError(FissionError, ValueError):
    exit_code = 2


class FormatError(FissionError, OSError):
    """Malformed tensor or image file; ``offset`` is the byte position of the fault."""

    exit_code = 1

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class DivergenceError(FissionError, ArithmeticError):
    exit_code = 3


class UnderflowError(FissionError, ArithmeticError):
    exit_code = 3
