"""Exception types raised across the package."""


class ShufDPError(Exception):
    """Base class for all package errors."""


class InvalidDimensionError(ShufDPError, ValueError):
    pass


class ShapeMismatchError(ShufDPError, ValueError):
    pass


class LayoutMismatchError(ShufDPError, ValueError):
    pass


class NonFiniteError(ShufDPError, ValueError):
    pass


class OutOfRangeError(ShufDPError, ValueError):
    pass


class DomainError(ShufDPError, ValueError):
    """A privacy bound was requested outside the region where it holds."""


class AccountantError(ShufDPError, ValueError):
    pass


class StoppedError(ShufDPError, RuntimeError):
    """The accountant has halted training; no further rounds may run."""


class DataError(ShufDPError, ValueError):
    pass


class ParseError(DataError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class WireFormatError(ShufDPError, ValueError):
    pass


class ConfigError(ShufDPError, ValueError):
    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field
