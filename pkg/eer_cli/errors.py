"""Exceptions shared across the EER toolkit."""

from typing import Optional, Tuple


class EERError(Exception):
    """Base exception for EER errors."""

    pass


class ShapeError(EERError, ValueError):
    """Raised when operand shapes do not conform."""

    def __init__(self, op: str, *shapes: Tuple[int, ...]):
        self.op = op
        self.shapes = shapes
        listed = " vs ".join("x".join(str(n) for n in shape) for shape in shapes)
        super().__init__(f"{op}: incompatible shapes {listed}")


class DomainError(EERError, ValueError):
    """Raised when an argument lies outside an operation's precondition."""

    pass


class NonFiniteError(EERError):
    """Raised when an operation produces NaN or Inf entries."""

    pass


class NumericalAbort(EERError):
    """Raised when training stops on a non-finite loss."""

    def __init__(self, message: str, epoch: int):
        self.epoch = epoch
        super().__init__(message)


class ConfigError(EERError):
    """Raised for malformed or invalid run configuration."""

    def __init__(self, message: str, line: Optional[int] = None, key: Optional[str] = None):
        self.line = line
        self.key = key
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class CheckpointError(EERError):
    """Raised when a checkpoint cannot be read or does not match its header."""

    pass


class CSVFormatError(EERError, ValueError):
    """Raised when a CSV input is malformed."""

    pass
