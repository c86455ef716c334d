"""Exception hierarchy shared by every sonoscope module."""


class SonoscopeError(Exception):
    """Base class for all library errors."""


class FormatError(SonoscopeError, ValueError):
    """Malformed file header or payload."""


class UnsupportedError(SonoscopeError, ValueError):
    """Well-formed input using an encoding we do not handle."""


class EmptyInputError(SonoscopeError, ValueError):
    pass


class InsufficientDataError(SonoscopeError, ValueError):
    pass


class TooShortError(SonoscopeError, ValueError):
    pass


class RangeError(SonoscopeError, ValueError):
    pass


class SizeError(SonoscopeError, ValueError):
    pass


class SelectionError(SonoscopeError, ValueError):
    pass


class ShapeError(SonoscopeError, ValueError):
    pass


class ConfigError(SonoscopeError, ValueError):
    pass


class LabelError(SonoscopeError, ValueError):
    pass


class EmptyError(SonoscopeError, ValueError):
    pass


class DegenerateError(SonoscopeError, ValueError):
    pass


class DivergenceError(SonoscopeError, FloatingPointError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch, message=None):
        self.epoch = epoch
        super().__init__(message or f"non-finite loss at epoch {epoch}")
