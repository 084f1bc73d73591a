"""Exception types shared across the package."""


class HSSTError(Exception):
    """Base class for all errors raised by hsstlab."""


class ConfigError(HSSTError, ValueError):
    """A configuration value is missing, unknown or inconsistent."""


class InputError(HSSTError, ValueError):
    """An argument has the wrong shape, size or content."""


class DegenerateInputError(InputError):
    """Input is well formed but mathematically degenerate (e.g. a zero vector)."""


class ValidationError(HSSTError, ValueError):
    """A data asset violates one of its declared invariants."""


class NumericError(HSSTError, ArithmeticError):
    """A computation produced a non-finite value.

    ``details`` carries whatever context the raiser had (pair index,
    offending logits, ...) so callers can log it.
    """

    def __init__(self, message, details=None):
        super().__init__(message)
        self.details = dict(details or {})


class FormatError(HSSTError, ValueError):
    """A binary container (checkpoint, UVA file) could not be parsed."""
