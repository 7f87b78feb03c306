"""Exception types shared across the package."""


class DctseError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(DctseError, ValueError):
    pass


class InvalidStateError(DctseError, RuntimeError):
    pass


class AbortStepError(DctseError, ArithmeticError):
    """An optimizer step was refused because the gradients were not finite."""


class WavError(DctseError):
    """Base for WAV ingestion failures."""


class MalformedHeaderError(WavError):
    pass


class UnsupportedCodecError(WavError):
    pass


class EmptyDataError(WavError):
    pass
