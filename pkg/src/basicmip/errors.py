"""Exception hierarchy shared across the toolkit."""


class BasicMipError(Exception):
    """Base class for all toolkit errors."""


class ConfigurationError(BasicMipError):
    """Bad or inconsistent configuration (unknown format tag, missing split, ...)."""


class FingerprintMismatchError(ConfigurationError):
    """Two artifacts that must share a data fingerprint do not."""


class ValidationError(BasicMipError):
    """Input violates a documented invariant or precondition."""


class TruncationError(ValidationError):
    """A sentence exceeds the encoder's maximum input length.

    Raised instead of silently truncating, so a target word can never be
    cut off without the caller noticing.
    """


class NumericError(BasicMipError):
    """A non-finite value appeared where a finite one is required."""


class DegenerateCaseError(BasicMipError):
    """A statistic is undefined on this input (e.g. zero-variance t-test)."""
