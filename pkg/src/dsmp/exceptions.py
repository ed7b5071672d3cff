"""Exception types raised across the package."""


class DSMPError(Exception):
    """Base class for all package errors."""


class ValidationError(DSMPError, ValueError):
    """Input or configuration violates a documented precondition."""


class ShapeMismatch(ValidationError):
    pass


class ConfigInvalid(ValidationError):
    pass


class SizeInvalid(ValidationError):
    pass


class SizeLimit(ValidationError):
    """Matrix too large for the dense eigensolver."""


class NonSymmetric(ValidationError):
    pass


class TooLarge(ValidationError):
    """Brute-force enumeration requested on a graph that is too big."""


class Disconnected(ValidationError):
    pass


class BackingMismatch(ValidationError):
    """Operation needs a different operator backing (exact vs chebyshev)."""


class LabelOutOfRange(ValidationError):
    pass


class FeatureMissing(ValidationError):
    pass


class DegenerateInput(ValidationError):
    pass


class CacheMismatch(DSMPError):
    pass


class EmptySplit(DSMPError):
    pass


class ParseError(DSMPError):
    """Malformed input file. ``where`` names the line or field path."""

    def __init__(self, message, where=None):
        self.where = where
        if where is not None:
            message = f"{where}: {message}"
        super().__init__(message)


class SchemaError(ParseError):
    pass


class VersionMismatch(ParseError):
    pass
