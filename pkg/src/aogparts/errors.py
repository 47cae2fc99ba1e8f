"""Exception types shared across the package."""


class FormatError(ValueError):
    """Raised when a serialized volume or graph document is malformed."""


class GenerationError(RuntimeError):
    """Raised when a synthetic dataset cannot be realized."""


class ParseError(RuntimeError):
    """Raised when an image cannot be parsed against a graph."""


class FitError(RuntimeError):
    """Raised when the rank-curve fit has too little data."""


class InstanceTooLarge(RuntimeError):
    """Raised when a problem exceeds the exhaustive-search budget."""


class NotFittedError(RuntimeError):
    """Raised when an estimator is used before ``fit``."""
