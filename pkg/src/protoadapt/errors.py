"""Exception hierarchy for the adaptation engine."""


class AdapterError(Exception):
    """Base class for every error raised by this package."""


class ZeroNorm(AdapterError, ValueError):
    pass


class InvalidTemperature(AdapterError, ValueError):
    pass


class DegenerateClassCount(AdapterError, ValueError):
    pass


class NotNormalized(AdapterError, ValueError):
    pass


class IsolatedNode(AdapterError, ValueError):
    pass


class InvalidRHS(AdapterError, ValueError):
    pass


class SingularMatrix(AdapterError, ArithmeticError):
    pass


class DimMismatch(AdapterError, ValueError):
    pass


class EmptyClassCache(AdapterError, LookupError):
    pass


class EmptyCache(AdapterError, LookupError):
    pass


class InvalidLabels(AdapterError, ValueError):
    pass


class InvalidConfig(AdapterError, ValueError):
    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class CannotSeparate(AdapterError, RuntimeError):
    pass


class FormatError(AdapterError, ValueError):
    pass


class TruncatedFile(FormatError):
    pass


class SampleError(AdapterError):
    """A numeric failure while processing one stream sample."""

    def __init__(self, index: int, cause: Exception):
        self.index = index
        self.cause = cause
        super().__init__(f"sample {index}: {cause}")
