"""Exception hierarchy shared across the package."""


class JsccError(Exception):
    """Base class for all package errors."""


class ShapeError(JsccError):
    """Operand shapes are incompatible for the requested operation."""


class DefinitenessError(JsccError):
    """A matrix expected to be positive definite failed factorization."""

    def __init__(self, pivot_index, message=None):
        self.pivot_index = pivot_index
        super().__init__(message or f"non-positive pivot at index {pivot_index}")


class ContractError(JsccError):
    """A caller violated a documented precondition."""


class FormatError(JsccError):
    """A byte stream does not match the expected file format."""


class LengthError(JsccError):
    """A payload has the wrong byte count."""

    def __init__(self, expected, actual, message=None):
        self.expected = expected
        self.actual = actual
        super().__init__(message or f"expected {expected} bytes, got {actual}")


class RangeError(JsccError):
    """A value lies outside its permitted range."""


class ConfigurationError(JsccError):
    """A configuration is internally inconsistent or infeasible."""


class LayoutError(JsccError):
    """A vector does not match the required symbol layout."""


class DegenerateInputError(JsccError):
    """An input makes the requested operation undefined (e.g. zero norm)."""


class DeepFadeError(JsccError):
    """Channel gain too close to zero for equalization."""


class NormalizationError(JsccError):
    """Weight-row normalization hit a zero row."""


class FitError(JsccError):
    """Classifier fitting failed (e.g. an empty class)."""


class DependencyError(JsccError):
    """A required trained artifact is missing."""


class BaselineError(JsccError):
    """The separate-coding baseline codec failed."""


class ValidationError(JsccError):
    """A config file failed validation."""

    def __init__(self, problems, message=None):
        self.problems = list(problems)
        super().__init__(message or "invalid config: " + "; ".join(self.problems))
