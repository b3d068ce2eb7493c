"""Exception hierarchy.

Two branches matter for the CLI: ValidationError maps to exit code 2,
DataError to exit code 3. Everything else is a bug.
"""


class GraspCountError(Exception):
    """Base class for all package errors."""


class ValidationError(GraspCountError):
    """Caller supplied an argument that violates a documented precondition."""


class DataError(GraspCountError):
    """Input data is missing, empty, malformed, or numerically degenerate."""


class JointLimitViolation(ValidationError):
    """A joint angle is outside the configured limits."""


class ShapeMismatch(ValidationError):
    """Tensor shape does not match the layer or model contract."""


class InvalidDim(ValidationError):
    """Classifier input dimension is not one of the supported sizes."""


class NonFiniteValue(ValidationError):
    """A scalar that must be finite is NaN or infinite."""


class InvalidMapping(ValidationError):
    """A tactile downsampling map does not cover every target cell."""


class LengthMismatch(ValidationError):
    """Paired sequences (predictions/truths) differ in length."""


class DegenerateInput(DataError):
    """Point set is too small or flat to form a 3D convex hull."""


class DegenerateData(DataError):
    """Regression inputs carry no variance; no line can be fit."""


class EmptyDataset(DataError):
    """An operation that needs samples received none."""


class NonFiniteGradient(DataError):
    """A gradient tensor contains NaN or infinite entries."""


class UntrainedModel(DataError):
    """Evaluation or prediction requested on a model that was never fit."""
