"""
Error types for the contrastive-variational SSL toolkit.

Every error raised on invalid input is a ToolkitError, which is itself a
ValueError so callers that only know about ValueError keep working.
"""

from typing import Any, Optional


class ToolkitError(ValueError):
    """Base class for all toolkit errors"""


# Numeric core
class ShapeMismatch(ToolkitError):
    """Operand shapes are incompatible"""


class NonFiniteValue(ToolkitError):
    """A tensor would hold NaN or Inf"""


class DomainError(ToolkitError):
    """An input lies outside the domain of an operation"""


class DivisionByZero(ToolkitError):
    """A divisor holds a zero element"""


class InvalidAxis(ToolkitError):
    """A reduction axis is out of range"""


class NotScalar(ToolkitError):
    """Backward was called on a non-scalar tensor"""


class DetachedLoss(ToolkitError):
    """The loss was not produced on the given tape"""


# Models and losses
class InvalidDims(ToolkitError):
    """Model dimensions are not all positive"""


class BatchTooSmall(ToolkitError):
    """A contrastive batch needs at least two samples"""


class InvalidTemperature(ToolkitError):
    """The temperature must be strictly positive"""


class InvalidLossWeights(ToolkitError):
    """Loss weights are negative or both zero"""


class NonFiniteLoss(ToolkitError):
    """The training objective became non-finite"""

    def __init__(self, message: str, step: Optional[int] = None):
        """
        Initialize a NonFiniteLoss

        Args:
            message (str): Error message
            step (int, optional): Training step at which the loss diverged
        """
        super().__init__(message)
        self.step = step


# Optimizers
class MissingGradient(ToolkitError):
    """A parameter handed to the optimizer has no gradient"""


class NonFiniteGradient(ToolkitError):
    """A gradient holds NaN or Inf"""


class UnknownOptimizer(ToolkitError):
    """The optimizer kind is not supported"""


class InvalidLearningRate(ToolkitError):
    """The learning rate lies outside (0, 1)"""


# Data pipeline
class TableFileNotFound(ToolkitError, FileNotFoundError):
    """The CSV or schema file does not exist"""


class RaggedRows(ToolkitError):
    """CSV rows do not all have the header's width"""


class EmptyTable(ToolkitError):
    """A table has no rows or no columns"""


class MissingLabel(ToolkitError):
    """The label column holds a missing entry"""


class SchemaMismatch(ToolkitError):
    """A table does not match the preprocessing plan or schema"""


class TooFewRows(ToolkitError):
    """A split would leave one side empty"""


class InvalidK(ToolkitError):
    """The fold count is outside [2, n_rows]"""


class ClassTooSmall(ToolkitError):
    """A minority class has a single sample and cannot be interpolated"""


class NoLabels(ToolkitError):
    """Labels are required but none were given"""


# Evaluation
class SingleClass(ToolkitError):
    """A classifier needs at least two classes"""


class LengthMismatch(ToolkitError):
    """Predictions and labels differ in length or are empty"""


# Configuration and harness
class ParseError(ToolkitError):
    """A config line is malformed"""

    def __init__(self, message: str, line_number: Optional[int] = None):
        """
        Initialize a ParseError

        Args:
            message (str): Error message
            line_number (int, optional): 1-based line number of the offending line
        """
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


class UnknownKey(ToolkitError):
    """A config key does not exist"""


class InvalidValue(ToolkitError):
    """A config value cannot be converted or violates its range"""


class CheckpointError(ToolkitError):
    """A checkpoint archive is unreadable or inconsistent"""


class CellError(ToolkitError):
    """A sweep or ablation cell failed"""

    def __init__(self, setting: str, seed: Any, cause: Exception):
        """
        Initialize a CellError

        Args:
            setting (str): Label of the failing grid cell
            seed (Any): Seed of the failing run
            cause (Exception): Underlying error
        """
        super().__init__(f"cell '{setting}' seed {seed} failed: {cause}")
        self.setting = setting
        self.seed = seed
        self.cause = cause
