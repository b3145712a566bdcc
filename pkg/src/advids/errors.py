"""Exception hierarchy shared by every module."""


class AdvidsError(Exception):
    """Base class for all package errors."""


class ConfigError(AdvidsError, ValueError):
    """Invalid user-supplied configuration or parameter."""


class SchemaError(AdvidsError, ValueError):
    """CSV header does not match the expected column schema."""


class ParseError(AdvidsError, ValueError):
    def __init__(self, message: str, row: int | None = None, column: str | None = None):
        super().__init__(message)
        self.row = row
        self.column = column


class ShapeError(AdvidsError, ValueError):
    """Array dimensions disagree."""


class EmptyInputError(AdvidsError, ValueError):
    pass


class DegenerateTrainingError(AdvidsError):
    """Training data cannot define a classifier (e.g. one class only)."""


class DegenerateModelError(AdvidsError):
    """Model has no usable hyperplane (zero weight vector)."""


class FoldingError(AdvidsError):
    pass


class UndefinedCurveError(AdvidsError, ValueError):
    pass


class TrainingDivergedError(AdvidsError):
    def __init__(self, epoch: int):
        super().__init__(f"training diverged (non-finite loss) at epoch {epoch}")
        self.epoch = epoch


class LineageError(AdvidsError):
    """A flip record does not belong to the dataset it is applied to."""


class UnknownCategoryError(AdvidsError, ValueError):
    pass
