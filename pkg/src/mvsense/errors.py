"""Shared exception types."""


class NumericFailure(RuntimeError):
    """A linear solve or iterative solver failed numerically.

    ``condition`` carries a condition-number estimate when one is available.
    """

    def __init__(self, message: str, condition: float | None = None):
        super().__init__(message)
        self.condition = condition


class DegenerateSceneError(ValueError):
    """A generated or requested scene has no usable target foreground."""
