"""Exception types shared across the package."""


class ConfigError(ValueError):
    """A study configuration is invalid (CLI exit code 2)."""


class ModelEvaluationError(RuntimeError):
    """A model evaluation failed or returned a non-finite value (CLI exit code 3)."""

    def __init__(self, message, row=None, coords=None):
        super().__init__(message)
        self.row = row
        self.coords = coords


class ZeroVarianceError(RuntimeError):
    """The output variance estimate is non-positive (CLI exit code 4)."""
