"""Exception types raised across the package."""


class InvalidArgumentError(ValueError):
    pass


class ShapeError(ValueError):
    pass


class SchemaError(ValueError):
    pass


class CsvParseError(ValueError):
    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column


class TrainingDivergedError(RuntimeError):
    def __init__(self, epoch, message=None):
        super().__init__(message or f"training diverged (non-finite loss) in epoch {epoch}")
        self.epoch = epoch


class UnsupportedConfigurationError(ValueError):
    pass


class DegenerateLabelsError(ValueError):
    pass


class DegenerateFitError(ValueError):
    pass


class NumericError(ArithmeticError):
    pass


class ConfigError(ValueError):
    """Config validation failure; ``path`` is the dotted field path."""

    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = path
