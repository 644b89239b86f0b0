"""Exception types.

Each carries a short ``category`` string that the CLI prints as the
machine-readable error kind.
"""


class UQGANError(Exception):
    category = "error"
    exit_code = 1


class InvalidArgumentError(UQGANError, ValueError):
    category = "invalid-argument"
    exit_code = 5


class InvalidInputError(UQGANError, ValueError):
    category = "invalid-input"
    exit_code = 5


class UnsupportedModelError(UQGANError, TypeError):
    category = "unsupported"
    exit_code = 4


class UndefinedMetricError(UQGANError, ValueError):
    category = "undefined-metric"
    exit_code = 5


class TrainingDivergedError(UQGANError, RuntimeError):
    category = "training-diverged"
    exit_code = 3

    def __init__(self, message, iteration=None, seed=None):
        super().__init__(message)
        self.iteration = iteration
        self.seed = seed


class ConfigError(UQGANError, ValueError):
    category = "config-error"
    exit_code = 2

    def __init__(self, message, line=None, field=None):
        loc = []
        if line is not None:
            loc.append(f"line {line}")
        if field is not None:
            loc.append(f"field '{field}'")
        super().__init__(f"{', '.join(loc)}: {message}" if loc else message)
        self.line = line
        self.field = field


class DataMissingError(UQGANError, FileNotFoundError):
    category = "data-missing"
    exit_code = 6
