"""Exception types raised across the package."""

import numpy as np


class MetaSAugError(Exception):
    """Base class for package errors."""


class DimensionError(MetaSAugError, ValueError):
    pass


class DecompositionError(MetaSAugError, np.linalg.LinAlgError):
    pass


class InsufficientDataError(MetaSAugError, ValueError):
    pass


class ParseError(MetaSAugError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ParameterError(MetaSAugError, ValueError):
    pass


class ConfigError(MetaSAugError, ValueError):
    """Raised with every violated key listed in ``problems``."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.problems))


class ModeError(MetaSAugError, RuntimeError):
    pass


class ValidityError(MetaSAugError, ValueError):
    pass


class UnsupportedConfigurationError(MetaSAugError, ValueError):
    pass
