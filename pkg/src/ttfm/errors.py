class TTFMError(Exception):
    exit_code = 1


class ConfigError(TTFMError, ValueError):
    exit_code = 2


class DataError(TTFMError, ValueError):
    exit_code = 3


class NumericalError(TTFMError, FloatingPointError):
    """Non-finite values during optimisation; ``family`` names the culprit."""

    exit_code = 4

    def __init__(self, message, family=None):
        super().__init__(message)
        self.family = family
