"""Exception hierarchy. The CLI maps these onto exit codes."""


class MotorTempError(Exception):
    pass


class DataError(MotorTempError, ValueError):
    """Malformed input data, bad split request, schema mismatch."""


class ConfigError(MotorTempError, ValueError):
    """Invalid configuration values."""


class NumericError(MotorTempError, ArithmeticError):
    """Divergence, singular systems, unstable integration."""


class DivergenceError(NumericError):
    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = history
