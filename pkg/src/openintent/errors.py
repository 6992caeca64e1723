"""Exception hierarchy shared across the package."""


class OpenIntentError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(OpenIntentError, ValueError):
    pass


class NumericError(OpenIntentError, ArithmeticError):
    pass


class DivergenceError(NumericError):
    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch


class ConfigError(OpenIntentError, ValueError):
    pass


class PrefixError(OpenIntentError, ValueError):
    pass


class PlanError(OpenIntentError, ValueError):
    pass


class VocabError(OpenIntentError, IndexError):
    pass


class LengthError(OpenIntentError, ValueError):
    pass


class PoolingError(OpenIntentError, ValueError):
    pass


class LabelError(OpenIntentError, ValueError):
    pass


class DataError(OpenIntentError, ValueError):
    pass


class ParseError(DataError):
    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class FreezeViolation(OpenIntentError, AssertionError):
    """A parameter outside the tuning plan changed during an optimizer step."""


class ExperimentError(OpenIntentError, RuntimeError):
    pass
