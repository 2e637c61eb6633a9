"""Exception hierarchy shared by every subpackage."""


class IRNNError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(IRNNError, ValueError):
    """Operand shapes do not conform."""


class ContractError(IRNNError, ValueError):
    """A precondition on the call itself was violated."""


class NumericError(IRNNError, ArithmeticError):
    """A computation produced or received a non-finite value."""


class DataError(IRNNError, ValueError):
    """Input data is malformed or unusable."""


class ConfigError(IRNNError, ValueError):
    """A configuration value is invalid.

    ``field`` names the offending key so the CLI can report it.
    """

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field


class UndefinedMetricError(IRNNError, ValueError):
    """A metric is undefined for the given labels (e.g. a single class)."""


class UnsupportedModelError(IRNNError, TypeError):
    """The requested operation does not apply to this model kind or config."""
