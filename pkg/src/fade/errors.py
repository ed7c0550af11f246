"""Exception types shared across the package."""


class ConfigError(ValueError):
    """A configuration value violates a precondition."""


class InvalidGraphError(ValueError):
    """A graph is not a valid DAG."""


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class NumericError(ArithmeticError):
    """A computation produced NaN or Inf."""


class FormatError(ValueError):
    """An input file does not match its binary format."""
