"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class DegenerateInputError(ValueError):
    """An input row or vector has (near) zero norm."""


class EvaluationError(ArithmeticError):
    """A function produced a non-finite value."""


class ParameterError(ValueError):
    """A parameter value is outside its valid range."""


class ConfigError(ValueError):
    """A training or run configuration is invalid."""
