"""Exception hierarchy shared across the package."""


class SecondOrderRiskError(Exception):
    """Base class for all package errors."""


class InsufficientDataError(SecondOrderRiskError, ValueError):
    """Too few observations for the requested estimate."""


class ParameterError(SecondOrderRiskError, ValueError):
    """An argument lies outside its valid domain."""


class DimensionError(SecondOrderRiskError, ValueError):
    """Array shapes do not agree."""


class ConditioningError(SecondOrderRiskError, ArithmeticError):
    """A matrix is singular or too badly conditioned to invert."""

    def __init__(self, message, condition_number=None):
        super().__init__(message)
        self.condition_number = condition_number


class DivergenceError(SecondOrderRiskError, ValueError):
    """A correction factor or moment diverges for the given dimensions."""


class InfeasibleConstraintsError(SecondOrderRiskError, ValueError):
    """Linear constraints are degenerate or cannot be satisfied."""


class StrategyError(SecondOrderRiskError, ValueError):
    """The portfolio strategy does not admit the requested operation."""


class ConfigError(SecondOrderRiskError, ValueError):
    """Invalid experiment configuration."""


class DataFormatError(SecondOrderRiskError, ValueError):
    """Malformed input file."""
