"""Exception hierarchy. Each class maps to one CLI exit code."""


class ScitechError(Exception):
    exit_code = 1


class DomainError(ScitechError, ValueError):
    """Input outside the domain of an operation (bad shape, sign, label...)."""

    exit_code = 2


class DimensionError(DomainError):
    pass


class SchemaError(DomainError):
    pass


class PreconditionError(ScitechError):
    """A mathematical precondition (e.g. equilibrium stability) does not hold."""

    exit_code = 3

    def __init__(self, msg, margin=None):
        super().__init__(msg)
        self.margin = margin


class NumericError(ScitechError, ArithmeticError):
    exit_code = 4


class SingularityError(NumericError):
    pass


class SeparationError(NumericError):
    pass


class StateError(NumericError):
    """An object is not in a usable state (e.g. an unconverged logit fit)."""


class AggregationError(ScitechError):
    exit_code = 4


class DesignError(NumericError):
    """Rank-deficient design or instrument matrix."""
