"""Exception and warning classes.

Every error carries the CLI exit code it maps to: 2 for validation
problems, 3 for numerical failures, 4 for capacity limits.
"""


class AgpSchedError(Exception):
    exit_code = 1


class ValidationError(AgpSchedError, ValueError):
    exit_code = 2


class DimensionError(ValidationError):
    """Operands act on different numbers of sites."""


class ModelParseError(ValidationError):
    pass


class DuplicateCouplingError(ModelParseError):
    pass


class NumericalError(AgpSchedError, ArithmeticError):
    exit_code = 3


class DegenerateInputError(NumericalError):
    """The parameter derivative of the Hamiltonian vanishes."""


class StepSizeError(NumericalError):
    """Norm drift of the integrator exceeded tolerance; use a smaller dt."""


class UndefinedMeasureError(NumericalError):
    pass


class CapacityError(AgpSchedError, MemoryError):
    exit_code = 4


class IllConditionedAGPWarning(RuntimeWarning):
    """A (near-)degenerate pair with nonzero drive was dropped from the AGP."""

    def __init__(self, message, pair=None):
        super().__init__(message)
        self.pair = pair


class DegenerateMetricWarning(RuntimeWarning):
    pass
