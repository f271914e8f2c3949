"""Exception hierarchy shared by all modules."""


class ThresholdLabError(Exception):
    """Base class for every error raised by this package."""


class InvalidInputError(ThresholdLabError, ValueError):
    pass


class InvalidStateError(ThresholdLabError):
    pass


class SingularityError(ThresholdLabError, ArithmeticError):
    pass


class ConditionNotApplicableError(ThresholdLabError):
    pass


class NumericalError(ThresholdLabError, ArithmeticError):
    """A numerical procedure failed (non-convergence, conditioning, ...)."""


class ConditioningError(NumericalError):
    pass


class DegenerateBasisError(NumericalError):
    pass


class ProximityError(InvalidInputError):
    """Points too close for a convergent partial-wave sum."""


class BracketError(ThresholdLabError, ValueError):
    pass


class ResolventSetError(ThresholdLabError, ValueError):
    """Spectral parameter lies inside (or above the bottom of) the spectrum."""


class ValidationError(ThresholdLabError, ValueError):
    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field
