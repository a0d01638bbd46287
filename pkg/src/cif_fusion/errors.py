"""Exception and warning types shared across the package."""


class CifFusionError(Exception):
    """Base class for package errors."""


class DataError(CifFusionError):
    """Malformed input data or schema violation (CLI exit code 2)."""


class NumericalError(CifFusionError):
    """Numerical failure during fitting or estimation (CLI exit code 3)."""


class EmptyRiskSetError(NumericalError):
    """No records available to form a risk set."""


class TiedEventTimesError(NumericalError):
    """Cause-1 and cause-2 events share an event time."""


class NoEventsError(NumericalError):
    """A hazard fit was requested for a cause with zero events."""


class DegenerateDesignError(NumericalError):
    """A design column is constant within the fitting subset."""


class DegenerateLabelsError(NumericalError):
    """Binary labels contain a single class where both are required."""


class SeparationError(NumericalError):
    """Logistic coefficients diverged; classes are (quasi-)separated."""


class PositivityError(NumericalError):
    """An inverse-weight denominator hit zero while a record was at risk."""


class ConvergenceWarning(UserWarning):
    """A fit stopped before reaching the score tolerance."""


class DegenerateDesignWarning(UserWarning):
    """Constant design columns were dropped from a fitting stratum."""
