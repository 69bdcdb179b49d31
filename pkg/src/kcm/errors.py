"""Exception hierarchy shared by every kcm module."""


class KCMError(Exception):
    """Base class for all errors raised by kcm."""


class ValidationError(KCMError, ValueError):
    """Invalid model, region, configuration or argument."""


class DimensionError(ValidationError):
    """Two objects live on incompatible state spaces."""


class CapacityError(KCMError):
    """The exact state space exceeds the configured cap."""


class ConvergenceError(KCMError):
    """A numerical routine failed to reach its tolerance."""


class IrreducibilityError(KCMError):
    """The zero eigenvalue of the generator is not simple."""


class StudyFailure(KCMError):
    """A study ran to completion but failed its own pass criterion."""


class RangeError(ValidationError, IndexError):
    """An index, level or time lies outside its admissible range."""
