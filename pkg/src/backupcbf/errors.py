"""Exception hierarchy shared across the package."""


class BackupCBFError(Exception):
    """Base class for all package errors."""


class ConfigurationError(BackupCBFError, ValueError):
    """Inconsistent dimensions, missing callables or bad parameters."""


class PreconditionError(BackupCBFError, ValueError):
    """An operation was called outside its domain (e.g. non-Hurwitz A)."""


class NumericalError(BackupCBFError, ArithmeticError):
    """A numerical routine failed (singular system, cycling, non-finite values)."""


class DivergenceError(NumericalError):
    """A rollout produced a non-finite or exploding state."""

    def __init__(self, message, theta=None, state=None):
        super().__init__(message)
        self.theta = theta
        self.state = state


class LinearizationError(NumericalError):
    """Feedback linearization is impossible at a state (singular decoupling matrix)."""


class SynthesisError(BackupCBFError):
    """No valid backup pair could be constructed from the given ingredients."""


class SingularityError(NumericalError):
    """Model evaluated where it is singular (e.g. vehicle at zero speed)."""


class FilterError(BackupCBFError):
    """Safety filter could not produce an input; carries the offending state."""

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state
