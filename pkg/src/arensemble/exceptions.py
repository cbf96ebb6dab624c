"""Exception hierarchy shared by every module of the package."""


class EnsembleError(Exception):
    """Base class for all package errors."""


class PanelError(EnsembleError, ValueError):
    """Malformed or inconsistent forecast panel data.

    ``row`` carries the offending (0-based data) row index when known.
    """

    def __init__(self, message, row=None):
        super().__init__(message)
        self.row = row


class MapeGuardError(EnsembleError, ValueError):
    """Raised when MAPE is requested on targets too close to zero."""

    def __init__(self, message, indices):
        super().__init__(message)
        self.indices = list(indices)


class LeakageError(EnsembleError):
    """A target was read before it would be available in real time."""


class NumericalError(EnsembleError, ArithmeticError):
    """Singular systems, non-convergence and similar failures."""


class ConvergenceError(NumericalError):
    """An iterative solver hit its iteration cap.

    The last iterate and diagnostics are attached so callers can decide
    whether it is usable.
    """

    def __init__(self, message, last_iterate=None, diagnostics=None):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.diagnostics = diagnostics or {}


class VerificationError(EnsembleError):
    """A robustness-equivalence check found a violating perturbation."""
