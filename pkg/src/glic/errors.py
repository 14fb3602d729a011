"""Exception hierarchy shared by the solver, coupling engine and harness."""


class GlicError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInputError(GlicError, ValueError):
    """Malformed data: non-finite vectors, unknown DOFs, mismatched layouts."""


class SingularSystemError(GlicError):
    """The reduced stiffness matrix cannot be factorized."""


class NonConvergenceError(GlicError):
    """A Newton solve ran out of iterations."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class StateError(GlicError):
    """Operation called in the wrong solver state (e.g. commit without trial)."""


class DegenerateHistoryError(GlicError):
    """Accelerator history cannot produce an update (zero residual change)."""


class CaseValidationError(GlicError, ValueError):
    """Case file or generated geometry violates a structural rule."""


class CouplingAbortedError(GlicError):
    """Global-local iterations failed beyond the allowed number of cutbacks."""

    def __init__(self, message, record=None):
        super().__init__(message)
        self.record = record
