"""Exception hierarchy shared by the solver, simulator and CLI."""


class NLSBlowupError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class InvalidArgument(NLSBlowupError, ValueError):
    exit_code = 2


class NoConvergence(NLSBlowupError):
    """Newton (or a continuation built on it) failed to reach tolerance."""

    exit_code = 3

    def __init__(self, message, x=None, residual=None, iterations=None):
        super().__init__(message)
        self.x = x
        self.residual = residual
        self.iterations = iterations


class SingularJacobian(NoConvergence):
    pass


class ContinuationStalled(NoConvergence):
    def __init__(self, message, record=None):
        super().__init__(message)
        self.record = record


class ConvergedToTrivial(NLSBlowupError):
    """Newton converged, but to the zero solution."""

    exit_code = 4

    def __init__(self, message, solution=None):
        super().__init__(message)
        self.solution = solution


class StepUnderflow(NLSBlowupError):
    """Adaptive IVP integration could not continue."""

    exit_code = 3


class IVPDiverged(StepUnderflow):
    pass


class SingularPivot(NLSBlowupError, ArithmeticError):
    exit_code = 5

    def __init__(self, message, row=None):
        super().__init__(message)
        self.row = row


class Instability(NLSBlowupError):
    """The time stepper produced non-finite values or lost amplitude pinning."""

    exit_code = 5

    def __init__(self, message, step_index=None, trace=None):
        super().__init__(message)
        self.step_index = step_index
        self.trace = trace


class ZetaOutOfRange(NLSBlowupError):
    exit_code = 6


class NotBlowingUp(NLSBlowupError):
    exit_code = 6

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class FormatError(NLSBlowupError):
    exit_code = 7


class ParameterMismatch(NLSBlowupError):
    exit_code = 2


class NotEnergyCritical(NLSBlowupError, ValueError):
    exit_code = 2


class InsufficientRecords(NLSBlowupError):
    exit_code = 7
