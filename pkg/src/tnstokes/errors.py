"""Exception hierarchy shared by the package."""


class TNStokesError(Exception):
    """Base class for all package errors."""


class ConfigurationError(TNStokesError, ValueError):
    pass


class DomainError(TNStokesError, ValueError):
    pass


class DataError(TNStokesError):
    """A field expression could not be evaluated at quadrature points."""


class SingularityError(TNStokesError, ArithmeticError):
    """Stress evaluated at A = 0 with p < 2 and kappa = 0."""


class SolverError(TNStokesError):
    def __init__(self, message, **diagnostics):
        super().__init__(message)
        self.diagnostics = diagnostics


class NonConvergenceError(SolverError):
    def __init__(self, message, residual_norm=float("nan"), iterations=0, **diagnostics):
        super().__init__(message, residual_norm=residual_norm,
                         iterations=iterations, **diagnostics)
        self.residual_norm = residual_norm
        self.iterations = iterations


class StepError(TNStokesError):
    """A time step failed; carries the step index and the last good state."""

    def __init__(self, message, step_index, state=None):
        super().__init__(message)
        self.step_index = step_index
        self.state = state


class RangeError(TNStokesError, ValueError):
    pass
