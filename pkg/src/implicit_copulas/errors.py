"""Exception hierarchy shared by every module.

The CLI maps these onto exit codes, so each class names a failure category
rather than a call site.
"""


class CopulaError(Exception):
    """Base class for all package errors."""


class DomainError(CopulaError, ValueError):
    """An argument lies outside the domain of the operation."""


class ContractError(DomainError):
    """A documented precondition on the input state does not hold."""


class CapacityError(CopulaError):
    """The request exceeds a deliberate size guard."""


class MatrixError(CopulaError):
    """A matrix factorization failed (not positive definite, singular, ...)."""


class NumericError(CopulaError):
    """An iterative numerical routine failed to converge."""

    def __init__(self, message, **diagnostics):
        if diagnostics:
            detail = ", ".join(f"{k}={v!r}" for k, v in diagnostics.items())
            message = f"{message} ({detail})"
        super().__init__(message)
        self.diagnostics = diagnostics


class FitError(CopulaError):
    """Estimation could not produce a valid fit from the data."""


class RunError(CopulaError):
    """An MCMC run diverged."""

    def __init__(self, message, iteration=None, state=None):
        if iteration is not None:
            message = f"{message} at iteration {iteration}"
        super().__init__(message)
        self.iteration = iteration
        self.state = state
