"""Exception hierarchy shared by all mdelab modules."""


class MdelabError(Exception):
    """Base class for all errors raised by mdelab."""


class ValidationError(MdelabError, ValueError):
    """Invalid input: wrong shape, non-Hermitian matrix, negative variance, ..."""


class DimensionMismatchError(ValidationError):
    pass


class EigensolverError(MdelabError):
    """LAPACK eigensolver failed to converge."""


class ConvergenceError(MdelabError):
    """A fixed-point solver did not reach its residual tolerance.

    Attributes
    ----------
    residual : float
        Last residual seen before giving up.
    iterations : int
        Number of iterations performed.
    """

    def __init__(self, message, residual=float("nan"), iterations=0, rung=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations
        self.rung = rung


class PositivityError(MdelabError):
    """Solution left the upper half-plane / the cone of matrices with Im M >= 0."""

    def __init__(self, message, min_imag_eig=float("nan")):
        super().__init__(message)
        self.min_imag_eig = min_imag_eig


class BranchError(PositivityError):
    """Scalar iterate has Im <= 0 after the damping floor was reached."""


class PoleError(MdelabError, ZeroDivisionError):
    """Evaluation point hits a pole of a rational function."""


class DivergenceError(MdelabError):
    """Deterministic error-budget iteration is outside its regime."""


class InsufficientGridError(ValidationError):
    """Not enough N-levels or trials for a finite-N domination test."""
