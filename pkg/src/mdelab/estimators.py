"""scikit-learn style facades over the solvers.

``fit`` stores the deterministic data (the expectation matrix ``A`` and, for
the matrix solver, a variance profile); ``predict`` maps spectral parameters
to solutions.  No randomness is involved, so there is no ``random_state``.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_hermitian
from .exceptions import DimensionMismatchError, ValidationError
from .mde import GENERAL, WIGNER, MdeOptions, VarianceProfile, solve_mde
from .measures import AtomicMeasure, spectral_measure_of
from .scalar import SCALAR_TOL, density, solve_scalar_many, stability_margin


def _as_measure(A) -> AtomicMeasure:
    if isinstance(A, AtomicMeasure):
        return A
    X = np.asarray(A)
    if X.ndim == 1:
        return AtomicMeasure(X.astype(float))
    if X.ndim == 2 and X.shape[0] == X.shape[1]:
        return spectral_measure_of(X)
    raise ValidationError(f"expected a square matrix, a 1-d spectrum or an AtomicMeasure, got shape {X.shape}")


def _as_z(z) -> np.ndarray:
    zz = np.atleast_1d(np.asarray(z, dtype=complex)).ravel()
    if zz.size == 0:
        raise ValidationError("no spectral parameters given")
    if np.any(zz.imag <= 0):
        raise ValidationError("spectral parameters must satisfy Im z > 0")
    return zz


class DeformedSemicircle(BaseEstimator):
    """Stieltjes transform ``m`` of the semicircle law freely convolved with ``nu``.

    Parameters
    ----------
    tol : float
        Residual tolerance of the scalar solver.
    eta_eval : float
        Imaginary part used by :meth:`density`.

    Attributes
    ----------
    nu_ : AtomicMeasure
        Spectral measure of the fitted ``A``.
    stability_margin_ : float
        Computed lazily by :meth:`stability`.

    Examples
    --------
    >>> est = DeformedSemicircle().fit(np.zeros((3, 3)))
    >>> round(est.predict(1j)[0].imag, 5)
    0.61803
    """

    def __init__(self, tol: float = SCALAR_TOL, eta_eval: float = 1e-5):
        self.tol = tol
        self.eta_eval = eta_eval

    def fit(self, A, y=None):
        """``A`` is a Hermitian matrix, a 1-d array of eigenvalues or an :class:`AtomicMeasure`."""
        if not self.tol > 0 or not self.eta_eval > 0:
            raise ValidationError("tol and eta_eval must be positive")
        nu = _as_measure(A)
        if not nu.is_probability:
            raise ValidationError(f"nu must be a probability measure (mass {nu.mass})")
        self.nu_ = nu
        self.n_atoms_ = len(nu)
        return self

    def predict(self, z) -> np.ndarray:
        """``m(z)`` for every entry of ``z``."""
        check_is_fitted(self, "nu_")
        m, _ = solve_scalar_many(self.nu_, _as_z(z), self.tol)
        return m

    def density(self, E) -> np.ndarray:
        check_is_fitted(self, "nu_")
        return density(self.nu_, E, self.eta_eval)

    def stability(self) -> float:
        check_is_fitted(self, "nu_")
        if not hasattr(self, "stability_margin_"):
            self.stability_margin_ = stability_margin(self.nu_)
        return self.stability_margin_


class MatrixDysonSolver(BaseEstimator):
    """Solution ``M(z)`` of the matrix Dyson equation for a fixed ``A``.

    Parameters
    ----------
    profile : "wigner", VarianceProfile or (N, N) array
        ``"wigner"`` uses ``S(M) = (tr M / N) I``; an array is taken as ``s``
        with ``t = s``.
    res_tol : float
    method : {"damped", "anderson"}
    """

    def __init__(self, profile="wigner", res_tol: float = 1e-10, method: str = "damped"):
        self.profile = profile
        self.res_tol = res_tol
        self.method = method

    def _profile(self, N):
        p = self.profile
        if isinstance(p, VarianceProfile):
            return p
        if isinstance(p, str):
            if p == WIGNER:
                return VarianceProfile.wigner(N)
            if p == GENERAL:
                return VarianceProfile.constant(N)
            raise ValidationError(f"unknown profile {p!r}")
        return VarianceProfile(np.asarray(p, dtype=float))

    def fit(self, A, y=None):
        A = check_hermitian(A, "A")
        profile = self._profile(A.shape[0])
        if profile.N != A.shape[0]:
            raise DimensionMismatchError(f"profile has size {profile.N}, A has size {A.shape[0]}")
        self.options_ = MdeOptions(res_tol=self.res_tol, method=self.method)
        self.A_ = A
        self.profile_ = profile
        self.n_features_in_ = A.shape[0]
        return self

    def solve(self, z):
        """List of :class:`MdeSolution` objects, one per spectral parameter."""
        check_is_fitted(self, "A_")
        return [solve_mde(self.A_, self.profile_, zk, self.options_) for zk in _as_z(z)]

    def predict(self, z) -> np.ndarray:
        """Stacked ``M(z)`` with shape ``(len(z), N, N)``."""
        return np.stack([s.M for s in self.solve(z)])
