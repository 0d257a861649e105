"""Scalar self-consistent equation ``m = int nu(da) / (a - m - z)`` and friends.

For the Wigner-type self-energy ``S(M) = (tr M / N) I`` the matrix Dyson
equation collapses to this scalar equation plus ``M = (A - z - m)^-1``.  The
solution ``m`` is the Stieltjes transform of the free additive convolution of
the semicircle law with ``nu``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

from ._validation import as_complex_z, check_hermitian, check_upper_half_plane
from .exceptions import BranchError, ConvergenceError, DivergenceError, PoleError, ValidationError
from .measures import AtomicMeasure, SpectralPoint

SCALAR_TOL = 1e-12
#: eta at which the continuation ladder starts
ETA_TOP = 10.0
DEFAULT_DELTA = 0.01  # tau / 10 with tau = 0.1
DEFAULT_STABILITY_C = 10.0


@dataclass(frozen=True)
class ScalarSolution:
    m: complex
    z: SpectralPoint
    residual: float


def msc(z):
    """Semicircle Stieltjes transform: root of ``m^2 + z m + 1 = 0`` with ``Im m > 0``."""
    scalar = np.ndim(z) == 0 and not isinstance(z, np.ndarray)
    zz = np.asarray(as_complex_z(z) if scalar else z, dtype=complex)
    if np.any(zz.imag <= 0):
        raise ValidationError("msc requires Im z > 0")
    root = np.sqrt(zz * zz - 4 + 0j)
    m1 = (-zz + root) / 2
    m2 = (-zz - root) / 2
    m = np.where(m1.imag > 0, m1, m2)
    return complex(m) if scalar else m


def _sums(locs, weights, u, z):
    """Return ``sum w/(a-u-z)`` and ``sum w/(a-u-z)^2`` for arrays ``u, z``."""
    d = locs[None, :] - (u + z)[:, None]
    inv = 1.0 / d
    s1 = inv @ weights
    s2 = (inv * inv) @ weights
    return s1, s2


def _solve_rung(locs, weights, u, z, tol, max_iter=200, min_alpha=1.0 / 64):
    """Safeguarded Newton / damped fixed point at fixed ``z``, vectorised over points."""
    u = u.copy()
    s1, s2 = _sums(locs, weights, u, z)
    r = u - s1
    active = np.abs(r) > tol
    it = 0
    while np.any(active) and it < max_iter:
        it += 1
        idx = np.nonzero(active)[0]
        ua, za, ra = u[idx], z[idx], r[idx]
        # Newton step on pi(u) = u - F(u)
        step = ra / (1.0 - s2[idx])
        cand = ua - step
        c1, c2 = _sums(locs, weights, cand, za)
        cr = cand - c1
        ok = (cand.imag > 0) & (np.abs(cr) < np.abs(ra)) & np.isfinite(cr)
        # fallback: damped fixed-point step u <- u + alpha (F(u) - u), alpha halved on failure
        bad = np.nonzero(~ok)[0]
        if bad.size:
            alpha = np.ones(bad.size)
            ub, zb, rb = ua[bad], za[bad], ra[bad]
            fb = ub - rb  # F(u)
            done = np.zeros(bad.size, dtype=bool)
            best = np.empty(bad.size, dtype=complex)
            best_r = np.empty(bad.size, dtype=complex)
            best_2 = np.empty(bad.size, dtype=complex)
            while True:
                trial = ub + alpha * (fb - ub)
                t1, t2 = _sums(locs, weights, trial, zb)
                tr = trial - t1
                good = ~done & (trial.imag > 0) & (np.abs(tr) < np.abs(rb))
                floor = ~done & (alpha <= min_alpha)
                take = good | floor
                best[take], best_r[take], best_2[take] = trial[take], tr[take], t2[take]
                done |= take
                if done.all():
                    break
                alpha = np.where(done, alpha, alpha / 2)
            if np.any(best.imag <= 0):
                k = bad[np.argmax(best.imag <= 0)]
                raise BranchError(f"iterate left the upper half-plane at z = {za[k]}")
            cand[bad], cr[bad], c2[bad] = best, best_r, best_2
        u[idx], r[idx], s2[idx] = cand, cr, c2
        active = np.abs(r) > tol
    if np.any(active):
        k = int(np.argmax(np.abs(r)))
        raise ConvergenceError(
            f"scalar solver did not converge at z = {z[k]} (residual {abs(r[k]):.3e})", float(abs(r[k])), it
        )
    return u, np.abs(r)


def solve_scalar_many(nu: AtomicMeasure, zs, tol: float = SCALAR_TOL, ratio: float = 0.3):
    """Vectorised :func:`solve_scalar`; returns ``(m, residual)`` arrays."""
    if not nu.is_probability:
        raise ValidationError(f"nu must be a probability measure (mass {nu.mass})")
    zs = np.atleast_1d(np.asarray(zs, dtype=complex))
    if np.any(zs.imag <= 0):
        raise ValidationError("solve_scalar requires Im z > 0")
    locs, weights = nu.locations, nu.weights
    E, eta = zs.real, zs.imag
    top = np.maximum(eta, ETA_TOP)
    z = E + 1j * top
    u = msc(z - np.sum(weights * locs))  # good start at large eta
    rung_tol = max(tol, 1e-9)
    while True:
        last = np.all(z.imag <= eta)
        u, res = _solve_rung(locs, weights, u, z, tol if last else rung_tol)
        if last:
            break
        z = E + 1j * np.maximum(z.imag * ratio, eta)
    res = np.abs(u - _sums(locs, weights, u, zs)[0])
    if np.any(u.imag <= 0):
        raise BranchError("solution with Im m <= 0")
    return u, res


def solve_scalar(nu: AtomicMeasure, z) -> ScalarSolution:
    """Solve ``m = int nu(da)/(a - m - z)`` on the branch ``Im m > 0``.

    Continuation in ``eta`` from ``eta = 10`` down to ``Im z``; on every rung
    Newton steps are taken when they reduce ``|pi(u)|`` and stay in the upper
    half-plane, otherwise a damped fixed-point step ``u <- u + a(F(u) - u)``
    with ``a`` halved down to 1/64.
    """
    zc = check_upper_half_plane(z)
    m, res = solve_scalar_many(nu, [zc])
    return ScalarSolution(m=complex(m[0]), z=SpectralPoint.from_complex(zc), residual=float(res[0]))


def pi_scalar(nu: AtomicMeasure, u, z) -> complex:
    """``pi(u) = u - int nu(da)/(a - u - z)``."""
    u = complex(u)
    z = as_complex_z(z)
    d = nu.locations - u - z
    if np.any(d == 0):
        raise PoleError(f"a - u - z vanishes for an atom at u = {u}, z = {z}")
    return complex(u - np.sum(nu.weights / d))


def m_matrix(A, m, z) -> np.ndarray:
    """``M = (A - z - m)^-1``."""
    A = check_hermitian(A, "A")
    w = as_complex_z(z) + complex(m)
    if w.imag <= 0:
        raise ValidationError(f"shift z + m = {w} must lie in the upper half-plane")
    return np.linalg.inv(A - w * np.eye(A.shape[0]))


def density(nu: AtomicMeasure, E_grid, eta_eval: float = 1e-5) -> np.ndarray:
    """Density of ``mu_sc boxplus nu`` on ``E_grid``: ``Im m(E + i eta_eval) / pi``."""
    E = np.asarray(E_grid, dtype=float).ravel()
    if E.size == 0:
        raise ValidationError("empty energy grid")
    if not eta_eval > 0:
        raise ValidationError(f"eta_eval must be > 0, got {eta_eval}")
    m, _ = solve_scalar_many(nu, E + 1j * eta_eval)
    return m.imag / math.pi


def stability_margin(nu: AtomicMeasure, grid_points: int = 10_000, ball: float = 1e-6) -> float:
    """``inf_{x in I_nu} int nu(da) / (x - a)^2``.

    The integrand is convex between consecutive atoms, so each gap has a
    single minimiser, bracketed on a grid and refined by Brent's method
    (golden section with parabolic steps).
    Returns ``inf`` when the support hull is a single point.
    """
    locs, w = nu.locations, nu.weights
    if len(nu) == 1:
        return math.inf
    lo, hi = nu.support_hull
    width = hi - lo

    def f(x):
        return float(np.sum(w / (x - locs) ** 2))

    best = math.inf
    for a, b in zip(locs[:-1], locs[1:]):
        if b - a <= 2 * ball:
            continue
        n = max(16, int(grid_points * (b - a) / width))
        xs = np.linspace(a + ball, b - ball, n)
        vals = (w[None, :] / (xs[:, None] - locs[None, :]) ** 2).sum(axis=1)
        i = int(np.argmin(vals))
        if 0 < i < n - 1:
            res = minimize_scalar(f, bounds=(xs[i - 1], xs[i + 1]), method="bounded", options={"xatol": 1e-13})
            val = min(float(res.fun), float(vals[i]))
        else:
            val = float(vals[i])
        best = min(best, val)
    return best


def check_stability_bound(g, m, xi: float, C: float = DEFAULT_STABILITY_C) -> bool:
    """``|g - m| <= C xi / (Im m + sqrt(xi))`` (inclusive)."""
    g, m = complex(g), complex(m)
    return abs(g - m) <= C * xi / (m.imag + math.sqrt(xi))


@dataclass(frozen=True)
class ErrorBudget:
    """Deterministic error scales built from ``(phi, Im m, ||Im M||, N, eta)``.

    ``zeta = sqrt((||Im M|| + phi + eta) / (N eta))``,
    ``zeta_tilde = (1 + phi)^3 zeta``, ``h_phi = sqrt((Im m + phi) / (N eta))``
    and ``psi = sqrt(Im m / (N eta)) + 1 / (N eta)``.
    """

    phi: float
    zeta: float
    zeta_tilde: float
    h_phi: float
    psi: float
    N: int
    eta: float
    im_m: float
    im_M_norm: float

    @classmethod
    def compute(cls, phi, im_m, im_M_norm, N, eta) -> "ErrorBudget":
        if min(phi, im_m, im_M_norm) < 0 or eta <= 0 or N < 1:
            raise ValidationError("budget inputs must be nonnegative with eta > 0, N >= 1")
        Neta = N * eta
        zeta = math.sqrt((im_M_norm + phi + eta) / Neta)
        return cls(
            phi=float(phi),
            zeta=zeta,
            zeta_tilde=(1 + phi) ** 3 * zeta,
            h_phi=math.sqrt((im_m + phi) / Neta),
            psi=math.sqrt(im_m / Neta) + 1 / Neta,
            N=int(N),
            eta=float(eta),
            im_m=float(im_m),
            im_M_norm=float(im_M_norm),
        )

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def predicted_error_budget(theta, im_m, N, eta, delta: float = DEFAULT_DELTA, rtol: float = 1e-6, max_steps: int = 100):
    """Limit of ``phi_{k+1} = theta + (1 + phi_k)^3 sqrt((Im m + phi_k) / (N eta))``, ``phi_0 = N^delta``."""
    if theta < 0 or eta <= 0:
        raise ValidationError("theta must be >= 0 and eta > 0")
    Neta = N * eta
    phi = float(N) ** delta
    grow = 0
    for _ in range(max_steps):
        new = theta + (1 + phi) ** 3 * math.sqrt((im_m + phi) / Neta)
        if not math.isfinite(new):
            raise DivergenceError("error budget iteration overflowed")
        grow = grow + 1 if new > phi else 0
        if grow >= 3:
            raise DivergenceError(
                f"phi grew for 3 consecutive steps (N eta = {Neta:g}); parameters are out of regime"
            )
        done = abs(new - phi) <= rtol * abs(new)
        phi = new
        if done:
            break
    return phi
