r"""Matrix Dyson equation ``Pi(M) = I + zM + S(M)M - AM = 0``.

The self-energy ``S(M) = E[HMH]`` is evaluated through the entry covariance
profile.  With

    s_ij = (1 + delta_ij)^-1 N E|H_ij|^2,   t_ij = (1 + delta_ij)^-1 N E[H_ij^2]

the only nonvanishing covariances ``E[H_ai H_jb]`` are the pairings
``(i = j, a = b)`` and ``(j = a, i = b)``; the diagonal entry ``a = b = i = j``
belongs to both pairings and must be counted once.  The ``(1 + delta)^-1``
normalisation absorbs exactly that double count (``t_aa = s_aa`` because
diagonal entries are real), which leaves the closed form

    S(M)_ab = delta_ab N^-1 sum_k s_ak M_kk + N^-1 t_ab M_ba

with no diagonal correction.  ``tests/test_mde.py`` checks this against a
naive quadruple covariance sum and against Monte-Carlo averages of ``HMH``.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ._validation import (
    check_hermitian,
    check_same_size,
    check_square,
    check_upper_half_plane,
)
from .exceptions import (
    ConvergenceError,
    DimensionMismatchError,
    PositivityError,
    ValidationError,
)
from .measures import SpectralPoint

GENERAL = "general"
WIGNER = "wigner"


@dataclass(frozen=True)
class DeformationMatrix:
    """Hermitian expectation ``A = E W``."""

    A: np.ndarray

    def __post_init__(self):
        A = check_hermitian(self.A, "A")
        A = 0.5 * (A + A.conj().T)
        A.setflags(write=False)
        object.__setattr__(self, "A", A)

    @property
    def N(self) -> int:
        return self.A.shape[0]


def _as_matrix(A) -> np.ndarray:
    if isinstance(A, DeformationMatrix):
        return A.A
    return DeformationMatrix(A).A


@dataclass(frozen=True, eq=False)
class VarianceProfile:
    """Second-moment data of ``H``.

    Parameters
    ----------
    s : (N, N) array
        ``s_ij = (1 + delta_ij)^-1 N E|H_ij|^2``; real, symmetric, nonnegative.
    t : (N, N) array, optional
        ``t_ij = (1 + delta_ij)^-1 N E[H_ij^2]``.  Defaults to ``s`` (real
        symmetric entries).  ``t`` is Hermitian because
        ``E[H_ji^2] = conj(E[H_ij^2])``.
    mode : {"general", "wigner"}
        ``"wigner"`` replaces ``S`` by ``M -> (tr M / N) I``.
    """

    s: np.ndarray
    t: Optional[np.ndarray] = None
    mode: str = GENERAL

    def __post_init__(self):
        if self.mode not in (GENERAL, WIGNER):
            raise ValidationError(f"unknown profile mode {self.mode!r}")
        s = check_square(self.s, "s")
        if np.iscomplexobj(s):
            if np.any(s.imag != 0):
                raise ValidationError("s must be real")
            s = s.real
        s = np.array(s, dtype=float)
        neg = np.argwhere(s < 0)
        if neg.size:
            i, j = neg[0]
            raise ValidationError(f"s[{i},{j}] = {s[i, j]:g} is negative; variances must be >= 0")
        if not np.allclose(s, s.T, rtol=0, atol=1e-12):
            raise ValidationError("s must be symmetric")
        if self.t is None:
            t = s.copy()
        else:
            t = np.array(check_square(self.t, "t"), dtype=complex)
            if t.shape != s.shape:
                raise DimensionMismatchError(f"s has shape {s.shape} but t has shape {t.shape}")
            if not np.allclose(t, t.conj().T, rtol=0, atol=1e-12):
                raise ValidationError("t must be Hermitian (E[H_ji^2] = conj E[H_ij^2])")
            if not np.allclose(np.diag(t), np.diag(s), rtol=0, atol=1e-12):
                raise ValidationError("diagonal entries are real, so t_ii must equal s_ii")
            bad = np.argwhere(np.abs(t) > s + 1e-12)
            if bad.size:
                i, j = bad[0]
                raise ValidationError(
                    f"|t[{i},{j}]| = {abs(t[i, j]):g} exceeds s[{i},{j}] = {s[i, j]:g} (Cauchy-Schwarz)"
                )
            if np.all(t.imag == 0):
                t = t.real.copy()
        s.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "t", t)

    @classmethod
    def wigner(cls, N: int) -> "VarianceProfile":
        return cls(np.ones((N, N)), mode=WIGNER)

    @classmethod
    def constant(cls, N: int, value: float = 1.0) -> "VarianceProfile":
        """General profile ``s_ij = value`` (GOE-type second moments for value 1)."""
        return cls(np.full((N, N), float(value)))

    @property
    def N(self) -> int:
        return self.s.shape[0]

    @property
    def is_real(self) -> bool:
        return not np.iscomplexobj(self.t) and np.array_equal(self.t, self.s)

    def to_dict(self) -> dict:
        d = {"mode": self.mode, "s": self.s.tolist()}
        if not np.array_equal(self.t, self.s):
            t = np.asarray(self.t, dtype=complex)
            d["t"] = [[[v.real, v.imag] for v in row] for row in t]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "VarianceProfile":
        mode = d.get("mode", GENERAL)
        if "s" not in d:
            N = int(d["N"])
            return cls.wigner(N) if mode == WIGNER else cls.constant(N, d.get("value", 1.0))
        t = d.get("t")
        if t is not None:
            t = np.asarray(t, dtype=float)
            t = t[..., 0] + 1j * t[..., 1] if t.ndim == 3 else t
        return cls(np.asarray(d["s"], dtype=float), t, mode)


def self_energy(profile: VarianceProfile, M) -> np.ndarray:
    """``S(M) = E[HMH]`` in closed form, or ``(tr M / N) I`` in Wigner mode."""
    M = np.asarray(M)
    if M.ndim != 2 or M.shape != profile.s.shape:
        raise DimensionMismatchError(f"M has shape {M.shape}, profile has dimension {profile.N}")
    N = profile.N
    if profile.mode == WIGNER:
        return (np.trace(M) / N) * np.eye(N, dtype=np.result_type(M, float))
    out = (profile.t * M.T) / N
    out[np.diag_indices(N)] += (profile.s @ np.diag(M)) / N
    return out


def pi_residual(A, profile: VarianceProfile, M, z) -> np.ndarray:
    """``Pi(M) = I + zM + S(M)M - AM``."""
    A = _as_matrix(A)
    M = np.asarray(M)
    check_same_size(A, M)
    z = complex(z.z) if isinstance(z, SpectralPoint) else complex(z)
    N = A.shape[0]
    return np.eye(N) + z * M + self_energy(profile, M) @ M - A @ M


def max_norm(X) -> float:
    return float(np.max(np.abs(X)))


def imag_part(M) -> np.ndarray:
    """``Im M = (M - M*) / 2i`` (a Hermitian matrix)."""
    return (M - M.conj().T) / 2j


def min_imag_eig(M) -> float:
    return float(np.linalg.eigvalsh(imag_part(M))[0])


@dataclass(frozen=True)
class MdeOptions:
    """Solver settings.

    ``method="damped"`` is the plain damped fixed-point iteration;
    ``method="anderson"`` applies Anderson mixing to the same map and is
    meant for large general profiles at small ``eta``.
    """

    res_tol: float = 1e-10
    pos_tol: float = 1e-9
    alpha: float = 1.0
    min_alpha: float = 1.0 / 64
    max_iters: int = 20000
    method: str = "damped"
    anderson_depth: int = 6
    ladder_ratio: float = 0.25
    rung_tol: float = 1e-7
    cond_limit: float = 1e12

    def __post_init__(self):
        if not 0 < self.alpha <= 1:
            raise ValidationError(f"damping alpha must lie in (0, 1], got {self.alpha}")
        if self.method not in ("damped", "anderson"):
            raise ValidationError(f"unknown method {self.method!r}")
        if not (self.res_tol > 0 and self.pos_tol >= 0):
            raise ValidationError("tolerances must be positive")


@dataclass(eq=False)
class MdeSolution:
    """Solved ``M(z)`` together with its residual and positivity certificate."""

    M: np.ndarray
    z: SpectralPoint
    residual_norm: float
    iterations: int
    min_imag_eig: float
    res_tol: float = 1e-10
    pos_tol: float = 1e-9
    cond_warning: bool = False
    method: str = "damped"

    def check(self):
        if self.residual_norm > self.res_tol:
            raise ConvergenceError(
                f"residual {self.residual_norm:.3e} above tolerance {self.res_tol:.1e}",
                self.residual_norm,
                self.iterations,
            )
        if self.min_imag_eig < -self.pos_tol:
            raise PositivityError(
                f"Im M has eigenvalue {self.min_imag_eig:.3e} < -{self.pos_tol:.1e}",
                self.min_imag_eig,
            )
        return self

    def to_dict(self) -> dict:
        return {
            "schema": 1,
            "z": [self.z.E, self.z.eta],
            "residual_norm": self.residual_norm,
            "iterations": self.iterations,
            "min_imag_eig": self.min_imag_eig,
            "res_tol": self.res_tol,
            "pos_tol": self.pos_tol,
            "cond_warning": self.cond_warning,
            "method": self.method,
            "M": [[[v.real, v.imag] for v in row] for row in np.asarray(self.M, dtype=complex)],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "MdeSolution":
        arr = np.asarray(d["M"], dtype=float)
        return cls(
            M=arr[..., 0] + 1j * arr[..., 1],
            z=SpectralPoint(*d["z"]),
            residual_norm=d["residual_norm"],
            iterations=d["iterations"],
            min_imag_eig=d["min_imag_eig"],
            res_tol=d["res_tol"],
            pos_tol=d["pos_tol"],
            cond_warning=d["cond_warning"],
            method=d["method"],
        )

    @classmethod
    def from_json(cls, text: str) -> "MdeSolution":
        return cls.from_dict(json.loads(text))


# ---------------------------------------------------------------------------
# fixed-point iterations


@dataclass
class _State:
    M: np.ndarray
    iterations: int = 0
    cond_warning: bool = False
    residual: float = math.inf


def _iterate_dense(A, profile, z, M, opts, tol):
    """Damped (optionally Anderson-mixed) iteration ``M <- (1-a) M + a F(M)``."""
    N = A.shape[0]
    eye = np.eye(N)
    alpha = opts.alpha
    state = _State(M=np.array(M, dtype=complex))
    prev = math.inf
    dx_hist, df_hist = [], []
    x_prev = f_prev = None
    for it in range(opts.max_iters + 1):
        K = A - z * eye - self_energy(profile, state.M)
        r = max_norm(eye - K @ state.M)
        state.residual = r
        if r <= tol:
            state.iterations = it
            return state
        if it == opts.max_iters:
            break
        try:
            F = np.linalg.inv(K)
        except np.linalg.LinAlgError as exc:
            raise ConvergenceError(f"singular A - z - S(M): {exc}", r, it) from exc
        cond = np.linalg.norm(K, 1) * np.linalg.norm(F, 1)
        if cond > opts.cond_limit and not state.cond_warning:
            state.cond_warning = True
            warnings.warn(f"ill-conditioned inversion (cond ~ {cond:.2e}) at z = {z}", RuntimeWarning)
        if r > prev:
            alpha = max(alpha / 2, opts.min_alpha)
            dx_hist.clear()
            df_hist.clear()
            x_prev = None
        prev = r
        x = state.M.ravel()
        f = alpha * (F.ravel() - x)  # damped fixed-point increment
        if opts.method == "anderson":
            if x_prev is not None:
                dx_hist.append(x - x_prev)
                df_hist.append(f - f_prev)
                if len(dx_hist) > opts.anderson_depth:
                    dx_hist.pop(0)
                    df_hist.pop(0)
            x_prev, f_prev = x, f
            if dx_hist:
                dF = np.stack(df_hist, axis=1)
                dX = np.stack(dx_hist, axis=1)
                gamma, *_ = np.linalg.lstsq(dF, f, rcond=None)
                x_new = x + f - (dX + dF) @ gamma
            else:
                x_new = x + f
        else:
            x_new = x + f
        state.M = x_new.reshape(N, N)
    state.iterations = opts.max_iters
    raise ConvergenceError(
        f"no convergence within {opts.max_iters} iterations at z = {z} (residual {state.residual:.3e})",
        state.residual,
        opts.max_iters,
    )


class _WignerEigenbasis:
    """Wigner-mode iteration carried out in the eigenbasis of ``A``.

    There ``(A - z - m)^-1`` is diagonal, so every damped iterate has the form
    ``c * M0' + diag(D)`` with ``M0' = U* M0 U``.  One step costs O(N), and
    the Frobenius norm of the eigenbasis residual bounds the max-entry norm
    of ``Pi(M)`` in the original basis.
    """

    def __init__(self, A):
        self.lam, self.U = np.linalg.eigh(A)

    def run(self, z, M0, opts, tol):
        lam = self.lam
        N = lam.size
        M0p = self.U.conj().T @ M0 @ self.U
        d0 = np.diag(M0p).copy()
        off = np.sum(np.abs(M0p) ** 2, axis=1) - np.abs(d0) ** 2
        tr0 = d0.sum()
        c = 1.0 + 0j
        D = np.zeros(N, dtype=complex)
        alpha = opts.alpha
        prev = math.inf
        for it in range(opts.max_iters + 1):
            m = (c * tr0 + D.sum()) / N
            k = lam - z - m
            diag_res = 1.0 - k * (c * d0 + D)
            r = math.sqrt(float(np.sum(np.abs(diag_res) ** 2) + abs(c) ** 2 * np.sum(np.abs(k) ** 2 * off)))
            if r <= tol:
                return c, D, M0p, it, r
            if it == opts.max_iters:
                break
            if r > prev:
                alpha = max(alpha / 2, opts.min_alpha)
            prev = r
            c = (1 - alpha) * c
            D = (1 - alpha) * D + alpha / k
        raise ConvergenceError(
            f"no convergence within {opts.max_iters} iterations at z = {z} (residual {r:.3e})",
            r,
            opts.max_iters,
        )

    def assemble(self, c, D, M0p):
        Mp = c * M0p
        Mp[np.diag_indices_from(Mp)] += D
        return self.U @ Mp @ self.U.conj().T


def _finish(A, profile, zc, M, iterations, opts, cond_warning):
    res = max_norm(pi_residual(A, profile, M, zc))
    sol = MdeSolution(
        M=M,
        z=SpectralPoint.from_complex(zc),
        residual_norm=res,
        iterations=iterations,
        min_imag_eig=min_imag_eig(M),
        res_tol=opts.res_tol,
        pos_tol=opts.pos_tol,
        cond_warning=cond_warning,
        method=opts.method,
    )
    return sol.check()


def _solve_at(A, profile, zc, M0, opts, tol, eig=None):
    """One fixed-point solve at ``zc`` from ``M0``; returns (M, iterations, cond_warning)."""
    if profile.mode == WIGNER:
        eig = eig or _WignerEigenbasis(A)
        # the eigenbasis Frobenius residual bounds the max-entry residual
        c, D, M0p, it, _ = eig.run(zc, M0, opts, tol)
        return eig.assemble(c, D, M0p), it, False
    st = _iterate_dense(A, profile, zc, M0, opts, tol)
    return st.M, st.iterations, st.cond_warning


def eta_start(A) -> float:
    return max(10.0, 2.0 * float(np.linalg.norm(A, 2)) + 2.0)


def _ladder(eta_top, eta, ratio):
    etas = []
    e = eta_top
    while e > eta:
        etas.append(e)
        e *= ratio
    etas.append(eta)
    return etas


def solve_mde(A, profile: VarianceProfile, z, opts: Optional[MdeOptions] = None, M0=None, **kwargs):
    """Solve ``Pi(M) = 0`` for the unique ``M`` with ``Im M >= 0``.

    Parameters
    ----------
    A : array_like or DeformationMatrix
        Hermitian expectation matrix.
    profile : VarianceProfile
    z : complex or SpectralPoint
        Spectral parameter, ``Im z > 0``.
    opts : MdeOptions, optional
        Keyword arguments are forwarded to ``MdeOptions`` when ``opts`` is None.
    M0 : array_like, optional
        Initial guess.  When given, the iteration starts directly at ``z``.
        Otherwise it starts from ``-(E + i*eta_start)^-1 I`` and follows a
        geometric eta-ladder down to ``Im z``.

    Returns
    -------
    MdeSolution

    Raises
    ------
    ConvergenceError
        No convergence within ``max_iters`` after damping reduction.
    PositivityError
        The converged ``M`` has ``Im M`` eigenvalue below ``-pos_tol``.
    """
    opts = opts or MdeOptions(**kwargs)
    A = _as_matrix(A)
    if A.shape != profile.s.shape:
        raise DimensionMismatchError(f"A has dimension {A.shape[0]}, profile has {profile.N}")
    zc = check_upper_half_plane(z)
    N = A.shape[0]
    eig = _WignerEigenbasis(A) if profile.mode == WIGNER else None
    total = 0
    cond_flag = False
    if M0 is not None:
        M0 = check_square(M0, "M0").astype(complex)
        M, it, cw = _solve_at(A, profile, zc, M0, opts, opts.res_tol, eig)
        return _finish(A, profile, zc, M, it, opts, cw)

    top = max(zc.imag, eta_start(A))
    M = -np.eye(N, dtype=complex) / complex(zc.real, top)
    rungs = _ladder(top, zc.imag, opts.ladder_ratio)
    for k, eta in enumerate(rungs):
        last = k == len(rungs) - 1
        tol = opts.res_tol if last else max(opts.rung_tol, opts.res_tol)
        M, it, cw = _solve_at(A, profile, complex(zc.real, eta), M, opts, tol, eig)
        total += it
        cond_flag |= cw
    return _finish(A, profile, zc, M, total, opts, cond_flag)


def solve_mde_curve(A, profile: VarianceProfile, E: float, eta_ladder, opts: Optional[MdeOptions] = None, **kwargs):
    """Solve along a strictly decreasing ladder of ``eta`` at fixed ``E``.

    Each rung is warm-started from the previous rung's solution; the first
    rung is an ordinary :func:`solve_mde` call.
    """
    opts = opts or MdeOptions(**kwargs)
    etas = [float(e) for e in eta_ladder]
    if not etas:
        raise ValidationError("empty eta ladder")
    if any(e <= 0 for e in etas) or any(b >= a for a, b in zip(etas, etas[1:])):
        raise ValidationError(f"eta ladder must be strictly decreasing and positive, got {etas}")
    A = _as_matrix(A)
    out = []
    for k, eta in enumerate(etas):
        try:
            if k == 0:
                sol = solve_mde(A, profile, complex(E, eta), opts)
            else:
                sol = solve_mde(A, profile, complex(E, eta), opts, M0=out[-1].M)
        except ConvergenceError as exc:
            raise ConvergenceError(f"rung {k} (eta = {eta:g}): {exc}", exc.residual, exc.iterations, rung=k) from exc
        except PositivityError as exc:
            err = PositivityError(f"rung {k} (eta = {eta:g}): {exc}", exc.min_imag_eig)
            raise err from exc
        out.append(sol)
    return out


def random_m_plus(N, rng, scale=1.0) -> np.ndarray:
    """Random matrix ``X + iY`` with ``X`` Hermitian and ``Y`` positive definite."""
    X = rng.standard_normal((N, N)) + 1j * rng.standard_normal((N, N))
    B = rng.standard_normal((N, N)) + 1j * rng.standard_normal((N, N))
    herm = (X + X.conj().T) / (2 * math.sqrt(N))
    pos = B @ B.conj().T / N + 0.1 * np.eye(N)
    return scale * (herm + 1j * pos)


__all__ = [
    "DeformationMatrix",
    "VarianceProfile",
    "MdeOptions",
    "MdeSolution",
    "self_energy",
    "pi_residual",
    "solve_mde",
    "solve_mde_curve",
    "imag_part",
    "min_imag_eig",
    "max_norm",
    "random_m_plus",
    "eta_start",
]
