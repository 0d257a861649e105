"""Sampling of Hermitian random matrices ``W = H + A`` with independent entries.

Entries are ``xi / sqrt(N)`` for a standardised ``xi`` (mean 0, variance 1).
Every matrix is drawn from its own counter-based Philox stream keyed by an
integer seed, so trials can be generated in any order or in parallel and
still reproduce bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from ._validation import check_positive_int
from .cumulant import GaussianLaw, Law, centered_skew, rademacher
from .exceptions import ValidationError
from .mde import DeformationMatrix, VarianceProfile, WIGNER

GAUSSIAN = "gaussian"
RADEMACHER = "rademacher"
SKEW = "skew"
KINDS = (GAUSSIAN, RADEMACHER, SKEW)

NORM_FLAG_LEVEL = 2.5
NORM_FLAG_MIN_N = 500


def rng_from_seed(seed: int, *key: int) -> np.random.Generator:
    """Philox generator for ``seed`` and an optional spawn key."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def derive_seed(master: int, *key: int) -> int:
    """Deterministic 64-bit child seed of ``master`` for the given key."""
    ss = np.random.SeedSequence(int(master), spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


@dataclass(frozen=True)
class EntryDistribution:
    """Law of the standardised entry ``xi``.

    Parameters
    ----------
    kind : {"gaussian", "rademacher", "skew"}
        ``"skew"`` is the two-point law ``sqrt(2)`` w.p. 1/3 and
        ``-1/sqrt(2)`` w.p. 2/3, which has third cumulant ``1/sqrt(2)``.
    complex : bool
        Complex entries ``(xi_1 + i xi_2) / sqrt(2)`` off the diagonal.
    sigma_d2 : float, optional
        Diagonal variance ``N E H_ii^2``. Defaults to 2 (real) or 1 (complex).
    """

    kind: str = GAUSSIAN
    complex: bool = False
    sigma_d2: Optional[float] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"unknown entry distribution {self.kind!r}; expected one of {KINDS}")
        if self.sigma_d2 is None:
            object.__setattr__(self, "sigma_d2", 1.0 if self.complex else 2.0)
        if not self.sigma_d2 >= 0:
            raise ValidationError("sigma_d2 must be >= 0")

    def draw(self, rng: np.random.Generator, shape) -> np.ndarray:
        """Standardised real draws."""
        if self.kind == GAUSSIAN:
            return rng.standard_normal(shape)
        u = rng.random(shape)
        if self.kind == RADEMACHER:
            return np.where(u < 0.5, -1.0, 1.0)
        return np.where(u < 1 / 3, math.sqrt(2.0), -1 / math.sqrt(2.0))

    def standard_law(self) -> Law:
        if self.kind == GAUSSIAN:
            return GaussianLaw(1.0)
        return rademacher() if self.kind == RADEMACHER else centered_skew()

    def entry_law(self, N: int, diagonal: bool = False) -> Law:
        """Law of a real off-diagonal (or diagonal) entry at size ``N``."""
        scale = 1 / math.sqrt(N)
        if diagonal:
            scale *= math.sqrt(self.sigma_d2)
        return self.standard_law().scaled(scale)

    def entry_cumulants(self, N: int, n: int, diagonal: bool = False) -> np.ndarray:
        """Cumulants ``C_1..C_n`` of a real entry, from the exact moments of the law."""
        return self.entry_law(N, diagonal).cumulants(n)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "complex": self.complex, "sigma_d2": self.sigma_d2}

    @classmethod
    def from_dict(cls, d: dict) -> "EntryDistribution":
        return cls(d.get("kind", GAUSSIAN), bool(d.get("complex", False)), d.get("sigma_d2"))


@dataclass(frozen=True, eq=False)
class SampledMatrix:
    """One draw ``W = H + A`` together with what is needed to reproduce it."""

    H: np.ndarray
    A: DeformationMatrix
    seed: int
    dist: EntryDistribution
    profile: VarianceProfile = field(repr=False)

    @property
    def N(self) -> int:
        return self.H.shape[0]

    @property
    def W(self) -> np.ndarray:
        return self.H + self.A.A

    @property
    def is_complex(self) -> bool:
        return np.iscomplexobj(self.H)

    def with_A(self, A) -> "SampledMatrix":
        """Same noise ``H`` with a different expectation."""
        A = A if isinstance(A, DeformationMatrix) else DeformationMatrix(A)
        if A.N != self.N:
            raise ValidationError(f"A has size {A.N}, sample has size {self.N}")
        return SampledMatrix(self.H, A, self.seed, self.dist, self.profile)


def _symmetrise_upper(X: np.ndarray) -> np.ndarray:
    U = np.triu(X, 1)
    return U + U.conj().T


def sample_wigner(N: int, dist: EntryDistribution, seed: int, A=None) -> SampledMatrix:
    """Wigner matrix: i.i.d. entries of variance ``1/N`` above the diagonal.

    In the complex case real and imaginary parts are independent, so
    ``E H_ij^2 = 0`` off the diagonal; the induced ``(s, t)`` is recorded in
    ``profile``.
    """
    N = check_positive_int(N, "N", minimum=2)
    rng = rng_from_seed(seed)
    c = 1 / math.sqrt(N)
    if dist.complex:
        X = (dist.draw(rng, (N, N)) + 1j * dist.draw(rng, (N, N))) * (c / math.sqrt(2))
    else:
        X = dist.draw(rng, (N, N)) * c
    d = dist.draw(rng, N) * c * math.sqrt(dist.sigma_d2)
    H = _symmetrise_upper(X)
    H[np.diag_indices(N)] = d
    H.setflags(write=False)
    A = DeformationMatrix(np.zeros((N, N)) if A is None else A)
    return SampledMatrix(H, A, int(seed), dist, wigner_profile(N, dist))


def wigner_profile(N: int, dist: EntryDistribution) -> VarianceProfile:
    """Variance profile ``(s, t)`` of :func:`sample_wigner` matrices."""
    # s_ij = (1 + delta_ij)^-1 N E|H_ij|^2
    s = np.ones((N, N))
    np.fill_diagonal(s, dist.sigma_d2 / 2)
    if dist.complex:
        t = np.zeros((N, N))
        np.fill_diagonal(t, dist.sigma_d2 / 2)
        return VarianceProfile(s, t)
    return VarianceProfile(s)


def sample_general(profile: VarianceProfile, dist: EntryDistribution, seed: int, A=None) -> SampledMatrix:
    """Entry ``(i, j)`` with ``E|H_ij|^2 = s_ij (1 + delta_ij) / N`` and ``E H_ij^2 = t_ij (1 + delta_ij) / N``.

    For a complex pseudo-variance ``t = |t| e^{i theta}`` the entry is
    ``e^{i theta / 2} (X + i Y)`` with independent ``X, Y`` of variances
    ``(s + |t|) / 2N`` and ``(s - |t|) / 2N``.  A real ``dist`` requires
    ``t = s``.  The diagonal is real with variance ``2 s_ii / N``, so
    ``dist.sigma_d2`` is not used here.
    """
    if profile.mode == WIGNER:
        raise ValidationError("sample_general needs a general profile; use sample_wigner for Wigner mode")
    N = profile.N
    if N < 2:
        raise ValidationError("N must be >= 2")
    if not dist.complex and not profile.is_real:
        raise ValidationError("a real entry distribution requires t = s; use a complex distribution")
    rng = rng_from_seed(seed)
    s, t = profile.s, profile.t
    if dist.complex:
        at = np.abs(t)
        phase = np.exp(0.5j * np.angle(t))
        vx = np.sqrt(np.maximum(s + at, 0) / (2 * N))
        vy = np.sqrt(np.maximum(s - at, 0) / (2 * N))
        X = phase * (vx * dist.draw(rng, (N, N)) + 1j * vy * dist.draw(rng, (N, N)))
    else:
        X = np.sqrt(s / N) * dist.draw(rng, (N, N))
    d = dist.draw(rng, N) * np.sqrt(2 * np.diag(s) / N)
    H = _symmetrise_upper(X)
    H[np.diag_indices(N)] = d
    H.setflags(write=False)
    A = DeformationMatrix(np.zeros((N, N)) if A is None else A)
    return SampledMatrix(H, A, int(seed), dist, profile)


@dataclass(frozen=True)
class NormProbe:
    norms: np.ndarray
    median: float
    max: float
    flagged: bool


def operator_norm_probe(samples: Sequence[SampledMatrix], level: float = NORM_FLAG_LEVEL) -> NormProbe:
    """Spectral norms of ``H``; flags a norm above ``level`` at ``N >= 500`` for Gaussian/Rademacher."""
    if not samples:
        raise ValidationError("no samples given")
    norms = np.array([float(np.max(np.abs(np.linalg.eigvalsh(s.H)))) for s in samples])
    flagged = any(
        n > level and s.N >= NORM_FLAG_MIN_N and s.dist.kind in (GAUSSIAN, RADEMACHER)
        for n, s in zip(norms, samples)
    )
    return NormProbe(norms, float(np.median(norms)), float(norms.max()), bool(flagged))


def dump_matrix(X, path) -> None:
    """Write ``X`` row-major as little-endian float64 ``(re, im)`` pairs."""
    X = np.asarray(X, dtype=complex)
    out = np.empty(X.shape + (2,), dtype="<f8")
    out[..., 0], out[..., 1] = X.real, X.imag
    Path(path).write_bytes(out.tobytes(order="C"))


def load_matrix(path) -> np.ndarray:
    raw = np.frombuffer(Path(path).read_bytes(), dtype="<f8")
    n2 = raw.size // 2
    N = int(round(math.sqrt(n2)))
    if raw.size % 2 or N * N != n2:
        raise ValidationError(f"{path}: {raw.size} doubles do not form a square complex matrix")
    pairs = raw.reshape(N, N, 2)
    return pairs[..., 0] + 1j * pairs[..., 1]
