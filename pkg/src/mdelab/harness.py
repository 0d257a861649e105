"""Monte-Carlo verification of local laws at finite ``N``.

The statistics here compare the Green function of sampled matrices with the
deterministic solution ``M`` and with the error scales of
:class:`mdelab.scalar.ErrorBudget`.  Exact algebraic identities are checked
to rounding precision; probabilistic bounds are checked through exceedance
fractions, which are finite-``N`` stand-ins for stochastic domination.
"""

from __future__ import annotations

import csv
import fnmatch
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy import stats as sps

from ._validation import as_complex_z, check_positive_int
from .ensemble import EntryDistribution, derive_seed, rng_from_seed, sample_wigner, wigner_profile
from .exceptions import InsufficientGridError, MdelabError, ValidationError
from .measures import AtomicMeasure, SpectralDomain, spectral_measure_of
from .mde import DeformationMatrix, MdeOptions, VarianceProfile, pi_residual, solve_mde
from .resolvent import ResolventBundle, eigendecompose, probe_vectors, trace_g
from .scalar import ErrorBudget, density, m_matrix, pi_scalar, solve_scalar

SCHEMA = 1
DEFAULT_EPSILONS = (0.05, 0.1, 0.2)
EXCEEDANCE_LIMIT = 0.1
HEADER_NOTE = (
    "Exceedance fractions and N^eps factors are finite-N proxies for asymptotic "
    "high-probability bounds; the 0.1 fraction and eps grid are calibration choices."
)


# --------------------------------------------------------------------------- pointwise statistics


def _pair_forms(source, z, V, Wm):
    """``<V[:, a], G Wm[:, a]>`` for each column ``a``; ``source`` is a bundle or a dense ``G``."""
    if isinstance(source, ResolventBundle):
        PV = source.project(V)
        PW = source.project(Wm)
        d = source.eigenvalues - as_complex_z(z)
        return np.einsum("ka,ka->a", PV.conj(), PW / d[:, None])
    G = np.asarray(source)
    return np.einsum("ia,ia->a", V.conj(), G @ Wm)


def _as_columns(V, Wm):
    V = np.asarray(V)
    V = V[:, None] if V.ndim == 1 else V
    Wm = V if Wm is None else np.asarray(Wm)
    Wm = Wm[:, None] if Wm.ndim == 1 else Wm
    if V.shape != Wm.shape:
        raise ValidationError(f"vector sets differ in shape: {V.shape} vs {Wm.shape}")
    return V, Wm


def isotropic_error(source, M, z, V, Wm=None) -> float:
    """``max_a |<v_a, G w_a> - <v_a, M w_a>|`` over the column pairs of ``V`` and ``Wm``.

    ``source`` is a :class:`ResolventBundle` or a dense ``G``.
    """
    V, Wm = _as_columns(V, Wm)
    g_forms = _pair_forms(source, z, V, Wm)
    m_forms = np.einsum("ia,ia->a", V.conj(), np.asarray(M) @ Wm)
    return float(np.max(np.abs(g_forms - m_forms)))


def averaged_error(g, m) -> float:
    return abs(complex(g) - complex(m))


def clip_phi(phi, N, tau=0.1) -> float:
    """``phi`` restricted to ``[1/N, N^(tau/10)]``."""
    return float(min(max(phi, 1.0 / N), float(N) ** (tau / 10)))


def imag_norm(M) -> float:
    """Operator norm of ``Im M = (M - M*) / 2i``."""
    return float(np.max(np.abs(np.linalg.eigvalsh((M - M.conj().T) / 2j))))


def make_budget(phi, M, N, eta, im_M_norm: Optional[float] = None) -> ErrorBudget:
    if im_M_norm is None:
        im_M_norm = imag_norm(M)
    im_m = float(np.trace(M).imag / N)
    return ErrorBudget.compute(phi, im_m, im_M_norm, N, eta)


@dataclass(frozen=True)
class PiStatistics:
    iso: float
    avg: float
    budget: ErrorBudget


def pi_statistics(G, A, z, M, profile: VarianceProfile, B, V, Wm=None, tau: float = 0.1,
                  phi: Optional[float] = None) -> PiStatistics:
    """Isotropic and averaged size of ``Pi(G)``.

    ``iso = max_a |<v_a, Pi(G) w_a>|`` and ``avg = |N^-1 tr(B Pi(G))|``; the
    budget uses ``phi`` equal to the measured isotropic ``G - M`` error
    (clipped to ``[1/N, N^(tau/10)]``) unless given.
    """
    V, Wm = _as_columns(V, Wm)
    z = as_complex_z(z)
    N = G.shape[0]
    P = pi_residual(A, profile, G, z)
    iso = float(np.max(np.abs(np.einsum("ia,ia->a", V.conj(), P @ Wm))))
    avg = abs(np.sum(np.asarray(B) * P.T)) / N
    if phi is None:
        phi = isotropic_error(G, M, z, V, Wm)
    budget = make_budget(clip_phi(phi, N, tau), M, N, z.imag)
    return PiStatistics(iso, float(avg), budget)


@dataclass(frozen=True)
class Decomposition:
    """``J``, ``K``, ``D`` at one vector pair and the recomposition error of ``Pi = D + J``."""

    J: complex
    K: complex
    D: complex
    Pi: complex
    recomposition_error: float
    JB_avg: complex


def _jkd_matrices(G, H, profile: VarianceProfile):
    N = G.shape[0]
    # J_ab = N^-1 sum_j G_ja t_aj G_jb
    J = (G * profile.t.T).T @ G / N
    # K = diag(k) G with k_a = N^-1 sum_j s_aj G_jj
    k = profile.s @ np.diagonal(G) / N
    K = k[:, None] * G
    D = H @ G + K
    return J, K, D


def decomposition_diag(G, H, A, z, profile: VarianceProfile, B, v, w) -> Decomposition:
    """Split ``S(G)G = J + K`` and set ``D = HG + K``; then ``Pi(G) = D + J`` exactly.

    ``Pi(G)`` is evaluated independently from ``I + zG + S(G)G - AG``, so the
    recomposition error measures the agreement of two routes.
    """
    N = G.shape[0]
    J, K, D = _jkd_matrices(G, H, profile)
    P = pi_residual(A, profile, G, z)
    v, w = np.asarray(v), np.asarray(w)

    def form(X):
        return complex(np.vdot(v, X @ w))

    Jvw, Pvw, Dvw = form(J), form(P), form(D)
    t = profile.t
    GB = G @ np.asarray(B)
    JB = np.sum(t * G.T * GB.T) / N**2
    return Decomposition(Jvw, form(K), Dvw, Pvw, abs(Pvw - (Dvw + Jvw)), complex(JB))


def q_matrix(G, H, B, profile: VarianceProfile) -> np.ndarray:
    """``Q = N^-1 G B H G + N^-2 G diag(c) G + N^-2 G B diag(e) G``.

    ``c = s^T diag(GB)`` and ``e_b = sum_a s_ba G_aa``.
    """
    N = G.shape[0]
    s = profile.s
    GB = G @ np.asarray(B)
    c = s.T @ np.diagonal(GB)
    e = s @ np.diagonal(G)
    return (GB @ (H @ G)) / N + (G * c) @ G / N**2 + (GB * e) @ G / N**2


def q_diagnostic(G, H, B, profile: VarianceProfile, v, w) -> complex:
    """``Q_vw = <v, Q w>``."""
    Q = q_matrix(G, H, B, profile)
    return complex(np.vdot(np.asarray(v), Q @ np.asarray(w)))


@dataclass(frozen=True)
class IdentityReport:
    """Relative residuals of the two exact identities."""

    g: complex
    m: complex
    matrix_residual: float
    scalar_residual: float
    pi_g: complex


def identity_checks(G, A, z, nu: Optional[AtomicMeasure] = None, u=None) -> IdentityReport:
    """Residuals of ``G - R_u = R_g - R_u - R_g Pi(G)`` and ``pi(g) = -<R_g Pi(G)>``.

    ``Pi`` uses the trace self-energy ``S(G) = g I`` and ``R_x = (A - x - z)^-1``.
    ``u`` defaults to the scalar solution for ``nu`` (itself defaulting to the
    spectral measure of ``A``); the first identity holds for every ``u``.
    """
    z = as_complex_z(z)
    A = np.asarray(A.A if isinstance(A, DeformationMatrix) else A)
    N = A.shape[0]
    I = np.eye(N)
    g = complex(np.trace(G) / N)
    if u is None:
        u = solve_scalar(nu if nu is not None else spectral_measure_of(A), z).m
    u = complex(u)
    R_g = np.linalg.inv(A - (g + z) * I)
    R_u = np.linalg.inv(A - (u + z) * I)
    P = I + z * G + g * G - A @ G
    RP = R_g @ P
    scale = max(np.max(np.abs(G)), np.max(np.abs(R_g)), np.max(np.abs(R_u)), 1.0)
    matrix_res = float(np.max(np.abs((G - R_u) - (R_g - R_u - RP))) / scale)
    # pi(g) from the spectral measure of A, against -<R_g Pi(G)>
    pi_g = pi_scalar(spectral_measure_of(A), g, z)
    rhs = -np.trace(RP) / N
    scalar_res = float(abs(pi_g - rhs) / max(1.0, abs(g)))
    return IdentityReport(g, u, matrix_res, scalar_res, pi_g)


# --------------------------------------------------------------------------- domination


@dataclass(frozen=True)
class DominationSample:
    """``X`` and ``Y`` values per ``N`` level (rows = levels, columns = trials)."""

    N: Sequence[int]
    X: Sequence[Sequence[float]]
    Y: Sequence[Sequence[float]]
    epsilons: Sequence[float] = DEFAULT_EPSILONS
    label: str = ""

    def __post_init__(self):
        if len(self.N) != len(self.X) or len(self.N) != len(self.Y):
            raise ValidationError("N, X and Y must have one entry per level")
        if any(b <= a for a, b in zip(self.N, self.N[1:])):
            raise ValidationError("N levels must be strictly increasing")
        for x, y in zip(self.X, self.Y):
            if len(x) != len(y):
                raise ValidationError("X and Y need the same number of trials per level")
            if np.any(np.asarray(y) <= 0):
                raise ValidationError("Y must be > 0")
            if np.any(np.asarray(x) < 0):
                raise ValidationError("X must be >= 0")


@dataclass(frozen=True)
class DominationResult:
    exceedance: Dict[float, List[float]]
    verdicts: Dict[float, bool]
    slope_X: float
    slope_Y: float
    passed: bool

    def as_dict(self) -> dict:
        return {
            "exceedance": {repr(k): v for k, v in self.exceedance.items()},
            "verdicts": {repr(k): v for k, v in self.verdicts.items()},
            "slope_X": self.slope_X,
            "slope_Y": self.slope_Y,
            "pass": self.passed,
        }


def fit_loglog(N, values):
    """Least-squares slope of ``log values`` against ``log N`` and its standard error."""
    res = sps.linregress(np.log(np.asarray(N, dtype=float)), np.log(np.asarray(values, dtype=float)))
    return float(res.slope), float(res.stderr)


def domination_test(ds: DominationSample, min_levels: int = 3, min_trials: int = 20,
                    limit: float = EXCEEDANCE_LIMIT) -> DominationResult:
    """Finite-``N`` proxy for ``X < Y``.

    For each ``eps`` the fraction of trials with ``X > N^eps Y`` is computed
    per level.  The verdict at ``eps`` passes iff these fractions are
    non-increasing in ``N`` and the last one is at most ``limit``; the overall
    verdict requires this for every ``eps >= 0.1``.
    """
    if len(ds.N) < min_levels:
        raise InsufficientGridError(f"need >= {min_levels} N levels, got {len(ds.N)}")
    if any(len(x) < min_trials for x in ds.X):
        raise InsufficientGridError(f"need >= {min_trials} trials per level")
    exc, verdicts = {}, {}
    for eps in ds.epsilons:
        fr = [
            float(np.mean(np.asarray(x) > float(n) ** eps * np.asarray(y)))
            for n, x, y in zip(ds.N, ds.X, ds.Y)
        ]
        exc[eps] = fr
        verdicts[eps] = all(b <= a for a, b in zip(fr, fr[1:])) and fr[-1] <= limit
    mx = [float(np.median(x)) for x in ds.X]
    # a zero median has no logarithm; report the slope as undefined
    sx = fit_loglog(ds.N, mx)[0] if min(mx) > 0 else float("nan")
    sy, _ = fit_loglog(ds.N, [np.median(y) for y in ds.Y])
    passed = all(v for e, v in verdicts.items() if e >= 0.1 - 1e-12)
    return DominationResult(exc, verdicts, sx, sy, passed)


def iterate_self_improving(x0: float, y: float, q: float, steps: int) -> List[float]:
    """``z_0 = x0``, ``z_{k+1} = z_k^q y^(1-q)``; returns ``[z_0, ..., z_steps]``."""
    if not (x0 >= y > 0):
        raise ValidationError("need x0 >= y > 0")
    if not 0 <= q < 1:
        raise ValidationError("q must lie in [0, 1)")
    out = [float(x0)]
    for _ in range(int(steps)):
        out.append(out[-1] ** q * y ** (1 - q))
    return out


def wasserstein_to_density(eigenvalues, nu: AtomicMeasure, grid=None, eta_eval: float = 1e-5) -> float:
    """1-Wasserstein distance between an empirical spectrum and the law with density ``density(nu, .)``."""
    lam = np.asarray(eigenvalues, dtype=float).ravel()
    if grid is None:
        lo, hi = nu.support_hull
        grid = np.linspace(min(lo - 2.5, lam.min()), max(hi + 2.5, lam.max()), 6001)
    rho = density(nu, grid, eta_eval)
    return float(sps.wasserstein_distance(lam, grid, v_weights=np.maximum(rho, 0)))


# --------------------------------------------------------------------------- configuration

STAT_GROUPS = ("avg", "iso", "pi", "decomposition", "q", "identities")

DEFAULT_VERDICTS = [
    {"name": "iso_law", "rule": "fraction", "stat": "iso_ratio_p*", "exponent": 0.1, "min_fraction": 0.95,
     "needs": "iso"},
    {"name": "avg_domination", "rule": "domination", "x": "avg_err", "y": "inv_Neta", "eps": 0.1,
     "needs": "avg"},
    {"name": "pi_iso", "rule": "fraction", "stat": "pi_iso_ratio_p*", "exponent": 0.1, "min_fraction": 0.95,
     "needs": "pi"},
    {"name": "pi_avg", "rule": "fraction", "stat": "pi_avg_ratio_B?", "exponent": 0.1, "min_fraction": 0.95,
     "needs": "pi"},
    {"name": "recomposition", "rule": "max", "stat": "recomp_err", "threshold": 1e-12, "needs": "decomposition"},
    {"name": "q_bound", "rule": "fraction", "stat": "q_ratio_B?_p*", "exponent": 0.15, "min_fraction": 0.9,
     "needs": "q"},
    {"name": "identities", "rule": "max", "stat": "id_*_res", "threshold": 1e-9, "needs": "identities"},
]


@dataclass
class ExperimentConfig:
    """Parameters of a local-law experiment (see ``to_dict`` for the JSON layout).

    ``z`` entries are ``{"E": .., "eta": ..}`` or ``{"E": .., "eta_exponent": a}``
    meaning ``eta = N^a``.  ``A`` is ``{"kind": "zero"}``,
    ``{"kind": "atoms", "values": [...], "weights": [...]}`` (diagonal with
    the given proportions) or ``{"kind": "matrix", "data": [[...]]}``; with
    ``"rotate": true`` it is conjugated by a seeded random orthogonal matrix.
    ``mode`` ``"wigner"`` takes ``M`` from the scalar equation, ``"general"``
    solves the matrix equation with the sample's variance profile.
    """

    seed: int
    N: List[int]
    trials: int = 1
    tau: float = 0.1
    ensemble: dict = field(default_factory=lambda: {"kind": "gaussian", "complex": False})
    A: dict = field(default_factory=lambda: {"kind": "zero"})
    z: List[dict] = field(default_factory=lambda: [{"E": 0.0, "eta": 1.0}])
    mode: str = "wigner"
    n_vectors: int = 50
    B: List[str] = field(default_factory=lambda: ["identity", "orthogonal", "projector"])
    statistics: List[str] = field(default_factory=lambda: ["avg", "iso"])
    verdicts: Optional[List[dict]] = None
    res_tol: float = 1e-10

    def __post_init__(self):
        if self.seed is None:
            raise ValidationError("a master seed is required")
        if not isinstance(self.seed, int) or isinstance(self.seed, bool) or not 0 <= self.seed < 2**64:
            raise ValidationError(f"seed must be an unsigned 64-bit integer, got {self.seed!r}")
        if not self.N:
            raise ValidationError("N grid is empty")
        self.N = [check_positive_int(n, "N", minimum=2) for n in self.N]
        if sorted(set(self.N)) != self.N:
            raise ValidationError("N grid must be strictly increasing")
        check_positive_int(self.trials, "trials")
        check_positive_int(self.n_vectors, "n_vectors")
        if self.mode not in ("wigner", "general"):
            raise ValidationError(f"mode must be 'wigner' or 'general', got {self.mode!r}")
        bad = set(self.statistics) - set(STAT_GROUPS)
        if bad:
            raise ValidationError(f"unknown statistics {sorted(bad)}; expected a subset of {STAT_GROUPS}")
        for b in self.B:
            if b not in ("identity", "orthogonal", "projector"):
                raise ValidationError(f"unknown test matrix {b!r}")
        if "identities" in self.statistics and self.mode != "wigner":
            raise ValidationError("identity checks need mode 'wigner'")
        EntryDistribution.from_dict(self.ensemble)
        if not self.z:
            raise ValidationError("z grid is empty")
        for n in self.N:
            dom = SpectralDomain(self.tau, n)
            for zs in self.z:
                zc = self.z_value(zs, n)
                if zc not in dom:
                    raise ValidationError(f"z = {zc} lies outside the spectral domain for N = {n}, tau = {self.tau}")
        if self.verdicts is None:
            self.verdicts = [
                {k: v for k, v in r.items() if k != "needs"}
                for r in DEFAULT_VERDICTS
                if r["needs"] in self.statistics and (r["rule"] != "domination" or len(self.N) >= 3)
            ]

    @staticmethod
    def z_value(zs: dict, N: int) -> complex:
        if "eta" in zs:
            eta = float(zs["eta"])
        elif "eta_exponent" in zs:
            eta = float(N) ** float(zs["eta_exponent"])
        else:
            raise ValidationError(f"z entry {zs} needs 'eta' or 'eta_exponent'")
        return complex(float(zs.get("E", 0.0)), eta)

    def to_dict(self) -> dict:
        return {
            "seed": self.seed, "N": list(self.N), "trials": self.trials, "tau": self.tau,
            "ensemble": dict(self.ensemble), "A": dict(self.A), "z": [dict(z) for z in self.z],
            "mode": self.mode, "n_vectors": self.n_vectors, "B": list(self.B),
            "statistics": list(self.statistics), "verdicts": [dict(v) for v in self.verdicts],
            "res_tol": self.res_tol,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        if "seed" not in d:
            raise ValidationError("config must contain a master 'seed'")
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ValidationError(f"unknown config keys {sorted(extra)}")
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        return cls.from_dict(json.loads(text))


def build_A(spec: dict, N: int, seed: int) -> np.ndarray:
    kind = spec.get("kind", "zero")
    if kind == "zero":
        A = np.zeros((N, N))
    elif kind == "atoms":
        vals = np.asarray(spec["values"], dtype=float)
        w = np.asarray(spec.get("weights", np.full(vals.size, 1.0 / vals.size)), dtype=float)
        counts = np.floor(w / w.sum() * N).astype(int)
        counts[-1] += N - counts.sum()
        A = np.diag(np.repeat(vals, counts))
    elif kind == "matrix":
        A = np.asarray(spec["data"], dtype=float)
        if A.shape != (N, N):
            raise ValidationError(f"A matrix has shape {A.shape}, expected {(N, N)}")
    else:
        raise ValidationError(f"unknown A kind {kind!r}")
    if spec.get("rotate", False):
        O = random_orthogonal(N, rng_from_seed(seed, N, 998))
        A = O @ A @ O.T
        A = 0.5 * (A + A.T)
    return A


def random_orthogonal(N: int, rng: np.random.Generator) -> np.ndarray:
    """Haar orthogonal matrix (QR of a Gaussian matrix with sign correction)."""
    Q, R = np.linalg.qr(rng.standard_normal((N, N)))
    return Q * np.sign(np.diagonal(R))


def build_B(kinds: Sequence[str], N: int, seed: int) -> List[np.ndarray]:
    rng = rng_from_seed(seed, N, 999)
    out = []
    for k in kinds:
        if k == "identity":
            out.append(np.eye(N))
        elif k == "orthogonal":
            out.append(random_orthogonal(N, rng))
        else:
            u = rng.standard_normal(N)
            u /= np.linalg.norm(u)
            out.append(np.outer(u, u))
    return out


# --------------------------------------------------------------------------- report


@dataclass
class ExperimentReport:
    config: dict
    rows: List[list]
    summary: List[dict]
    fits: List[dict]
    domination: List[dict]
    verdicts: List[dict]
    failures: List[dict]

    @property
    def complete(self) -> bool:
        return not self.failures

    @property
    def passed(self) -> bool:
        return all(v["pass"] for v in self.verdicts)

    def verdict(self, name: str) -> dict:
        for v in self.verdicts:
            if v["name"] == name:
                return v
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {
            "schema": SCHEMA, "header": HEADER_NOTE, "config": self.config, "complete": self.complete,
            "rows": self.rows, "summary": self.summary, "fits": self.fits, "domination": self.domination,
            "verdicts": self.verdicts, "failures": self.failures,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentReport":
        if d.get("schema") != SCHEMA:
            raise ValidationError(f"unsupported report schema {d.get('schema')!r}")
        return cls(d["config"], d["rows"], d["summary"], d["fits"], d["domination"], d["verdicts"], d["failures"])

    @classmethod
    def from_json(cls, text: str) -> "ExperimentReport":
        return cls.from_dict(json.loads(text))

    def __eq__(self, other):
        return isinstance(other, ExperimentReport) and self.to_dict() == other.to_dict()

    def to_csv(self) -> str:
        """Flat table ``N,eta,E,trial,stat_name,value``."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["N", "eta", "E", "trial", "stat_name", "value"])
        for N, zi, eta, E, trial, name, value in self.rows:
            w.writerow([N, repr(eta), repr(E), trial, name, repr(value)])
        return buf.getvalue()

    def summary_csv(self) -> str:
        """Plot data: median and 95th percentile per ``(N, z, statistic)``."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["N", "z_index", "eta", "E", "stat_name", "count", "median", "p95"])
        for s in self.summary:
            w.writerow([s["N"], s["z_index"], repr(s["eta"]), repr(s["E"]), s["stat"], s["count"],
                        repr(s["median"]), repr(s["p95"])])
        return buf.getvalue()

    def stat_values(self, pattern: str, N: Optional[int] = None, z_index: Optional[int] = None):
        return [r[6] for r in self.rows
                if fnmatch.fnmatchcase(r[5], pattern) and (N is None or r[0] == N)
                and (z_index is None or r[1] == z_index)]


# --------------------------------------------------------------------------- experiment


class _Context:
    """Per-``N`` deterministic inputs shared read-only by all trials."""

    def __init__(self, cfg: ExperimentConfig, N: int):
        self.N = N
        self.A = build_A(cfg.A, N, cfg.seed)
        self.nu = spectral_measure_of(self.A)
        self.dist = EntryDistribution.from_dict(cfg.ensemble)
        self.Bs = build_B(cfg.B, N, cfg.seed)
        self.zs = [cfg.z_value(z, N) for z in cfg.z]
        self.profile = wigner_profile(N, self.dist)
        self.pi_profile = VarianceProfile.wigner(N) if cfg.mode == "wigner" else self.profile
        self.M, self.m, self.im_norms, self.errors = [], [], [], []
        for z in self.zs:
            try:
                m = solve_scalar(self.nu, z).m
                M = m_matrix(self.A, m, z)
                if cfg.mode == "general":
                    opts = MdeOptions(res_tol=cfg.res_tol, method="anderson")
                    M = solve_mde(self.A, self.profile, z, opts, M0=M).M
                    m = complex(np.trace(M) / N)
                self.M.append(M)
                self.m.append(m)
                self.im_norms.append(imag_norm(M))
                self.errors.append(None)
            except MdelabError as exc:
                self.M.append(None)
                self.m.append(None)
                self.im_norms.append(None)
                self.errors.append(f"{type(exc).__name__}: {exc}")


def _trial(cfg: ExperimentConfig, ctx: _Context, trial: int):
    N = ctx.N
    rows, failures = [], []
    try:
        sample = sample_wigner(N, ctx.dist, derive_seed(cfg.seed, N, trial), A=ctx.A)
        bundle = eigendecompose(sample)
    except (MdelabError, np.linalg.LinAlgError) as exc:
        return rows, [{"N": N, "trial": trial, "z_index": None, "error": f"{type(exc).__name__}: {exc}"}]
    k = cfg.n_vectors
    V = probe_vectors(N, rng_from_seed(cfg.seed, N, trial, 1), k, sample.profile)
    # pairs: (v_a, v_a) for even a, (v_a, v_{a+1}) for odd a
    idx = np.arange(V.shape[1])
    partner = np.where(idx % 2 == 0, idx, (idx + 1) % V.shape[1])
    Wm = V[:, partner]
    stats_on = set(cfg.statistics)
    for zi, z in enumerate(ctx.zs):
        if ctx.M[zi] is None:
            failures.append({"N": N, "trial": trial, "z_index": zi, "error": ctx.errors[zi]})
            continue
        try:
            rows.extend(_cell(cfg, ctx, sample, bundle, zi, z, V, Wm, stats_on, trial))
        except (MdelabError, np.linalg.LinAlgError, FloatingPointError) as exc:
            failures.append({"N": N, "trial": trial, "z_index": zi, "error": f"{type(exc).__name__}: {exc}"})
    return rows, failures


def _cell(cfg, ctx, sample, bundle, zi, z, V, Wm, stats_on, trial):
    N, eta, E = ctx.N, z.imag, z.real
    M, m = ctx.M[zi], ctx.m[zi]
    out = []

    def put(name, value):
        value = float(value)
        if not math.isfinite(value) or value < 0:
            raise FloatingPointError(f"statistic {name} = {value} is not finite and nonnegative")
        out.append([N, zi, eta, E, trial, name, value])

    g = trace_g(bundle, z)
    inv_Neta = 1.0 / (N * eta)
    psi = math.sqrt(m.imag / (N * eta)) + inv_Neta
    g_forms = _pair_forms(bundle, z, V, Wm)
    iso_pairs = np.abs(g_forms - np.einsum("ia,ia->a", V.conj(), M @ Wm))
    iso = float(np.max(iso_pairs))
    if "avg" in stats_on:
        avg = averaged_error(g, m)
        put("avg_err", avg)
        put("inv_Neta", inv_Neta)
        put("avg_ratio", avg / inv_Neta)
    if "iso" in stats_on:
        put("iso_err", iso)
        put("psi", psi)
        put("iso_ratio", iso / psi)
        for a, e in enumerate(iso_pairs):
            put(f"iso_ratio_p{a:02d}", e / psi)
    dense = stats_on & {"pi", "decomposition", "q", "identities"}
    if not dense:
        return out
    G = bundle.resolvent(z)
    H = np.asarray(sample.H)
    A = ctx.A
    budget = make_budget(clip_phi(iso, N, cfg.tau), M, N, eta, ctx.im_norms[zi])
    for key in ("phi", "zeta", "zeta_tilde", "h_phi", "psi", "im_m", "im_M_norm"):
        put(f"budget_{key}", getattr(budget, key))
    phi, zeta, zt = budget.phi, budget.zeta, budget.zeta_tilde
    if "pi" in stats_on:
        P = pi_residual(A, ctx.pi_profile, G, z)
        pi_pairs = np.abs(np.einsum("ia,ia->a", V.conj(), P @ Wm))
        iso_scale = (1 + phi) ** 3 * zeta
        put("pi_iso", np.max(pi_pairs))
        put("pi_iso_ratio", np.max(pi_pairs) / iso_scale)
        for a, e in enumerate(pi_pairs):
            put(f"pi_iso_ratio_p{a:02d}", e / iso_scale)
        for bi, B in enumerate(ctx.Bs):
            avg = abs(np.sum(B * P.T)) / N
            put(f"pi_avg_B{bi}", avg)
            put(f"pi_avg_ratio_B{bi}", avg / ((1 + phi) ** 6 * zeta**2))
    if "decomposition" in stats_on:
        prof = sample.profile
        J, K, D = _jkd_matrices(G, H, prof)
        P = pi_residual(A, prof, G, z)

        def forms(X):
            return np.einsum("ia,ia->a", V.conj(), X @ Wm)

        Jf, Df, Pf = forms(J), forms(D), forms(P)
        put("recomp_err", np.max(np.abs(Pf - (Df + Jf))))
        put("J_ratio", np.max(np.abs(Jf)) / ((1 + phi) * zeta))
        put("D_ratio", np.max(np.abs(Df)) / zt)
    if "q" in stats_on:
        for bi, B in enumerate(ctx.Bs):
            Q = q_matrix(G, H, B, sample.profile)
            q_pairs = np.abs(np.einsum("ia,ia->a", V.conj(), Q @ Wm)) / ((1 + phi) ** 4 * zeta**3)
            put(f"q_ratio_B{bi}", np.max(q_pairs))
            for a, e in enumerate(q_pairs):
                put(f"q_ratio_B{bi}_p{a:02d}", e)
    if "identities" in stats_on:
        rep = identity_checks(G, A, z, u=m)
        put("id_matrix_res", rep.matrix_residual)
        put("id_scalar_res", rep.scalar_residual)
    return out


def _summarise(cfg, rows):
    groups: Dict[tuple, list] = {}
    for N, zi, eta, E, trial, name, value in rows:
        groups.setdefault((N, zi, name), []).append((eta, E, value))
    summary = []
    for (N, zi, name), vals in sorted(groups.items()):
        v = np.array([x[2] for x in vals])
        summary.append({"N": N, "z_index": zi, "eta": vals[0][0], "E": vals[0][1], "stat": name,
                        "count": int(v.size), "median": float(np.median(v)),
                        "p95": float(np.percentile(v, 95))})
    fits = []
    if len(cfg.N) >= 2:
        names = sorted({r[5] for r in rows})
        for zi in range(len(cfg.z)):
            for name in names:
                meds = [s["median"] for s in summary if s["z_index"] == zi and s["stat"] == name]
                Ns = [s["N"] for s in summary if s["z_index"] == zi and s["stat"] == name]
                if len(Ns) >= 2 and all(x > 0 for x in meds):
                    slope, se = fit_loglog(Ns, meds)
                    fits.append({"z_index": zi, "stat": name, "slope": slope, "stderr": se})
    return summary, fits


def _evaluate(cfg, rows, fits):
    verdicts, dom_out = [], []
    for rule in cfg.verdicts:
        name, kind = rule["name"], rule["rule"]
        rec = {"name": name, "rule": kind}
        if kind == "fraction":
            p, need = float(rule["exponent"]), float(rule["min_fraction"])
            cells = [r for r in rows if fnmatch.fnmatchcase(r[5], rule["stat"])]
            ok = [r[6] <= float(r[0]) ** p for r in cells]
            frac = float(np.mean(ok)) if ok else float("nan")
            rec.update(stat=rule["stat"], threshold=f"N^{p:g}", min_fraction=need, value=frac,
                       cells=len(ok), **{"pass": bool(ok) and frac >= need})
        elif kind == "max":
            thr = float(rule["threshold"])
            vals = [r[6] for r in rows if fnmatch.fnmatchcase(r[5], rule["stat"])]
            worst = max(vals) if vals else float("nan")
            rec.update(stat=rule["stat"], threshold=thr, value=worst, cells=len(vals),
                       **{"pass": bool(vals) and worst <= thr})
        elif kind == "slope":
            target, tol = float(rule["target"]), float(rule["tol"])
            zsel = rule.get("z_index")
            sel = [f for f in fits if f["stat"] == rule["stat"] and (zsel is None or f["z_index"] == zsel)]
            slopes = [f["slope"] for f in sel]
            rec.update(stat=rule["stat"], threshold=f"{target:g} +- {tol:g}", value=slopes,
                       **{"pass": bool(slopes) and all(abs(s - target) <= tol for s in slopes)})
        elif kind == "domination":
            eps = float(rule.get("eps", 0.1))
            res_all = []
            for zi in range(len(cfg.z)):
                X, Y = [], []
                for N in cfg.N:
                    xs = {r[4]: r[6] for r in rows if r[0] == N and r[1] == zi and r[5] == rule["x"]}
                    ys = {r[4]: r[6] for r in rows if r[0] == N and r[1] == zi and r[5] == rule["y"]}
                    common = sorted(set(xs) & set(ys))
                    X.append([xs[t] for t in common])
                    Y.append([ys[t] for t in common])
                try:
                    eps_list = sorted(set(DEFAULT_EPSILONS) | {eps})
                    dres = domination_test(DominationSample(cfg.N, X, Y, eps_list, f"{rule['x']}/{rule['y']}"))
                    dom_out.append({"name": name, "z_index": zi, **dres.as_dict()})
                    res_all.append(dres.verdicts[eps])
                except ValidationError as exc:
                    dom_out.append({"name": name, "z_index": zi, "error": str(exc)})
                    res_all.append(False)
            rec.update(stat=f"{rule['x']}/{rule['y']}", threshold=f"eps={eps:g}, limit={EXCEEDANCE_LIMIT:g}",
                       value=res_all, **{"pass": bool(res_all) and all(res_all)})
        else:
            raise ValidationError(f"unknown verdict rule {kind!r}")
        verdicts.append(rec)
    return verdicts, dom_out


def run_local_law_experiment(config, threads: Optional[int] = None) -> ExperimentReport:
    """Sample, decompose and evaluate every ``(N, trial, z)`` cell of ``config``.

    Failures of individual cells are recorded and do not stop the run.  The
    result depends only on the configuration (including its master seed).
    """
    cfg = config if isinstance(config, ExperimentConfig) else ExperimentConfig.from_dict(config)
    rows, failures = [], []
    for N in cfg.N:
        ctx = _Context(cfg, N)
        if threads is None or threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                results = list(pool.map(lambda t: _trial(cfg, ctx, t), range(cfg.trials)))
        else:
            results = [_trial(cfg, ctx, t) for t in range(cfg.trials)]
        for r, f in results:
            rows.extend(r)
            failures.extend(f)
    rows.sort(key=lambda r: (r[0], r[1], r[4]))
    summary, fits = _summarise(cfg, rows)
    verdicts, dom = _evaluate(cfg, rows, fits)
    return ExperimentReport(cfg.to_dict(), rows, summary, fits, dom, verdicts, failures)
