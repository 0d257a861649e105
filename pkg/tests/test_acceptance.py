"""Exit criteria, one test per criterion, each logging a PASS/FAIL line.

Run alone with ``pytest -m acceptance -s``; the lines are also collected in
the terminal summary.
"""

import math
import time

import numpy as np
import pytest

from conftest import random_hermitian
from mdelab.cumulant import law_from_name, function_from_name, expansion_check, reports_to_csv, run_suite
from mdelab.ensemble import EntryDistribution, derive_seed, sample_wigner
from mdelab.harness import (
    ExperimentConfig,
    build_A,
    decomposition_diag,
    identity_checks,
    q_matrix,
    run_local_law_experiment,
    wasserstein_to_density,
)
from mdelab.measures import AtomicMeasure
from mdelab.mde import VarianceProfile, max_norm, pi_residual, random_m_plus, solve_mde
from mdelab.resolvent import dense_resolvent, eigendecompose, ward_check
from mdelab.scalar import density, stability_margin

pytestmark = pytest.mark.acceptance

GOLDEN = (math.sqrt(5) - 1) / 2
TWO_ATOMS = {"kind": "atoms", "values": [-0.5, 0.5]}


def _unit(rng, N):
    v = rng.standard_normal(N)
    return v / np.linalg.norm(v)


# --------------------------------------------------------------------------- 1


def test_criterion_01_exact_identities(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(101)
    dist = EntryDistribution("gaussian")
    ward = recomp = 0.0
    N = 200
    A = np.diag(np.repeat([-0.5, 0.5], N // 2))
    prof = VarianceProfile.constant(N)
    for k in range(5):
        s = sample_wigner(N, dist, derive_seed(1, N, k), A=A)
        b = eigendecompose(s)
        for z in (1j, 0.2 + 0.05j, -1.0 + N ** -0.5 * 1j):
            x = _unit(rng, N)
            ward = max(ward, ward_check(b, z, x).rel_error)
            G = b.resolvent(z)
            d = decomposition_diag(G, np.asarray(s.H), A, z, prof, np.eye(N), x, _unit(rng, N))
            recomp = max(recomp, d.recomposition_error)
    N = 300
    A = build_A(dict(TWO_ATOMS, rotate=True), N, 1)
    s = sample_wigner(N, dist, derive_seed(1, N, 0), A=A)
    b = eigendecompose(s)
    ident = 0.0
    for z in (1j, 0.1 + 0.1j, 0.4 + N ** -0.5 * 1j):
        rep = identity_checks(b.resolvent(z), A, z)
        ident = max(ident, rep.matrix_residual, rep.scalar_residual)
    elapsed = time.perf_counter() - t0
    ok = ward <= 1e-10 and recomp <= 1e-12 and ident <= 1e-9 and elapsed < 30
    criterion(1, ok, f"ward {ward:.2e} <= 1e-10, recomposition {recomp:.2e} <= 1e-12, "
                     f"identities {ident:.2e} <= 1e-9, {elapsed:.1f}s < 30s")
    assert ok


# --------------------------------------------------------------------------- 2


def test_criterion_02_mde_solver(criterion):
    t0 = time.perf_counter()
    N = 500
    wig = VarianceProfile.wigner(N)
    M0 = solve_mde(np.zeros((N, N)), wig, 1j).M
    golden_err = float(np.max(np.abs(M0 - 1j * GOLDEN * np.eye(N))))
    A = build_A(dict(TWO_ATOMS, rotate=True), N, 2)
    res = 0.0
    min_eig = math.inf
    for E in np.linspace(-1.4, 1.4, 20):
        z = complex(E, 0.05)
        sol = solve_mde(A, wig, z)
        res = max(res, max_norm(pi_residual(A, wig, sol.M, z)))
        min_eig = min(min_eig, sol.min_imag_eig)
    rng = np.random.default_rng(202)
    z = 0.3 + 0.05j
    base = solve_mde(A, wig, z).M
    spread = max(float(np.max(np.abs(solve_mde(A, wig, z, M0=random_m_plus(N, rng)).M - base))) for _ in range(5))
    elapsed = time.perf_counter() - t0
    ok = golden_err <= 1e-8 and res <= 1e-10 and min_eig >= -1e-9 and spread <= 1e-9 and elapsed < 60
    criterion(2, ok, f"|M - 0.61803i I| {golden_err:.1e}, max residual {res:.1e}, min eig Im M {min_eig:.3f}, "
                     f"restart spread {spread:.1e}, {elapsed:.1f}s < 60s")
    assert ok


# --------------------------------------------------------------------------- 3


def test_criterion_03_scalar_density(criterion):
    semi = AtomicMeasure.from_atoms([[0.0, 1.0]])
    two = AtomicMeasure.from_atoms([[-0.5, 0.5], [0.5, 0.5]])
    rho0 = float(density(semi, [0.0])[0])
    E = np.linspace(-3.5, 3.5, 7001)
    mass_semi = float(np.trapezoid(density(semi, E), E))
    mass_two = float(np.trapezoid(density(two, E), E))
    s_half = stability_margin(two)
    s_one = stability_margin(AtomicMeasure.from_atoms([[-1.0, 0.5], [1.0, 0.5]]))
    ok = (abs(rho0 - 1 / math.pi) <= 1e-3 and abs(mass_semi - 1) <= 0.01 and abs(mass_two - 1) <= 0.01
          and abs(s_half - 4.0) <= 1e-6 and abs(s_one - 1.0) <= 1e-6)
    criterion(3, ok, f"rho(0) - 1/pi = {rho0 - 1 / math.pi:.1e}, masses {mass_semi:.4f} / {mass_two:.4f}, "
                     f"stability {s_half:.8f} and {s_one:.8f}")
    assert ok


# --------------------------------------------------------------------------- 4


def test_criterion_04_free_convolution_law(criterion):
    t0 = time.perf_counter()
    N = 2000
    A = np.diag(np.repeat([-0.5, 0.5], N // 2))
    dist = EntryDistribution("gaussian")
    lam = np.concatenate([np.linalg.eigvalsh(sample_wigner(N, dist, derive_seed(4, N, k), A=A).W)
                          for k in range(10)])
    w1 = wasserstein_to_density(lam, AtomicMeasure.from_atoms([[-0.5, 0.5], [0.5, 0.5]]))
    elapsed = time.perf_counter() - t0
    ok = w1 <= 0.02 and elapsed < 300
    criterion(4, ok, f"W1 = {w1:.2e} <= 0.02, {elapsed:.1f}s < 300s")
    assert ok


# --------------------------------------------------------------------------- 5, 6


@pytest.fixture(scope="module")
def local_law_run():
    cfg = ExperimentConfig(
        seed=56, N=[256, 512, 1024, 2048], trials=20, A=TWO_ATOMS, z=[{"E": 0.0, "eta_exponent": -0.5}],
        statistics=["avg", "iso"], n_vectors=50,
        verdicts=[
            {"name": "avg_slope", "rule": "slope", "stat": "avg_err", "target": -0.5, "tol": 0.2},
            {"name": "avg_domination", "rule": "domination", "x": "avg_err", "y": "inv_Neta", "eps": 0.1},
            {"name": "iso_law", "rule": "fraction", "stat": "iso_ratio_p*", "exponent": 0.1, "min_fraction": 0.95},
            {"name": "iso_slope", "rule": "slope", "stat": "iso_err", "target": -0.25, "tol": 0.15},
        ],
    )
    t0 = time.perf_counter()
    rep = run_local_law_experiment(cfg, threads=1)
    return rep, time.perf_counter() - t0


def test_criterion_05_averaged_local_law(criterion, local_law_run):
    rep, elapsed = local_law_run
    slope, dom = rep.verdict("avg_slope"), rep.verdict("avg_domination")
    ok = rep.complete and slope["pass"] and dom["pass"] and elapsed < 600
    exc = rep.domination[0]["exceedance"]["0.1"]
    criterion(5, ok, f"slope {slope['value'][0]:+.3f} in -0.5 +- 0.2, exceedance at eps=0.1 {exc}, "
                     f"{elapsed:.0f}s < 600s")
    assert ok


def test_criterion_06_isotropic_local_law(criterion, local_law_run):
    rep, _ = local_law_run
    frac, slope = rep.verdict("iso_law"), rep.verdict("iso_slope")
    ok = rep.complete and frac["pass"] and slope["pass"] and frac["cells"] == 4 * 20 * 50
    criterion(6, ok, f"fraction within N^0.1 psi {frac['value']:.4f} >= 0.95 over {frac['cells']} cells, "
                     f"slope {slope['value'][0]:+.3f} in -0.25 +- 0.15")
    assert ok


# --------------------------------------------------------------------------- 7, 8


def _thm_config(kind, rotate):
    return ExperimentConfig(
        seed=78, N=[500, 1000], trials=4, mode="general", ensemble={"kind": kind},
        A=dict(TWO_ATOMS, rotate=rotate), z=[{"E": 0.0, "eta": 1.0}, {"E": 0.3, "eta_exponent": -0.5}],
        statistics=["iso", "pi", "q"], n_vectors=20,
        verdicts=[
            {"name": "pi_iso", "rule": "fraction", "stat": "pi_iso_ratio_p*", "exponent": 0.1, "min_fraction": 0.95},
            {"name": "pi_avg", "rule": "fraction", "stat": "pi_avg_ratio_B?", "exponent": 0.1, "min_fraction": 0.95},
            {"name": "q_bound", "rule": "fraction", "stat": "q_ratio_B?_p*", "exponent": 0.15, "min_fraction": 0.9},
        ],
    )


@pytest.fixture(scope="module")
def theorem_runs():
    return {(kind, rot): run_local_law_experiment(_thm_config(kind, rot), threads=1)
            for kind in ("gaussian", "rademacher", "skew") for rot in (False, True)}


def test_criterion_07_self_consistent_equation(criterion, theorem_runs):
    parts, ok = [], True
    for kind in ("gaussian", "rademacher", "skew"):
        flags = []
        for rot in (False, True):
            rep = theorem_runs[(kind, rot)]
            iso, avg = rep.verdict("pi_iso"), rep.verdict("pi_avg")
            assert avg["cells"] == 2 * 4 * 2 * 3
            flags.append((iso["pass"], avg["pass"]))
            ok &= rep.complete and iso["pass"] and avg["pass"]
            parts.append(f"{kind}{'/rot' if rot else ''} {iso['value']:.3f}/{avg['value']:.3f}")
        ok &= flags[0] == flags[1]
    criterion(7, ok, "iso/avg fractions >= 0.95: " + ", ".join(parts))
    assert ok


def test_criterion_08_q_diagnostic(criterion, theorem_runs):
    rng = np.random.default_rng(808)
    N = 30
    A = np.diag(rng.uniform(-1, 1, N))
    H = random_hermitian(rng, N, scale=1 / math.sqrt(N))
    G = dense_resolvent(H + A, 0.2 + 0.3j)
    s = rng.uniform(0.5, 1.5, (N, N))
    prof = VarianceProfile((s + s.T) / 2)
    B = np.linalg.qr(rng.standard_normal((N, N)))[0]
    naive = np.zeros((N, N), dtype=complex)
    GB = G @ B
    for i in range(N):
        for j in range(N):
            first = GB[i] @ H @ G[:, j] / N
            second = sum(G[i, a] * G[a, j] * sum(prof.s[b, a] * GB[b, b] for b in range(N)) for a in range(N))
            third = sum(GB[i, a] * G[a, j] * sum(prof.s[a, b] * G[b, b] for b in range(N)) for a in range(N))
            naive[i, j] = first + (second + third) / N**2
    formula_err = float(np.max(np.abs(q_matrix(G, H, B, prof) - naive)))
    fracs = [theorem_runs[key].verdict("q_bound") for key in sorted(theorem_runs)]
    ok = formula_err <= 1e-10 and all(f["pass"] for f in fracs)
    criterion(8, ok, f"formula vs naive {formula_err:.1e} <= 1e-10, fractions within N^0.15 "
                     f"min {min(f['value'] for f in fracs):.3f} >= 0.9")
    assert ok


# --------------------------------------------------------------------------- 9


def test_criterion_09_cumulant_suite(criterion):
    n = 8
    oracles = {
        "gaussian": [0, 1, 0, 0, 0, 0, 0, 0],
        # log cosh t
        "rademacher": [0, 1, 0, -2, 0, 16, 0, -272],
        # -t - log(1 - t): (k - 1)! for k >= 2
        "exponential": [0] + [math.factorial(k - 1) for k in range(2, n + 1)],
    }
    table_err = max(float(np.max(np.abs(law_from_name(name).cumulants(n) - np.array(ref, dtype=float))))
                    for name, ref in oracles.items())
    poly = run_suite(["gaussian", "rademacher", "skew", "exponential"], ["poly3", "poly5"], [2, 3, 4, 5], N=100)
    poly_worst = max(abs(r.remainder) for r in poly if int(r.f[4:]) <= r.ell)
    smooth_ok, worst_ratio = True, 0.0
    for law_name in ("rademacher", "skew"):
        law = law_from_name(law_name, 1 / math.sqrt(100))
        for fname in ("exp", "resolvent"):
            for ell in (2, 3, 4):
                r = expansion_check(law, function_from_name(fname), ell, t=100 ** (0.1 / 5 - 0.5))
                smooth_ok &= r.passed and r.bound > 0
                worst_ratio = max(worst_ratio, abs(r.remainder) / r.bound)
    ok = table_err <= 1e-12 and poly_worst <= 1e-12 and smooth_ok
    criterion(9, ok, f"cumulant tables {table_err:.1e} <= 1e-12, polynomial remainder {poly_worst:.1e} <= 1e-12, "
                     f"smooth remainder / bound at most {worst_ratio:.2e}")
    assert ok


# --------------------------------------------------------------------------- 10


def test_criterion_10_determinism(criterion, theorem_runs):
    cfg = _thm_config("gaussian", False)
    first = theorem_runs[("gaussian", False)]
    again = run_local_law_experiment(cfg, threads=2)
    same_report = first.to_csv() == again.to_csv() and first.summary_csv() == again.summary_csv()
    suite = lambda: reports_to_csv(run_suite(["gaussian", "skew"], ["exp", "poly3"], [2, 3], N=100))  # noqa: E731
    same_suite = suite() == suite()
    ok = same_report and same_suite
    criterion(10, ok, f"report CSV identical on rerun: {same_report}, cumulant CSV identical: {same_suite}")
    assert ok
