import math

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, strategies as st
from scipy import integrate

from mdelab.cumulant import (
    CSV_HEADER,
    CallableFunction,
    CenteredExponentialLaw,
    ExponentialFunction,
    FiniteLaw,
    GaussianLaw,
    PolynomialFunction,
    ResolventFunction,
    centered_skew,
    cumulants_to_moments,
    default_t,
    expansion_check,
    function_from_name,
    law_from_name,
    lemma_a1_check,
    moments_to_cumulants,
    rademacher,
    remainder_bound,
    reports_to_csv,
    run_suite,
)
from mdelab.ensemble import EntryDistribution
from mdelab.exceptions import ValidationError

T = sp.Symbol("t")


def sympy_cumulants(mgf, n):
    """Cumulants from the Taylor coefficients of log E[e^{th}]."""
    series = sp.series(sp.log(mgf), T, 0, n + 1).removeO()
    return [float(sp.factorial(k) * series.coeff(T, k)) for k in range(1, n + 1)]


def finite_mgf(values, probs):
    return sum(p * sp.exp(T * v) for v, p in zip(values, probs))


SQRT2 = sp.sqrt(2)
ORACLES = {
    "gaussian": sp.exp(T**2 / 2),
    "rademacher": finite_mgf([-1, 1], [sp.Rational(1, 2)] * 2),
    "skew": finite_mgf([SQRT2, -1 / SQRT2], [sp.Rational(1, 3), sp.Rational(2, 3)]),
    "exponential": sp.exp(-T) / (1 - T),
}


def moment_scale(m):
    """Rounding in the recursion is relative to the largest moment involved."""
    return max(1.0, float(np.max(np.abs(m))))


def test_gaussian_moments_to_cumulants():
    c = moments_to_cumulants([0, 1, 0, 3, 0, 15])
    assert np.allclose(c, [0, 1, 0, 0, 0, 0], rtol=0, atol=1e-12)


def test_rademacher_entry_law_cumulants():
    N = 100
    c = rademacher(1 / math.sqrt(N)).cumulants(4)
    assert c[1] == pytest.approx(1 / N, abs=1e-15)
    assert c[2] == 0
    assert c[3] == pytest.approx(-2 / N**2, abs=1e-15)


def test_exponential_cumulants():
    c = CenteredExponentialLaw(1.0).cumulants(8)
    assert c[0] == 0
    assert np.allclose(c[1:4], [1, 2, 6], rtol=0, atol=1e-12)
    assert np.allclose(c[1:], [math.factorial(k - 1) for k in range(2, 9)], rtol=1e-12, atol=0)


@pytest.mark.parametrize("name", sorted(ORACLES))
def test_cumulant_tables_match_symbolic_oracle(name):
    n = 8
    ref = sympy_cumulants(ORACLES[name], n)
    got = law_from_name(name).cumulants(n)
    assert np.allclose(got, ref, rtol=1e-12, atol=1e-12)


def test_all_zero_round_trip():
    assert np.all(cumulants_to_moments(np.zeros(6)) == 0)


def test_gaussian_cumulants_to_moments():
    assert np.allclose(cumulants_to_moments([0, 1, 0, 0, 0, 0]), [0, 1, 0, 3, 0, 15], rtol=0, atol=1e-12)


def test_round_trip_random_vectors():
    rng = np.random.default_rng(0)
    for _ in range(100):
        n = int(rng.integers(1, 10))
        c = rng.uniform(-1, 1, n)
        if n >= 2:
            c[1] = abs(c[1]) + c[0] ** 2  # keep the variance nonnegative
        m = cumulants_to_moments(c)
        c2 = moments_to_cumulants(m)
        assert np.max(np.abs(c2 - c)) <= 1e-12 * moment_scale(m)


@given(st.lists(st.floats(-1, 1), min_size=2, max_size=8), st.floats(-3, 3))
def test_homogeneity(c, scale):
    c = np.array(c)
    c[1] = abs(c[1])
    m = cumulants_to_moments(c)
    k = np.arange(1, len(c) + 1)
    ms = m * scale**k
    scaled = moments_to_cumulants(ms)
    assert np.max(np.abs(scaled - scale**k * c)) <= 1e-12 * moment_scale(ms)


@given(st.floats(0.01, 3))
def test_homogeneity_of_laws(scale):
    k = np.arange(1, 9)
    for law in (rademacher(), centered_skew(), GaussianLaw(1.0), CenteredExponentialLaw(1.0)):
        scaled = law.scaled(scale)
        a = scaled.cumulants(8)
        b = scale**k * law.cumulants(8)
        assert np.max(np.abs(a - b)) <= 1e-12 * moment_scale(scaled.moments(8))


def test_negative_variance_rejected():
    with pytest.raises(ValidationError):
        moments_to_cumulants([1.0, 0.5])
    with pytest.raises(ValidationError):
        moments_to_cumulants(np.zeros(17))


def test_quadrature_expectations():
    g = GaussianLaw(0.7)
    for k in range(1, 11):
        exact = 0.0 if k % 2 else 0.7**k * math.prod(range(k - 1, 0, -2))
        assert g.expect(lambda x: x**k) == pytest.approx(exact, rel=1e-12, abs=1e-15)
    e = CenteredExponentialLaw(1.0)
    for k in range(1, 9):
        ref, _ = integrate.quad(lambda x: (x - 1) ** k * math.exp(-x), 0, np.inf)
        assert e.expect(lambda x: x**k) == pytest.approx(ref, rel=1e-10)
    ref, _ = integrate.quad(lambda x: math.cos(x - 1) * math.exp(-x), 0, np.inf)
    assert e.expect(np.cos) == pytest.approx(ref, rel=1e-10)


def test_tail_and_abs_moments():
    g = GaussianLaw(1.0)
    ref, _ = integrate.quad(lambda x: 2 * x**4 * math.exp(-x * x / 2) / math.sqrt(2 * math.pi), 0.5, np.inf)
    assert g.tail_moment(4, 0.5) == pytest.approx(ref, rel=1e-10)
    assert g.abs_moment(3) == pytest.approx(2 * math.sqrt(2 / math.pi), rel=1e-12)
    e = CenteredExponentialLaw(1.0)
    ref, _ = integrate.quad(lambda x: abs(x - 1) ** 3 * math.exp(-x) * (abs(x - 1) > 0.4), 0, 60, points=[0.6, 1.4])
    assert e.tail_moment(3, 0.4) == pytest.approx(ref, rel=1e-8)
    r = rademacher(0.3)
    assert r.tail_moment(2, 0.2) == pytest.approx(0.09) and r.tail_moment(2, 0.3) == 0


def test_finite_law_validation():
    with pytest.raises(ValidationError):
        FiniteLaw([0, 1], [0.5, 0.6])
    with pytest.raises(ValidationError):
        law_from_name("cauchy")


def test_expansion_linear_gaussian():
    sigma = 0.4
    rep = expansion_check(GaussianLaw(sigma), PolynomialFunction([0, 1]), ell=1)
    assert abs(rep.remainder) <= 1e-15
    assert rep.lhs == pytest.approx(sigma**2, abs=1e-15)
    assert rep.passed


@pytest.mark.parametrize("law", ["gaussian", "rademacher", "skew", "exponential"])
@pytest.mark.parametrize("ell", [1, 2, 3, 4, 5])
def test_polynomial_remainder_vanishes(law, ell):
    rng = np.random.default_rng(ell)
    L = law_from_name(law, 0.3)
    for deg in range(ell + 1):
        f = PolynomialFunction(rng.uniform(-1, 1, deg + 1))
        rep = expansion_check(L, f, ell)
        assert abs(rep.remainder) <= 1e-12
        assert rep.passed


def test_exp_rademacher_two_point_enumeration():
    N = 100
    s = 1 / math.sqrt(N)
    rep = expansion_check(EntryDistribution("rademacher"), ExponentialFunction(), ell=4, t=N**-0.3, N=N)
    # E[h e^h] for h = +-s with probability 1/2
    assert rep.lhs == pytest.approx(s * math.sinh(s), rel=1e-14)
    assert abs(rep.remainder) <= rep.bound
    assert rep.remainder != 0


@pytest.mark.parametrize("law", ["rademacher", "skew"])
@pytest.mark.parametrize("fname", ["exp", "resolvent"])
@pytest.mark.parametrize("ell", [2, 3, 4])
def test_smooth_remainder_within_bound(law, fname, ell):
    N = 100
    rep = expansion_check(law_from_name(law, 1 / math.sqrt(N)), function_from_name(fname), ell, t=default_t(N))
    assert abs(rep.remainder) <= rep.bound


@pytest.mark.parametrize("N", [100, 400, 2500])
@pytest.mark.parametrize("law", ["rademacher", "skew"])
def test_truncation_monotonicity(N, law):
    L = law_from_name(law, 1 / math.sqrt(N))
    f = ExponentialFunction()
    rems = [abs(expansion_check(L, f, ell).remainder) for ell in range(0, 6)]
    assert all(b <= a for a, b in zip(rems, rems[1:]))


def test_derivative_order_unavailable():
    f = CallableFunction([np.sin, np.cos], "sin")
    assert expansion_check(rademacher(0.1), f, 0).passed
    with pytest.raises(ValidationError):
        expansion_check(rademacher(0.1), f, 2)
    with pytest.raises(ValidationError):
        expansion_check(rademacher(0.1), f, -1)
    with pytest.raises(ValidationError):
        expansion_check(EntryDistribution("gaussian"), f, 0)


def test_sup_abs_derivative():
    p = PolynomialFunction([0, -3, 0, 1])  # x^3 - 3x, critical points +-1
    assert p.sup_abs_derivative(0, 1.5)[0] == pytest.approx(2.0)
    r = ResolventFunction(0.5 + 1j)
    grid = np.linspace(-2, 2, 40001)
    assert r.sup_abs_derivative(2, 2.0)[0] == pytest.approx(np.max(np.abs(2 / (grid - r.z) ** 3)), rel=1e-6)
    with pytest.raises(ValidationError):
        ResolventFunction(1.0)


def test_remainder_bound_is_zero_for_low_degree():
    assert remainder_bound(GaussianLaw(0.2), PolynomialFunction([1, 2, 3]), 2, 0.5) == 0


@given(
    st.lists(st.floats(0, 5), min_size=1, max_size=6),
    st.lists(st.floats(0.01, 1), min_size=6, max_size=6),
    st.sampled_from([1, 2]),
    st.sampled_from([1, 2]),
    st.floats(0, 5),
)
def test_lemma_a1(values, weights, a, b, t):
    p = np.array(weights[: len(values)])
    p /= p.sum()
    lhs, rhs = lemma_a1_check(values, p, a, b, t)
    assert lhs <= rhs * (1 + 1e-12) + 1e-300


def test_lemma_a1_grid():
    values, probs = [0.0, 0.5, 1.0, 2.5], [0.4, 0.3, 0.2, 0.1]
    for a in (1, 2):
        for b in (1, 2):
            for t in np.linspace(0, 3, 31):
                lhs, rhs = lemma_a1_check(values, probs, a, b, t)
                assert lhs <= rhs + 1e-15
    with pytest.raises(ValidationError):
        lemma_a1_check([-1.0, 1.0], [0.5, 0.5], 1, 1, 0.0)


def test_default_t():
    assert default_t(100, 0.1) == pytest.approx(100 ** (0.02 - 0.5))


def test_suite_csv():
    reports = run_suite(["gaussian", "skew"], ["poly2", "exp"], [2], N=100)
    text = reports_to_csv(reports)
    lines = text.splitlines()
    assert lines[0] == ",".join(CSV_HEADER)
    assert len(lines) == 5
    assert all(line.endswith("True") for line in lines[1:])
    assert "np." not in text
    with pytest.raises(ValidationError):
        function_from_name("sin")
