"""Moment/cumulant conversion and numerical checks of the cumulant expansion.

The expansion

    E[h f(h)] = sum_{k=0}^{ell} C_{k+1}(h) / k! * E[f^(k)(h)] + R_{ell+1}

is checked as an equality: finite laws are summed exactly and continuous
laws use fixed Gauss quadrature, so ``lhs - rhs`` is the true remainder up to
rounding.

The remainder bound evaluated here has the explicit constant

    |R| <= K * [ (E F(|h|)^2 * E[h^(2 ell + 4) 1(|h| > t)])^(1/2) + E|h|^(ell+2) F(t) ],
    K = (1 + rho (2^(ell+1) - 1)) / (ell + 1)!,

with ``F(s) = sup_{|x|<=s} |f^(ell+1)(x)|`` and
``rho = max_{k<=ell} |C_{k+1}| / E|h|^(k+1)``.  It follows from the integral
form of Taylor's theorem, ``E X^a E X^b <= E X^(a+b)``, Cauchy-Schwarz and
``E X^a E[X^b 1(X>t)] <= E[X^(a+b) 1(X>t)]``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from numpy.polynomial import Polynomial as _NpPoly
from numpy.polynomial.hermite_e import hermegauss
from numpy.polynomial.laguerre import laggauss
from scipy import integrate, special

from .exceptions import ValidationError

MAX_ORDER = 16
QUAD_NODES = 64
DEFAULT_TAU = 0.1
ROUNDING_TOL = 1e-12

_HERM_X, _HERM_W = hermegauss(QUAD_NODES)
_HERM_W = _HERM_W / math.sqrt(2 * math.pi)
_LAG_X, _LAG_W = laggauss(QUAD_NODES)


def _check_order(n):
    if not 1 <= n <= MAX_ORDER:
        raise ValidationError(f"order must lie in [1, {MAX_ORDER}], got {n}")


def moments_to_cumulants(m) -> np.ndarray:
    """Cumulants ``C_1..C_n`` from raw moments ``m_1..m_n``.

    Solves ``m_n = sum_{k=1}^n binom(n-1, k-1) C_k m_{n-k}`` (with ``m_0 = 1``)
    for ``C_n`` one order at a time.
    """
    m = np.asarray(m, dtype=float).ravel()
    _check_order(m.size)
    if m.size >= 2 and m[1] < m[0] ** 2 - 1e-12 * max(1.0, abs(m[1])):
        raise ValidationError(f"moments have negative variance: m2 = {m[1]:g} < m1^2 = {m[0] ** 2:g}")
    mom = np.concatenate(([1.0], m))
    c = np.zeros(m.size + 1)
    for n in range(1, m.size + 1):
        acc = mom[n]
        for k in range(1, n):
            acc -= math.comb(n - 1, k - 1) * c[k] * mom[n - k]
        c[n] = acc
    return c[1:]


def cumulants_to_moments(c) -> np.ndarray:
    """Raw moments ``m_1..m_n`` from cumulants ``C_1..C_n`` (inverse of :func:`moments_to_cumulants`)."""
    c = np.asarray(c, dtype=float).ravel()
    _check_order(c.size)
    if c.size >= 2 and c[1] < -1e-12 * max(1.0, abs(c[1])):
        raise ValidationError(f"C_2 = {c[1]:g} is a negative variance")
    cc = np.concatenate(([0.0], c))
    mom = np.zeros(c.size + 1)
    mom[0] = 1.0
    for n in range(1, c.size + 1):
        mom[n] = sum(math.comb(n - 1, k - 1) * cc[k] * mom[n - k] for k in range(1, n + 1))
    return mom[1:]


# --------------------------------------------------------------------------- laws


class Law:
    """A real scalar law with the expectations needed by the expansion check."""

    name: str = "law"

    def expect(self, g: Callable[[np.ndarray], np.ndarray]):
        raise NotImplementedError

    def moments(self, n: int) -> np.ndarray:
        """Raw moments ``E h^1..E h^n``."""
        raise NotImplementedError

    def cumulants(self, n: int) -> np.ndarray:
        return moments_to_cumulants(self.moments(n))

    def abs_moment(self, p: float) -> float:
        return float(self.expect(lambda x: np.abs(x) ** p))

    def tail_moment(self, p: float, t: float) -> float:
        """``E[|h|^p 1(|h| > t)]``."""
        raise NotImplementedError

    def scaled(self, c: float) -> "Law":
        raise NotImplementedError


class FiniteLaw(Law):
    """Law with finitely many atoms; all expectations are exact sums."""

    def __init__(self, values, probs, name="finite"):
        v = np.asarray(values, dtype=float).ravel()
        p = np.asarray(probs, dtype=float).ravel()
        if v.shape != p.shape or v.size == 0:
            raise ValidationError("values and probabilities must be non-empty and of equal length")
        if np.any(p < 0) or abs(p.sum() - 1) > 1e-12:
            raise ValidationError("probabilities must be nonnegative and sum to 1")
        self.values, self.probs, self.name = v, p, name

    def expect(self, g):
        return np.sum(self.probs * g(self.values))

    def moments(self, n):
        _check_order(n)
        return np.array([np.sum(self.probs * self.values**k) for k in range(1, n + 1)])

    def tail_moment(self, p, t):
        a = np.abs(self.values)
        return float(np.sum(self.probs * np.where(a > t, a**p, 0.0)))

    def scaled(self, c):
        return FiniteLaw(c * self.values, self.probs, self.name)

    def __repr__(self):
        return f"FiniteLaw({self.name}, {self.values.size} atoms)"


class GaussianLaw(Law):
    """Centred normal law with standard deviation ``sigma``."""

    def __init__(self, sigma=1.0, name="gaussian"):
        if sigma < 0:
            raise ValidationError("sigma must be >= 0")
        self.sigma, self.name = float(sigma), name

    def expect(self, g):
        return np.sum(_HERM_W * g(self.sigma * _HERM_X))

    def moments(self, n):
        _check_order(n)
        out = np.zeros(n)
        for k in range(2, n + 1, 2):
            out[k - 1] = self.sigma**k * special.factorial2(k - 1, exact=True)
        return out

    def abs_moment(self, p):
        return self.sigma**p * 2 ** (p / 2) * special.gamma((p + 1) / 2) / math.sqrt(math.pi)

    def tail_moment(self, p, t):
        if self.sigma == 0:
            return 0.0
        x = t * t / (2 * self.sigma**2)
        return float(
            self.sigma**p * 2 ** (p / 2) * special.gamma((p + 1) / 2) * special.gammaincc((p + 1) / 2, x)
            / math.sqrt(math.pi)
        )

    def scaled(self, c):
        return GaussianLaw(abs(c) * self.sigma, self.name)

    def __repr__(self):
        return f"GaussianLaw(sigma={self.sigma:g})"


def _subfactorials(n):
    d = [1, 0]
    for k in range(2, n + 1):
        d.append((k - 1) * (d[-1] + d[-2]))
    return d


class CenteredExponentialLaw(Law):
    """``h = scale * (X - 1)`` with ``X ~ Exp(1)``; cumulants ``C_k = (k-1)! scale^k`` for ``k >= 2``.

    Expectations of general functions use 64-node Gauss-Laguerre quadrature.
    """

    def __init__(self, scale=1.0, name="exponential"):
        if scale <= 0:
            raise ValidationError("scale must be > 0")
        self.scale, self.name = float(scale), name

    def expect(self, g):
        return np.sum(_LAG_W * g(self.scale * (_LAG_X - 1.0)))

    def moments(self, n):
        # E (X - 1)^k is the k-th subfactorial
        _check_order(n)
        d = _subfactorials(n)
        return np.array([self.scale**k * d[k] for k in range(1, n + 1)], dtype=float)

    def _integral(self, g, lo, hi):
        val, _ = integrate.quad(lambda x: g(x) * math.exp(-x), lo, hi, limit=200)
        return val

    def abs_moment(self, p):
        s = self.scale
        return s**p * (self._integral(lambda x: (1 - x) ** p, 0, 1) + self._integral(lambda x: (x - 1) ** p, 1, np.inf))

    def tail_moment(self, p, t):
        s = self.scale
        u = t / s  # |X - 1| > u
        out = self._integral(lambda x: (x - 1) ** p, 1 + u, np.inf)
        if u < 1:
            out += self._integral(lambda x: (1 - x) ** p, 0, 1 - u)
        return s**p * out

    def scaled(self, c):
        if c <= 0:
            raise ValidationError("the centred exponential law is only scaled by c > 0 here")
        return CenteredExponentialLaw(c * self.scale, self.name)

    def __repr__(self):
        return f"CenteredExponentialLaw(scale={self.scale:g})"


def rademacher(scale=1.0) -> FiniteLaw:
    return FiniteLaw([-scale, scale], [0.5, 0.5], "rademacher")


def centered_skew(scale=1.0) -> FiniteLaw:
    """Two-point law ``sqrt(2)`` w.p. 1/3, ``-1/sqrt(2)`` w.p. 2/3: mean 0, variance 1, ``C_3 = 1/sqrt(2)``."""
    return FiniteLaw([scale * math.sqrt(2.0), -scale / math.sqrt(2.0)], [1 / 3, 2 / 3], "skew")


def law_from_name(name: str, scale: float = 1.0) -> Law:
    table = {
        "gaussian": lambda: GaussianLaw(scale),
        "rademacher": lambda: rademacher(scale),
        "skew": lambda: centered_skew(scale),
        "exponential": lambda: CenteredExponentialLaw(scale),
    }
    if name not in table:
        raise ValidationError(f"unknown law {name!r}; expected one of {sorted(table)}")
    return table[name]()


# --------------------------------------------------------------------------- test functions


class SmoothFunction:
    """Function with derivatives up to ``max_order`` and a bound ``sup_{|x|<=s} |f^(k)(x)|``."""

    name = "f"
    max_order = math.inf

    def derivative(self, k: int) -> Callable[[np.ndarray], np.ndarray]:
        raise NotImplementedError

    def __call__(self, x):
        return self.derivative(0)(x)

    def sup_abs_derivative(self, k: int, s):
        """Vectorised ``sup_{|x|<=s} |f^(k)(x)|``."""
        d = self.derivative(k)
        s = np.atleast_1d(np.asarray(s, dtype=float))
        grid = np.linspace(-1.0, 1.0, 4001)
        return np.array([np.max(np.abs(d(si * grid))) for si in s])

    def _need(self, k):
        if k > self.max_order:
            raise ValidationError(f"{self.name} provides derivatives only up to order {self.max_order}, need {k}")


class PolynomialFunction(SmoothFunction):
    def __init__(self, coeffs, name=None):
        self.p = _NpPoly(np.asarray(coeffs, dtype=float))
        self.name = name or f"poly{self.p.degree()}"

    def derivative(self, k):
        return self.p.deriv(k) if k else self.p

    def sup_abs_derivative(self, k, s):
        dk = self.p.deriv(k)
        crit = dk.deriv().roots() if dk.degree() >= 1 else np.array([])
        crit = crit[np.abs(np.imag(crit)) < 1e-12].real
        s = np.atleast_1d(np.asarray(s, dtype=float))
        out = []
        for si in s:
            pts = np.concatenate(([-si, si], crit[np.abs(crit) <= si]))
            out.append(np.max(np.abs(dk(pts))))
        return np.array(out)


class ExponentialFunction(SmoothFunction):
    """``f(x) = exp(a x)``."""

    def __init__(self, a=1.0):
        self.a = float(a)
        self.name = "exp" if self.a == 1 else f"exp({self.a:g}x)"

    def derivative(self, k):
        a = self.a
        return lambda x: a**k * np.exp(a * np.asarray(x, dtype=float))

    def sup_abs_derivative(self, k, s):
        s = np.asarray(s, dtype=float)
        return np.atleast_1d(abs(self.a) ** k * np.exp(abs(self.a) * s))


class ResolventFunction(SmoothFunction):
    """``f(x) = 1 / (x - z)`` with ``Im z != 0``."""

    def __init__(self, z):
        z = complex(z)
        if z.imag == 0:
            raise ValidationError("resolvent test function needs Im z != 0")
        self.z = z
        self.name = f"resolvent({z.real:g}{z.imag:+g}i)"

    def derivative(self, k):
        z, c = self.z, (-1) ** k * math.factorial(k)
        return lambda x: c / (np.asarray(x, dtype=float) - z) ** (k + 1)

    def sup_abs_derivative(self, k, s):
        s = np.atleast_1d(np.asarray(s, dtype=float))
        dx = np.maximum(abs(self.z.real) - s, 0.0)
        dist = np.sqrt(dx**2 + self.z.imag**2)
        return math.factorial(k) / dist ** (k + 1)


class CallableFunction(SmoothFunction):
    """User-supplied ``[f, f', f'', ...]``; the derivative sup is taken on a grid."""

    def __init__(self, derivatives: Sequence[Callable], name="callable"):
        if not derivatives:
            raise ValidationError("need at least f itself")
        self._d = list(derivatives)
        self.max_order = len(self._d) - 1
        self.name = name

    def derivative(self, k):
        self._need(k)
        return self._d[k]


def function_from_name(name: str) -> SmoothFunction:
    if name == "exp":
        return ExponentialFunction(1.0)
    if name.startswith("poly"):
        deg = int(name[4:] or 3)
        return PolynomialFunction(1.0 / np.arange(1, deg + 2), name)
    if name == "resolvent":
        return ResolventFunction(0.5 + 1j)
    raise ValidationError(f"unknown test function {name!r}; expected exp, polyK or resolvent")


# --------------------------------------------------------------------------- expansion check


@dataclass(frozen=True)
class ExpansionReport:
    law: str
    f: str
    ell: int
    t: float
    lhs: complex
    rhs: complex
    remainder: complex
    bound: float

    @property
    def passed(self) -> bool:
        # the bound vanishes for low-degree polynomials, so allow rounding noise
        return abs(self.remainder) <= self.bound + ROUNDING_TOL

    def row(self) -> list:
        def fmt(v):
            v = complex(v)
            return repr(v.real) if v.imag == 0 else repr(v)

        return [self.law, self.f, self.ell, fmt(self.lhs), fmt(self.rhs), fmt(self.remainder), repr(float(self.bound)), self.passed]

    def as_dict(self) -> dict:
        d = asdict(self)
        for k in ("lhs", "rhs", "remainder"):
            v = complex(d[k])
            d[k] = [v.real, v.imag]
        d["pass"] = self.passed
        return d


def default_t(N: float, tau: float = DEFAULT_TAU) -> float:
    """``t = N^(tau/5 - 1/2)``."""
    return float(N) ** (tau / 5 - 0.5)


def remainder_constant(law: Law, ell: int) -> float:
    """Explicit constant ``K`` of the remainder bound (see module docstring)."""
    cum = law.cumulants(ell + 1)
    ratios = [0.0]
    for k in range(ell + 1):
        a = law.abs_moment(k + 1)
        if a > 0:
            ratios.append(abs(cum[k]) / a)
    rho = max(ratios)
    return (1 + rho * (2 ** (ell + 1) - 1)) / math.factorial(ell + 1)


def remainder_bound(law: Law, f: SmoothFunction, ell: int, t: float) -> float:
    f._need(ell + 1)
    K = remainder_constant(law, ell)
    EF2 = float(np.real(law.expect(lambda x: f.sup_abs_derivative(ell + 1, np.abs(x)) ** 2)))
    tail = law.tail_moment(2 * ell + 4, t)
    Ft = float(f.sup_abs_derivative(ell + 1, t)[0])
    return K * (math.sqrt(max(EF2, 0.0) * tail) + law.abs_moment(ell + 2) * Ft)


def expansion_check(law, f: SmoothFunction, ell: int, t: Optional[float] = None, N: Optional[int] = None,
                    tau: float = DEFAULT_TAU) -> ExpansionReport:
    """Evaluate both sides of the cumulant expansion and the remainder bound.

    Parameters
    ----------
    law : Law or EntryDistribution
        An ``EntryDistribution`` is converted to the law of an off-diagonal
        entry at size ``N``.
    f : SmoothFunction
    ell : int
        Truncation order (``ell >= 0``).
    t : float, optional
        Cut-off in the bound; defaults to ``N^(tau/5 - 1/2)``, or 1 when
        ``N`` is not given.
    """
    if hasattr(law, "entry_law"):
        if N is None:
            raise ValidationError("N is required to build an entry law")
        law = law.entry_law(N)
    if not isinstance(ell, (int, np.integer)) or ell < 0 or ell + 1 > MAX_ORDER:
        raise ValidationError(f"ell must be an integer in [0, {MAX_ORDER - 1}]")
    f._need(ell + 1)
    if t is None:
        t = default_t(N, tau) if N is not None else 1.0
    cum = law.cumulants(ell + 1)
    f0 = f.derivative(0)
    lhs = complex(law.expect(lambda x: x * f0(x)))
    rhs = 0j
    for k in range(ell + 1):
        if cum[k] != 0:
            rhs += cum[k] / math.factorial(k) * complex(law.expect(f.derivative(k)))
    return ExpansionReport(
        law=law.name, f=f.name, ell=int(ell), t=float(t), lhs=lhs, rhs=rhs,
        remainder=lhs - rhs, bound=remainder_bound(law, f, ell, t),
    )


def lemma_a1_check(values, probs, a: float, b: float, t: float):
    """Both sides of ``E X^a E[X^b 1(X>t)] <= E[X^(a+b) 1(X>t)]`` for a nonnegative finite law."""
    x = np.asarray(values, dtype=float)
    p = np.asarray(probs, dtype=float)
    if np.any(x < 0):
        raise ValidationError("the inequality is stated for nonnegative X")
    ind = x > t
    lhs = np.sum(p * x**a) * np.sum(p * x**b * ind)
    rhs = np.sum(p * x ** (a + b) * ind)
    return float(lhs), float(rhs)


CSV_HEADER = ["law", "f", "ell", "lhs", "rhs", "remainder", "bound", "pass"]


def reports_to_csv(reports) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in reports:
        w.writerow(r.row())
    return buf.getvalue()


def run_suite(laws: Sequence[str], functions: Sequence[str], ells: Sequence[int], N: int = 100,
              tau: float = DEFAULT_TAU):
    """Expansion checks for every ``(law, f, ell)`` with entry scale ``N^-1/2``."""
    scale = 1 / math.sqrt(N)
    out = []
    for ln in laws:
        law = law_from_name(ln, scale)
        for fn in functions:
            f = function_from_name(fn)
            for ell in ells:
                out.append(expansion_check(law, f, int(ell), t=default_t(N, tau)))
    return out
