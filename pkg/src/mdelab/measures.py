"""Atomic measures, their Stieltjes transforms and the spectral domain.

All objects here are immutable after construction, so they can be shared
read-only between workers.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from ._validation import as_complex_z, check_hermitian, check_positive_int
from .exceptions import EigensolverError, ValidationError

#: atoms closer than this are merged (eigensolvers split exact degeneracies)
MERGE_TOL = 1e-12
#: tolerance used by ``AtomicMeasure.__eq__``
EQUALITY_TOL = 1e-10
PROBABILITY_TOL = 1e-12


@dataclass(frozen=True)
class SpectralPoint:
    """Spectral parameter ``z = E + i*eta`` with ``eta > 0``."""

    E: float
    eta: float

    def __post_init__(self):
        if not np.isfinite(self.E) or not np.isfinite(self.eta):
            raise ValidationError(f"non-finite spectral point ({self.E}, {self.eta})")
        if not self.eta > 0:
            raise ValidationError(f"eta must be > 0, got {self.eta}")
        object.__setattr__(self, "E", float(self.E))
        object.__setattr__(self, "eta", float(self.eta))

    @classmethod
    def from_complex(cls, z):
        z = complex(z)
        return cls(z.real, z.imag)

    @property
    def z(self) -> complex:
        return complex(self.E, self.eta)

    def __complex__(self):
        return self.z


@dataclass(frozen=True)
class SpectralDomain:
    """The domain ``|E| <= 1/tau, N^(-1+tau) <= eta <= 1/tau``."""

    tau: float
    N: int

    def __post_init__(self):
        if not 0 < self.tau < 1:
            raise ValidationError(f"tau must lie in (0, 1), got {self.tau}")
        check_positive_int(self.N, "N")

    @property
    def eta_min(self) -> float:
        return float(self.N) ** (-1.0 + self.tau)

    @property
    def eta_max(self) -> float:
        return 1.0 / self.tau

    def __contains__(self, z) -> bool:
        z = as_complex_z(z)
        return abs(z.real) <= 1.0 / self.tau and self.eta_min <= z.imag <= self.eta_max


def in_domain(z, dom: SpectralDomain) -> bool:
    return z in dom


class AtomicMeasure:
    """Finite positive measure ``sum_k w_k delta_{x_k}``.

    Atoms are stored sorted by location; atoms within ``MERGE_TOL`` of their
    neighbour are merged and their weights summed.

    Parameters
    ----------
    locations : array_like of float
    weights : array_like of float, optional
        Nonnegative weights. Defaults to uniform weights ``1/len(locations)``.
    """

    __slots__ = ("_locations", "_weights")

    def __init__(self, locations, weights=None):
        x = np.atleast_1d(np.asarray(locations, dtype=float))
        if x.ndim != 1 or x.size == 0:
            raise ValidationError("an atomic measure needs at least one atom")
        if weights is None:
            w = np.full(x.size, 1.0 / x.size)
        else:
            w = np.atleast_1d(np.asarray(weights, dtype=float))
        if w.shape != x.shape:
            raise ValidationError(f"{x.size} locations but {w.size} weights")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(w))):
            raise ValidationError("atoms must be finite")
        if np.any(w < 0):
            raise ValidationError("atom weights must be nonnegative")

        order = np.argsort(x, kind="stable")
        x, w = x[order], w[order]
        # cluster consecutive atoms whose gap is below the merge tolerance
        starts = np.concatenate(([0], np.nonzero(np.diff(x) > MERGE_TOL)[0] + 1))
        wsum = np.add.reduceat(w, starts)
        xsum = np.add.reduceat(x * w, starts)
        with np.errstate(invalid="ignore", divide="ignore"):
            xm = np.where(wsum > 0, xsum / np.where(wsum > 0, wsum, 1.0), x[starts])
        xm.setflags(write=False)
        wsum.setflags(write=False)
        self._locations = xm
        self._weights = wsum

    @classmethod
    def from_atoms(cls, atoms):
        """Build from ``[(location, weight), ...]``."""
        atoms = np.asarray(atoms, dtype=float).reshape(-1, 2)
        return cls(atoms[:, 0], atoms[:, 1])

    @classmethod
    def dirac(cls, a=0.0):
        return cls([a], [1.0])

    @property
    def locations(self) -> np.ndarray:
        return self._locations

    @property
    def weights(self) -> np.ndarray:
        return self._weights

    @property
    def atoms(self):
        return list(zip(self._locations.tolist(), self._weights.tolist()))

    @property
    def mass(self) -> float:
        return float(self._weights.sum())

    @property
    def is_probability(self) -> bool:
        return abs(self.mass - 1.0) <= PROBABILITY_TOL

    @property
    def support_hull(self):
        """Smallest closed interval containing the support."""
        return float(self._locations[0]), float(self._locations[-1])

    def __len__(self):
        return self._locations.size

    def __repr__(self):
        if len(self) <= 6:
            body = ", ".join(f"{w:.4g}@{x:.4g}" for x, w in self.atoms)
        else:
            body = f"{len(self)} atoms on [{self._locations[0]:.4g}, {self._locations[-1]:.4g}]"
        return f"AtomicMeasure({body})"

    def __eq__(self, other):
        if not isinstance(other, AtomicMeasure):
            return NotImplemented
        return (
            len(self) == len(other)
            and np.allclose(self._locations, other._locations, rtol=0, atol=EQUALITY_TOL)
            and np.allclose(self._weights, other._weights, rtol=0, atol=EQUALITY_TOL)
        )

    __hash__ = None

    def shift(self, c: float) -> "AtomicMeasure":
        return AtomicMeasure(self._locations + c, self._weights)

    def moment(self, k: int) -> float:
        return float(np.sum(self._weights * self._locations**k))

    def to_json(self) -> str:
        return json.dumps({"atoms": [[x, w] for x, w in self.atoms]})

    @classmethod
    def from_json(cls, text: str) -> "AtomicMeasure":
        data = json.loads(text)
        if "atoms" not in data:
            raise ValidationError("measure JSON must contain an 'atoms' list")
        return cls.from_atoms(data["atoms"])


def stieltjes(mu: AtomicMeasure, z):
    """Stieltjes transform ``sum_k w_k / (x_k - z)``.

    ``z`` may be a scalar (complex or ``SpectralPoint``) or an array of
    complex numbers in the upper half-plane; the output has the same shape.
    """
    if isinstance(z, SpectralPoint):
        z = z.z
    zz = np.asarray(z, dtype=complex)
    if np.any(zz.imag <= 0):
        raise ValidationError("Stieltjes transform requires Im z > 0")
    out = (mu.weights / (mu.locations - zz[..., None])).sum(axis=-1)
    return complex(out) if out.ndim == 0 else out


def spectral_measure_of(A) -> AtomicMeasure:
    """Empirical eigenvalue measure ``N^-1 sum_k delta_{lambda_k(A)}``."""
    A = check_hermitian(A, "A")
    try:
        lam = np.linalg.eigvalsh(A)
    except np.linalg.LinAlgError as exc:
        raise EigensolverError(f"eigvalsh failed: {exc}") from exc
    return AtomicMeasure(lam)
