"""Green function ``G(z) = (W - z)^-1`` from a single eigendecomposition.

After ``W = U diag(lambda) U*`` every quadratic form
``<v, G(z) w> = sum_k conj(<u_k, v>) <u_k, w> / (lambda_k - z)`` costs
``O(N)`` once the projections are known, so many ``z`` per sample are cheap.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._validation import as_complex_z, check_hermitian, check_unit_vector, check_vector
from .exceptions import EigensolverError, PoleError, ValidationError

RESIDUAL_TOL = 1e-8
ORTHO_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class ResolventBundle:
    """Eigenpairs of ``W`` (columns of ``eigenvectors``) plus the matrix itself."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    W: np.ndarray
    source: object = None

    @property
    def N(self) -> int:
        return self.eigenvalues.size

    def _denominators(self, z):
        d = self.eigenvalues - z
        if np.any(d == 0):
            raise PoleError(f"z = {z} is an eigenvalue of W")
        return d

    def resolvent(self, z) -> np.ndarray:
        """Dense ``G(z)``."""
        z = as_complex_z(z)
        U = self.eigenvectors
        return (U / self._denominators(z)) @ U.conj().T

    def project(self, v) -> np.ndarray:
        """``U* v`` (works for a vector or a matrix of column vectors)."""
        return self.eigenvectors.conj().T @ np.asarray(v)


def eigendecompose(W, verify: bool = True) -> ResolventBundle:
    """Eigendecomposition of a Hermitian ``W`` or of a ``SampledMatrix``.

    Diagonal inputs keep their order and get the identity as eigenvectors.
    """
    source = None
    if hasattr(W, "W") and hasattr(W, "H"):
        source, W = W, W.W
    W = check_hermitian(W, "W")
    N = W.shape[0]
    if np.count_nonzero(W - np.diag(np.diagonal(W))) == 0:
        lam = np.real(np.diagonal(W)).astype(float)
        U = np.eye(N, dtype=W.dtype)
    else:
        try:
            lam, U = np.linalg.eigh(W)
        except np.linalg.LinAlgError as exc:
            raise EigensolverError(f"eigh failed: {exc}") from exc
    if verify:
        scale = max(float(np.max(np.abs(lam))), 1.0)
        res = np.linalg.norm(W @ U - U * lam, axis=0)
        if np.max(res) > RESIDUAL_TOL * scale:
            raise EigensolverError(f"eigenpair residual {np.max(res):.3e} exceeds tolerance")
        ortho = np.max(np.abs(U.conj().T @ U - np.eye(N)))
        if ortho > ORTHO_TOL:
            raise EigensolverError(f"eigenvectors not orthonormal (deviation {ortho:.3e})")
    lam.setflags(write=False)
    U.setflags(write=False)
    return ResolventBundle(lam, U, W, source)


def quadform(b: ResolventBundle, z, v, w):
    """``<v, G(z) w>``; ``z`` may be a scalar or an array of spectral parameters."""
    v = check_vector(v, b.N, "v")
    w = check_vector(w, b.N, "w")
    pv = b.project(v)
    pw = b.project(w)
    weights = pv.conj() * pw
    zz = np.asarray(z, dtype=complex) if not hasattr(z, "eta") else np.asarray(as_complex_z(z))
    d = b.eigenvalues - zz[..., None]
    if np.any(d == 0):
        raise PoleError("z hits an eigenvalue of W")
    out = (weights / d).sum(axis=-1)
    return complex(out) if out.ndim == 0 else out


def quadform_matrix(b: ResolventBundle, z, V, Wm) -> np.ndarray:
    """All forms ``<V[:, a], G(z) Wm[:, c]>`` as a matrix."""
    z = as_complex_z(z)
    PV = b.project(V)
    PW = b.project(Wm)
    return PV.conj().T @ (PW / b._denominators(z)[:, None])


def trace_g(b: ResolventBundle, z):
    """``g = N^-1 tr G(z)``; vectorised over ``z``."""
    zz = np.asarray(z, dtype=complex) if not hasattr(z, "eta") else np.asarray(as_complex_z(z))
    d = b.eigenvalues - zz[..., None]
    if np.any(d == 0):
        raise PoleError("z hits an eigenvalue of W")
    out = (1.0 / d).mean(axis=-1)
    return complex(out) if out.ndim == 0 else out


def tilted_vector(x, j: int, profile, variant: str = "s") -> np.ndarray:
    """``x^j_i = x_i s_ij`` (or ``x_i t_ij`` for ``variant="t"``)."""
    x = check_vector(x, profile.N, "x")
    if not 0 <= j < profile.N:
        raise ValidationError(f"index j = {j} out of range for N = {profile.N}")
    if variant == "s":
        return x * profile.s[:, j]
    if variant == "t":
        return x * profile.t[:, j]
    raise ValidationError(f"variant must be 's' or 't', got {variant!r}")


@dataclass(frozen=True)
class WardReport:
    """``sum_j |G_xj|^2`` against ``Im G_xx / eta`` and the ``B``-weighted inequality."""

    row_sum: float
    im_over_eta: float
    rel_error: float
    b_lhs: float
    b_rhs: float

    @property
    def b_holds(self) -> bool:
        return self.b_lhs <= self.b_rhs * (1 + 1e-12)


def ward_check(b: ResolventBundle, z, x, B=None) -> WardReport:
    """Check the Ward identity at a unit vector ``x``.

    ``G_xj = (x* G)_j`` is obtained from an independent dense solve with
    ``W - conj(z)``; ``Im G_xx`` comes from the eigendecomposition.  With
    ``B`` given, ``(G B B* G*)_xx <= ||B||^2 Im G_xx / eta`` is evaluated too.
    """
    z = as_complex_z(z)
    if z.imag <= 0:
        raise ValidationError("ward_check needs Im z > 0")
    x = check_unit_vector(x, b.N, "x")
    # G* x = (W - conj z)^-1 x
    y = np.linalg.solve(b.W - np.conj(z) * np.eye(b.N), x.astype(complex))
    row_sum = float(np.vdot(y, y).real)
    im_over_eta = quadform(b, z, x, x).imag / z.imag
    rel = abs(row_sum - im_over_eta) / im_over_eta
    if B is None:
        b_lhs, b_rhs = row_sum, im_over_eta
    else:
        B = np.asarray(B)
        By = B.conj().T @ y
        b_lhs = float(np.vdot(By, By).real)
        b_rhs = float(np.linalg.norm(B, 2) ** 2 * im_over_eta)
    return WardReport(row_sum, float(im_over_eta), float(rel), b_lhs, b_rhs)


def monotonicity_check(b: ResolventBundle, E: float, eta: float, eta_prime: float, v):
    """Both sides of ``Im G_vv(E + i eta) <= (eta'/eta) Im G_vv(E + i eta')`` for ``eta <= eta'``."""
    if not 0 < eta <= eta_prime:
        raise ValidationError("need 0 < eta <= eta_prime")
    lhs = quadform(b, complex(E, eta), v, v).imag
    rhs = eta_prime / eta * quadform(b, complex(E, eta_prime), v, v).imag
    return float(lhs), float(rhs)


def probe_vectors(N: int, rng: np.random.Generator, budget: int = 50, profile=None) -> np.ndarray:
    """Unit test vectors as columns: coordinate, dense random and tilted vectors.

    Roughly a third of the budget goes to each family (tilted vectors only
    when a non-constant ``profile`` is given; otherwise its share goes to
    random vectors).
    """
    if budget < 1:
        raise ValidationError("budget must be >= 1")
    n_coord = min(N, max(1, budget // 3))
    n_tilt = budget // 3 if profile is not None and np.ptp(profile.s) > 0 else 0
    n_rand = budget - n_coord - n_tilt
    cols = []
    idx = rng.choice(N, size=n_coord, replace=False)
    E = np.zeros((N, n_coord))
    E[idx, np.arange(n_coord)] = 1.0
    cols.append(E)
    R = rng.standard_normal((N, n_rand))
    cols.append(R / np.linalg.norm(R, axis=0))
    if n_tilt:
        base = rng.standard_normal(N)
        base /= np.linalg.norm(base)
        js = rng.choice(N, size=n_tilt, replace=N < n_tilt)
        T = np.stack([tilted_vector(base, int(j), profile) for j in js], axis=1)
        nrm = np.linalg.norm(T, axis=0)
        T = T[:, nrm > 0] / nrm[nrm > 0]
        cols.append(T)
    return np.concatenate(cols, axis=1)


def dense_resolvent(W, z) -> np.ndarray:
    """``(W - z)^-1`` by direct inversion (independent of the bundle)."""
    W = check_hermitian(W, "W")
    z = as_complex_z(z)
    return np.linalg.inv(W - z * np.eye(W.shape[0]))
