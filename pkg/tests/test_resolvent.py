import numpy as np
import pytest
from hypothesis import given, strategies as st

from mdelab.ensemble import EntryDistribution, sample_wigner
from mdelab.exceptions import PoleError, ValidationError
from mdelab.mde import VarianceProfile
from mdelab.resolvent import (
    dense_resolvent,
    eigendecompose,
    monotonicity_check,
    probe_vectors,
    quadform,
    quadform_matrix,
    tilted_vector,
    trace_g,
    ward_check,
)

from conftest import random_hermitian


def unit(rng, N, complex_=True):
    v = rng.standard_normal(N) + (1j * rng.standard_normal(N) if complex_ else 0)
    return v / np.linalg.norm(v)


def test_eigendecompose_zero():
    b = eigendecompose(np.zeros((4, 4)))
    assert np.all(b.eigenvalues == 0)
    assert np.array_equal(b.eigenvectors, np.eye(4))


def test_eigendecompose_diagonal():
    b = eigendecompose(np.diag([1.0, 2.0, 3.0]))
    assert b.eigenvalues.tolist() == [1.0, 2.0, 3.0]


def test_eigendecompose_trace_and_invariants(rng):
    W = random_hermitian(rng, 60, complex_=True)
    b = eigendecompose(W)
    assert abs(b.eigenvalues.sum() - np.trace(W).real) <= 1e-9
    U = b.eigenvectors
    assert np.max(np.abs(U.conj().T @ U - np.eye(60))) <= 1e-10
    assert np.max(np.linalg.norm(W @ U - U * b.eigenvalues, axis=0)) <= 1e-8 * np.linalg.norm(W, 2)
    assert not b.eigenvalues.flags.writeable


def test_eigendecompose_sampled_matrix():
    s = sample_wigner(20, EntryDistribution("gaussian"), 1, A=np.eye(20))
    b = eigendecompose(s)
    assert b.source is s
    assert np.allclose(b.eigenvalues, np.linalg.eigvalsh(s.H) + 1, atol=1e-12)


def test_eigendecompose_rejects_non_hermitian():
    with pytest.raises(ValidationError):
        eigendecompose(np.array([[0.0, 1.0], [0.0, 0.0]]))


def test_quadform_zero_matrix():
    b = eigendecompose(np.zeros((3, 3)))
    e1 = np.array([1.0, 0, 0])
    assert quadform(b, 1j, e1, e1) == pytest.approx(1j, abs=1e-15)


def test_quadform_matches_dense_solve(rng):
    N = 50
    W = random_hermitian(rng, N, complex_=True)
    b = eigendecompose(W)
    for _ in range(5):
        v, w = unit(rng, N), unit(rng, N)
        z = complex(rng.uniform(-2, 2), rng.uniform(0.01, 1))
        x = np.linalg.solve(W - z * np.eye(N), w)
        assert abs(quadform(b, z, v, w) - np.vdot(v, x)) <= 1e-10


def test_quadform_conjugate_symmetry(rng):
    N = 30
    b = eigendecompose(random_hermitian(rng, N, complex_=True))
    v, w = unit(rng, N), unit(rng, N)
    z = 0.4 + 0.2j
    assert abs(quadform(b, z, v, w) - np.conj(quadform(b, np.conj(z), w, v))) <= 1e-12


def test_quadform_vectorised_over_z(rng):
    N = 20
    b = eigendecompose(random_hermitian(rng, N))
    v, w = unit(rng, N), unit(rng, N)
    zs = np.array([0.1 + 0.5j, -1 + 0.01j, 2 + 1j])
    out = quadform(b, zs, v, w)
    assert out.shape == (3,)
    assert np.allclose(out, [quadform(b, z, v, w) for z in zs], rtol=0, atol=1e-14)


def test_quadform_matrix(rng):
    N = 15
    W = random_hermitian(rng, N)
    b = eigendecompose(W)
    V = rng.standard_normal((N, 3))
    Wm = rng.standard_normal((N, 4))
    z = 0.2 + 0.3j
    assert np.allclose(quadform_matrix(b, z, V, Wm), V.T @ dense_resolvent(W, z) @ Wm, atol=1e-12)


def test_pole_error():
    b = eigendecompose(np.diag([0.0, 1.0]))
    e = np.array([1.0, 0.0])
    with pytest.raises(PoleError):
        quadform(b, np.array([1.0 + 0j]), e, e)
    with pytest.raises(PoleError):
        trace_g(b, np.array([0.0 + 0j]))


def test_trace_g(rng):
    assert trace_g(eigendecompose(np.zeros((4, 4))), 2j) == pytest.approx(-1 / 2j, abs=1e-15)
    N = 25
    b = eigendecompose(random_hermitian(rng, N))
    z = 0.3 + 0.1j
    I = np.eye(N)
    naive = sum(quadform(b, z, I[i], I[i]) for i in range(N)) / N
    g = trace_g(b, z)
    assert abs(g - naive) <= 1e-12
    assert g.imag > 0


def test_resolvent_matches_dense_inverse(rng):
    for N in (10, 60, 100):
        W = random_hermitian(rng, N, complex_=True)
        z = complex(rng.uniform(-1, 1), 0.05)
        assert np.max(np.abs(eigendecompose(W).resolvent(z) - dense_resolvent(W, z))) <= 1e-9


@given(st.integers(0, 2**32 - 1), st.floats(-3, 3), st.floats(1e-3, 3))
def test_imag_quadform_positive(seed, E, eta):
    rng = np.random.default_rng(seed)
    N = 8
    b = eigendecompose(random_hermitian(rng, N, complex_=True))
    v = unit(rng, N)
    assert quadform(b, complex(E, eta), v, v).imag > 0


def test_tilted_vector(rng):
    N = 6
    x = rng.standard_normal(N)
    assert np.array_equal(tilted_vector(x, 2, VarianceProfile.constant(N)), x)
    s = rng.uniform(0, 2, (N, N))
    s = (s + s.T) / 2
    p = VarianceProfile(s)
    e = np.eye(N)[3]
    assert np.allclose(tilted_vector(e, 1, p), s[3, 1] * e)
    for j in range(N):
        assert np.linalg.norm(tilted_vector(x, j, p)) <= s[:, j].max() * np.linalg.norm(x) + 1e-15
    assert np.array_equal(tilted_vector(x, 1, p, "t"), x * p.t[:, 1])
    with pytest.raises(ValidationError):
        tilted_vector(x, N, p)
    with pytest.raises(ValidationError):
        tilted_vector(x, 0, p, "u")


def test_ward_identity_random_samples():
    N = 200
    rng = np.random.default_rng(3)
    for seed in range(5):
        b = eigendecompose(sample_wigner(N, EntryDistribution("gaussian"), seed))
        x = unit(rng, N)
        rep = ward_check(b, 0.1 + 0.05j, x)
        assert rep.rel_error <= 1e-10


def test_ward_identity_zero_matrix():
    b = eigendecompose(np.zeros((5, 5)))
    z = 0.3 + 0.4j
    rep = ward_check(b, z, np.eye(5)[0])
    assert rep.row_sum == pytest.approx(1 / abs(z) ** 2, rel=1e-14)
    assert rep.im_over_eta == pytest.approx(1 / abs(z) ** 2, rel=1e-14)


def test_ward_b_inequality(rng):
    N = 40
    W = random_hermitian(rng, N, complex_=True)
    b = eigendecompose(W)
    x = unit(rng, N)
    z = 0.2 + 0.1j
    rep = ward_check(b, z, x, np.eye(N))
    assert rep.b_lhs == pytest.approx(rep.b_rhs, rel=1e-10)
    assert rep.b_holds
    for _ in range(5):
        B = rng.standard_normal((N, N)) / np.sqrt(N)
        assert ward_check(b, z, x, B).b_holds


def test_ward_check_validation(rng):
    b = eigendecompose(np.zeros((3, 3)))
    with pytest.raises(ValidationError):
        ward_check(b, 1j, np.array([1.0, 1.0, 0.0]))


def test_monotonicity(rng):
    N = 80
    b = eigendecompose(sample_wigner(N, EntryDistribution("gaussian"), 4))
    V = probe_vectors(N, rng, 20)
    for E in (-1.0, 0.0, 1.5):
        for eta, eta_p in ((0.01, 0.1), (0.05, 1.0), (0.2, 0.2)):
            for v in V.T:
                lhs, rhs = monotonicity_check(b, E, eta, eta_p, v)
                assert lhs <= rhs * (1 + 1e-12)
    with pytest.raises(ValidationError):
        monotonicity_check(b, 0.0, 0.2, 0.1, V[:, 0])


def test_probe_vectors(rng):
    N = 40
    V = probe_vectors(N, rng, 50)
    assert V.shape == (N, 50)
    assert np.allclose(np.linalg.norm(V, axis=0), 1, atol=1e-12)
    coords = np.sum(np.count_nonzero(V, axis=0) == 1)
    assert coords == 16
    s = np.ones((N, N))
    s[: N // 2, : N // 2] = 3.0
    Vt = probe_vectors(N, rng, 30, VarianceProfile(s))
    assert Vt.shape[1] == 30
    assert np.allclose(np.linalg.norm(Vt, axis=0), 1, atol=1e-12)
    with pytest.raises(ValidationError):
        probe_vectors(N, rng, 0)
