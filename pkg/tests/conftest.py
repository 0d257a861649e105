import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "mdelab", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("mdelab")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_hermitian(rng, N, complex_=False, scale=1.0):
    X = rng.standard_normal((N, N))
    if complex_:
        X = X + 1j * rng.standard_normal((N, N))
    return scale * (X + X.conj().T) / 2


def random_m_plus_matrix(rng, N):
    """Random matrix with positive definite imaginary part."""
    R = random_hermitian(rng, N, complex_=True, scale=0.3)
    Y = rng.standard_normal((N, N)) + 1j * rng.standard_normal((N, N))
    return R + 1j * (Y @ Y.conj().T / N + 0.2 * np.eye(N))


_ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture
def criterion(request):
    """``criterion(k, passed, detail)`` logs one PASS/FAIL line for acceptance criterion ``k``."""
    lines = request.config.stash.setdefault(_ACCEPTANCE_KEY, [])

    def record(k, passed, detail):
        line = f"criterion {k:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        lines.append((k, line))
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
