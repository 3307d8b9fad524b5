import numpy as np
import pytest

from bltail.coeffs import PeriodicTensor


def laminate(d=2):
    """a(y_1) = 2 + cos(2 pi y_1) times the identity."""
    z = (0,) * d
    e1 = (1,) + (0,) * (d - 1)
    return PeriodicTensor.scalar({z: 2.0, e1: 0.5}, np.eye(d))


def random_system(rng, d=2, N=2, nu0=None, amp=0.15):
    """Elliptic nonsymmetric N x N system layered along nu0 (default e_d)."""
    nu0 = np.eye(d, dtype=int)[-1] if nu0 is None else np.asarray(nu0)
    base = np.einsum("ab,ij->abij", np.eye(d), 2.0 * np.eye(N))
    base = base + 0.2 * rng.standard_normal((d, d, N, N))
    # layered frequency orthogonal to nu0
    xi = np.array([nu0[1], -nu0[0]] + [0] * (d - 2)) if d >= 2 else None
    blk = amp * (rng.standard_normal((d, d, N, N)) + 1j * rng.standard_normal((d, d, N, N)))
    freqs = np.array([np.zeros(d, dtype=int), xi])
    return PeriodicTensor(freqs, np.array([base, blk]), closure=True)


@pytest.fixture
def lam_tensor():
    return laminate(2)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one PASS/FAIL line per acceptance criterion, repeated in the terminal summary
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
