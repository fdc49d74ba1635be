import time

import numpy as np
import pytest
from hypothesis import settings

from liouctl.config import load_config_text, parse_config
from liouctl.runner import run_config

settings.register_profile("default", deadline=None)
settings.load_profile("default")

# three-level ladder used throughout: equally spaced levels, control couples 1-2 and 1-3
H0_LADDER = np.diag([0.3, 0.6, 0.9]).astype(np.complex128)
H1_LADDER = np.array([[0, 1, 1], [1, 0, 0], [1, 0, 0]], dtype=np.complex128)
PSI0 = np.array([1 / np.sqrt(6), 1 / np.sqrt(3), 1 / np.sqrt(2)])
PSIF = np.array([1 / np.sqrt(3), np.sqrt(2 / 3), 0.0])
RHO0 = np.outer(PSI0, PSI0).astype(np.complex128)
RHOF = np.outer(PSIF, PSIF).astype(np.complex128)
P_LADDER = (1.5, 2.1, 0.01)
# eigenbasis of RHOF with columns ordered to give diag(0, 0, 1)
U2_REFERENCE = np.array([[-0.8165, 0, 0.57735], [0.57735, 0, 0.8165], [0, 1, 0]])

_CRITERIA = {}


def record_criterion(number: int, ok: bool, detail: str) -> None:
    _CRITERIA[number] = (ok, detail)
    print(f"criterion {number}: {'PASS' if ok else 'FAIL'} {detail}")


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        ok, detail = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")


def random_density(rng, n, rank=None):
    rank = rank or n
    a = rng.normal(size=(n, rank)) + 1j * rng.normal(size=(n, rank))
    m = a @ a.conj().T
    return m / np.trace(m).real


def random_hermitian(rng, n, scale=1.0):
    a = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    return scale * 0.5 * (a + a.conj().T)


def random_unitary(rng, n):
    q, r = np.linalg.qr(rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n)))
    return q * (np.diag(r) / np.abs(np.diag(r)))


@pytest.fixture(scope="session")
def ladder_config():
    return parse_config(load_config_text("@ladder"))


@pytest.fixture(scope="session")
def ladder_run(ladder_config):
    t0 = time.perf_counter()
    result = run_config(ladder_config)
    result.elapsed = time.perf_counter() - t0
    return result
