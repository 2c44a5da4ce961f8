import numpy as np
import pytest

from gsmsynth.coupled import CouplingMatrix
from gsmsynth.manifolds import Gsm, us_random


def random_coupling(K, N, rng, scale=1.0):
    """Random coupling matrix with zero diagonal blocks (not necessarily reciprocal)."""
    g = (rng.standard_normal((K * N, K * N)) + 1j * rng.standard_normal((K * N, K * N))) * scale
    for k in range(K):
        g[k * N:(k + 1) * N, k * N:(k + 1) * N] = 0
    return CouplingMatrix(g, K, N)


def random_elements(K, N, P, rng):
    return [us_random(N + P, rng, N) for _ in range(K)]


def random_waves(rows, states, rng):
    return rng.standard_normal((rows, states)) + 1j * rng.standard_normal((rows, states))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


ACCEPTANCE: dict[int, str] = {}


def record_criterion(number: int, ok: bool, detail: str) -> bool:
    line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE[number] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.write_sep("=", "acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
