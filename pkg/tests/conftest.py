import numpy as np
import pytest

from sfpgalerkin.basis import SpectralState, TruncationSpec, get_basis

ACCEPTANCE_LINES: list[str] = []


def record_acceptance(line: str) -> None:
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def make_state(trunc: TruncationSpec, terms) -> SpectralState:
    """State from ``[(coefficient, k, l), ...]``."""
    b = get_basis(trunc)
    c = np.zeros(b.dim, dtype=complex)
    for coef, k, l in terms:
        c[b.index(k, l)] += coef
    return SpectralState(trunc, c)


@pytest.fixture
def state_factory():
    return make_state
