"""Shared fixtures and the acceptance-line reporter."""

import numpy as np
import pytest

_ACCEPTANCE_LINES = []


def record_criterion(number, passed, detail):
    """Register one acceptance-criterion outcome for the terminal summary."""
    status = "PASS" if passed else "FAIL"
    line = f"criterion {number:2d}: {status} - {detail}"
    _ACCEPTANCE_LINES.append((number, line))
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240817)


@pytest.fixture(scope="session")
def mesh20():
    from reflector_ot import build_cap_mesh

    return build_cap_mesh(np.pi / 4, 20, order=2)


@pytest.fixture(scope="session")
def space20(mesh20):
    from reflector_ot import FESpace

    return FESpace(mesh20, degree=2)
