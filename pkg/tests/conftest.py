import numpy as np
import pytest

from roughroad import FluxModel, RoadCondition, build_family, fbar_roots, solve_w_profile

ELL = 0.2
FBAR = 3 / 16

# (criterion, passed, detail), filled by test_acceptance.py
ACCEPTANCE = []


@pytest.fixture(scope="session")
def lw():
    return FluxModel.lighthill_whitham()


@pytest.fixture(scope="session")
def down():
    return RoadCondition(2.0, 1.0)


@pytest.fixture(scope="session")
def up():
    return RoadCondition(1.0, 2.0)


@pytest.fixture(scope="session")
def roots(lw):
    """Low/high roots of V rho (1 - rho) = 3/16 for V = 1 and V = 2."""
    return {1.0: fbar_roots(lw, 1.0, FBAR), 2.0: fbar_roots(lw, 2.0, FBAR)}


@pytest.fixture(scope="session")
def w_profile(lw):
    return solve_w_profile(lw, 1.0, FBAR, ELL)


@pytest.fixture(scope="session")
def family_1a(lw, down, w_profile):
    q0s = np.linspace(0.30, 0.75, 8)
    return build_family(lw, down, ELL, FBAR, q0s, -40 * ELL, rho_plus=0.75, w=w_profile,
                        case_label="1A")


@pytest.fixture(scope="session")
def basin_1a(lw, down, w_profile, roots):
    """Dense 1A family used for the Psi label; lowest member sits just above rho1+."""
    q0s = np.concatenate([[0.25 + 1e-4], np.linspace(0.26, 0.75, 25)])
    return build_family(lw, down, ELL, FBAR, q0s, -100 * ELL, rho_plus=0.75,
                        rho_minus=roots[2.0][0], w=w_profile, case_label="1A")


@pytest.fixture
def record():
    def _record(criterion, passed, detail):
        ACCEPTANCE.append((criterion, bool(passed), detail))
        print(f"criterion {criterion}: {'PASS' if passed else 'FAIL'} {detail}")
        return passed

    return _record


def _order(row):
    tag = str(row[0])
    return int(tag.rstrip("ab")), tag


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for criterion, passed, detail in sorted(ACCEPTANCE, key=_order):
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] {criterion}: {detail}")
