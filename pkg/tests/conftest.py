import pytest

from hybridctl.hjb import solve_basic
from hybridctl.model import lq_to_general, validate_system
from hybridctl.riccati import solve_impulsive_riccati

from cases import LQ_GRID, LQ_U, LQ_W, scalar_lq_instance


@pytest.fixture(scope="session")
def lq_case():
    """The scalar LQ instance solved both ways: (lq, prob, vf, pol, riccati solution)."""
    lq = scalar_lq_instance()
    prob = validate_system(*lq_to_general(lq, U=LQ_U, W=LQ_W))
    vf, pol = solve_basic(prob, LQ_GRID)
    return lq, prob, vf, pol, solve_impulsive_riccati(lq, h=1e-3)


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import LINES

    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in LINES:
            terminalreporter.write_line(line)
