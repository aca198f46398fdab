import numpy as np
import pytest

from evosurf.mesh import BoxDomain, build_box_mesh


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running numerical experiments")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def unit_box_mesh():
    """48-tet Kuhn mesh of [-1, 1]^3 with h = 1."""
    return build_box_mesh(BoxDomain((-1, -1, -1), (1, 1, 1)), 1.0)


@pytest.fixture(scope="session")
def box4():
    return BoxDomain((-2, -2, -2), (2, 2, 2))


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    verdicts = getattr(mod, "VERDICTS", None)
    if verdicts:
        terminalreporter.section("acceptance")
        for k in sorted(verdicts):
            terminalreporter.write_line(verdicts[k])
