import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from nvbath.lattice import LatticeConfig, generate_bath, lattice_positions, make_bath
from nvbath.constants import CC_BOND

settings.register_profile(
    "nvbath", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("nvbath")

FIELD = np.array([0.0, 0.0, 0.005])


def small_bath(n, seed=0, field=FIELD, radius=2, min_r=2.0 * CC_BOND, **kw):
    """n sites drawn without replacement from the lattice shell min_r < r."""
    cand = lattice_positions(radius)
    r = np.linalg.norm(cand, axis=1)
    cand = cand[r > min_r]
    rng = np.random.default_rng(seed)
    pick = rng.choice(len(cand), size=n, replace=False)
    return make_bath(cand[np.sort(pick)], field, **kw)


@pytest.fixture(scope="session")
def paper_bath():
    return generate_bath(LatticeConfig(seed=1), FIELD)


# one summary line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
