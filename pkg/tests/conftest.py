import time

import numpy as np
import pytest

from snlslab.spectral import Grid


@pytest.fixture
def rng():
    return np.random.default_rng(20241017)


@pytest.fixture
def grid2():
    return Grid(2, 32, 2 * np.pi)


@pytest.fixture(scope="session")
def gs4():
    """Certified d = 4 ground state on the 64^4 grid of side 18 (a few minutes)."""
    from snlslab.ground_state import solve_ground_state

    t0 = time.perf_counter()
    gs = solve_ground_state(Grid(4, 64, 18.0), "flow", 1e-9)
    gs.info["seconds"] = time.perf_counter() - t0
    return gs
