import numpy as np
import pytest

from lcfem.mesh import build_uniform_grid, refine
from lcfem.problems import helix_field

# Lines reported by the acceptance suite, printed once at the end of the session.
ACCEPTANCE_LINES = {}


def record(number, passed, detail):
    ACCEPTANCE_LINES[number] = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
    print(ACCEPTANCE_LINES[number])


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])


@pytest.fixture
def hanging_mesh():
    """3x3 grid with the centre cell split: four hanging vertices."""
    m = build_uniform_grid(3, 3)
    return refine(m, np.arange(m.n_cells) == 4)


def helix_exact(rate, scale=1.0):
    return lambda p: helix_field(p, rate, scale)


def random_state_vector(space, rng, noise=0.3):
    """Director near (0, 0, 1) with random perturbations, multiplier random."""
    u = np.zeros(space.n_dofs)
    d = np.tile([0.0, 0.0, 1.0], (space.n_q2, 1)) + noise * rng.standard_normal((space.n_q2, 3))
    u[:space.n_director] = d.T.ravel()
    if space.multiplier:
        u[space.n_director:] = rng.standard_normal(space.n_q1)
    return u
