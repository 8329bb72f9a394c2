import numpy as np
from scipy.linalg import eigh_tridiagonal

from dualpath.core import PhysicalConstants, SchroedingerVectorField


def discrete_ground_state(grid, potential, constants=PhysicalConstants()):
    """Lowest eigenpair of the 3-point Dirichlet Hamiltonian (built independently of the solver)."""
    h2m = constants.hbar**2 / (2 * constants.mass * grid.dx**2)
    d = 2 * h2m + potential(grid.x)
    e = np.full(grid.n_points - 1, -h2m)
    w, v = eigh_tridiagonal(d, e, select="i", select_range=(0, 0))
    u = v[:, 0] / np.sqrt(np.sum(v[:, 0] ** 2) * grid.dx)
    if u[grid.n_points // 2] < 0:
        u = -u
    return w[0], SchroedingerVectorField(grid, u, np.zeros_like(u))


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[n])
