"""Grid propagation of the two-component real Schroedinger equation.

``hbar J d/dt psi = H psi`` is integrated with the implicit midpoint rule
(Crank-Nicolson) applied directly to the coupled real system.  Unknowns are
interleaved ``[r0, c0, r1, c1, ...]`` so the system matrix is banded with
three sub- and super-diagonals.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np
from scipy.linalg import lapack, solve_banded

from .core import Grid1D, PhysicalConstants, Potential, SchroedingerVectorField


class LinearSolveFailure(RuntimeError):
    pass


class GridResolutionWarning(UserWarning):
    pass


@dataclass(frozen=True)
class SolverConfig:
    dt: float
    n_steps: int
    boundary: str = "dirichlet"
    rho_floor: float = 1e-12  # relative to max(rho)

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.n_steps < 0:
            raise ValueError("n_steps must be non-negative")
        if self.boundary != "dirichlet":
            raise ValueError("only dirichlet boundaries are supported")

    def explicit_stable(self, grid: Grid1D, constants: PhysicalConstants) -> bool:
        """Stability bound for explicit diagnostics; the propagator itself needs none."""
        return self.dt <= grid.dx**2 * constants.mass / constants.hbar


@dataclass(frozen=True, eq=False)
class ObservableFrame:
    time: float
    rho: np.ndarray
    flux_j: np.ndarray
    v_local: np.ndarray
    E_local: np.ndarray
    theta: np.ndarray
    flags: np.ndarray


# -- discrete operators -----------------------------------------------------


def hamiltonian_bands(grid: Grid1D, v: np.ndarray, constants: PhysicalConstants):
    """Diagonal and off-diagonal of the 3-point discrete Hamiltonian."""
    t = constants.hbar**2 / (2 * constants.mass * grid.dx**2)
    return 2 * t + np.asarray(v, float), -t * np.ones(grid.n_points - 1)


def apply_hamiltonian(grid: Grid1D, v: np.ndarray, constants: PhysicalConstants, u: np.ndarray) -> np.ndarray:
    d, e = hamiltonian_bands(grid, v, constants)
    out = d * u
    out[:-1] += e * u[1:]
    out[1:] += e * u[:-1]
    return out


def _real_cn_banded(grid, v, constants, dt, sign):
    """Banded storage (3, 3) of I + sign*(dt/2hbar) J H on interleaved unknowns."""
    n = grid.n_points
    d, e = hamiltonian_bands(grid, v, constants)
    a = sign * dt / (2 * constants.hbar)
    N = 2 * n
    ab = np.zeros((7, N))
    # ab[3 + i - j, j] = M[i, j]
    ab[3, :] = 1.0
    r = np.arange(n)
    # row r_i: (J H psi)_r = -(H phi_c)  -> M[2i, 2j+1] = -a H[i, j]
    # row c_i: (J H psi)_c = +(H phi_r)  -> M[2i+1, 2j] = +a H[i, j]
    for off, hv in ((0, d), (1, e), (-1, e)):
        i = r[max(0, -off): n - max(0, off)]
        j = i + off
        ab[3 + 2 * i - (2 * j + 1), 2 * j + 1] = -a * hv
        ab[3 + (2 * i + 1) - 2 * j, 2 * j] = a * hv
    return ab


class CrankNicolson:
    """Pre-factored implicit-midpoint stepper for a fixed grid, potential and dt."""

    def __init__(self, grid: Grid1D, potential: Potential, dt: float,
                 constants: PhysicalConstants = PhysicalConstants()):
        self.grid = grid
        self.dt = dt
        self.constants = constants
        # a constant offset commutes with H: applied as an exact rotation
        self.offset = potential.V0 if potential.kind == "constant" else 0.0
        self.v = potential.on_grid(grid) - self.offset
        self._c, self._s = np.cos(-self.offset * dt / constants.hbar), np.sin(-self.offset * dt / constants.hbar)
        lhs = _real_cn_banded(grid, self.v, constants, dt, +1)
        self._rhs = _real_cn_banded(grid, self.v, constants, dt, -1)
        # gbtrf wants kl extra rows on top for fill-in
        ab = np.vstack([np.zeros((3, lhs.shape[1])), lhs])
        lu, piv, info = lapack.dgbtrf(ab, 3, 3)
        if info != 0:
            raise LinearSolveFailure(f"banded LU failed (info={info}); check dt and grid")
        self._lu, self._piv = lu, piv

    def _matvec_rhs(self, u: np.ndarray) -> np.ndarray:
        ab = self._rhs
        out = ab[3] * u
        for k in range(1, 4):
            out[:-k] += ab[3 - k, k:] * u[k:]
            out[k:] += ab[3 + k, :-k] * u[:-k]
        return out

    def step_array(self, u: np.ndarray) -> np.ndarray:
        x, info = lapack.dgbtrs(self._lu, 3, 3, self._matvec_rhs(u), self._piv)
        if info != 0:
            raise LinearSolveFailure(f"banded solve failed (info={info})")
        if self.offset:
            r, c = x[0::2].copy(), x[1::2].copy()
            x[0::2] = self._c * r - self._s * c
            x[1::2] = self._s * r + self._c * c
        return x

    def step(self, field: SchroedingerVectorField) -> SchroedingerVectorField:
        u = np.empty(2 * self.grid.n_points)
        u[0::2], u[1::2] = field.phi_r, field.phi_c
        u = self.step_array(u)
        return SchroedingerVectorField(self.grid, u[0::2].copy(), u[1::2].copy(), field.time + self.dt)


def step(field: SchroedingerVectorField, potential: Potential, config: SolverConfig,
         constants: PhysicalConstants = PhysicalConstants()) -> SchroedingerVectorField:
    return CrankNicolson(field.grid, potential, config.dt, constants).step(field)


def step_complex(field: SchroedingerVectorField, potential: Potential, config: SolverConfig,
                 constants: PhysicalConstants = PhysicalConstants()) -> SchroedingerVectorField:
    """Same implicit midpoint step on the complex form ``i hbar psi_t = H psi``."""
    grid = field.grid
    offset = potential.V0 if potential.kind == "constant" else 0.0
    d, e = hamiltonian_bands(grid, potential.on_grid(grid) - offset, constants)
    a = 1j * config.dt / (2 * constants.hbar)
    psi = field.psi
    rhs = (1 - a * d) * psi
    rhs[:-1] -= a * e * psi[1:]
    rhs[1:] -= a * e * psi[:-1]
    ab = np.zeros((3, grid.n_points), complex)
    ab[0, 1:] = a * e
    ab[1] = 1 + a * d
    ab[2, :-1] = a * e
    out = solve_banded((1, 1), ab, rhs) * np.exp(-1j * offset * config.dt / constants.hbar)
    return SchroedingerVectorField(grid, out.real.copy(), out.imag.copy(), field.time + config.dt)


# -- observables ------------------------------------------------------------


def _grad(u: np.ndarray, dx: float, axis: int = 0) -> np.ndarray:
    return np.gradient(u, dx, axis=axis, edge_order=1)


def flux(field: SchroedingerVectorField, constants: PhysicalConstants = PhysicalConstants(),
         axis: int = 0) -> np.ndarray:
    dx = field.grid.dx
    return (constants.hbar / constants.mass) * (
        field.phi_r * _grad(field.phi_c, dx, axis) - field.phi_c * _grad(field.phi_r, dx, axis)
    )


def flagged_nodes(field: SchroedingerVectorField, rho_floor: float = 1e-12) -> np.ndarray:
    """True where rho <= rho_floor * max(rho)."""
    rho = field.rho
    return rho <= rho_floor * rho.max()


def local_velocity(field: SchroedingerVectorField, rho_floor: float = 1e-12,
                   constants: PhysicalConstants = PhysicalConstants(), axis: int = 0) -> np.ndarray:
    flags = flagged_nodes(field, rho_floor)
    rho = field.rho
    j = flux(field, constants, axis)
    return np.divide(j, rho, out=np.zeros_like(rho), where=~flags)


def local_energy(field: SchroedingerVectorField, potential: Potential, rho_floor: float = 1e-12,
                 constants: PhysicalConstants = PhysicalConstants()) -> np.ndarray:
    """(psi^T H psi)/rho with the solver's discrete H; zero at flagged nodes."""
    v = potential.on_grid(field.grid)
    hr = apply_hamiltonian(field.grid, v, constants, field.phi_r)
    hc = apply_hamiltonian(field.grid, v, constants, field.phi_c)
    flags = flagged_nodes(field, rho_floor)
    num = field.phi_r * hr + field.phi_c * hc
    return np.divide(num, field.rho, out=np.zeros_like(num), where=~flags)


def energy_expectation(field: SchroedingerVectorField, potential: Potential,
                       constants: PhysicalConstants = PhysicalConstants()) -> float:
    v = potential.on_grid(field.grid)
    hr = apply_hamiltonian(field.grid, v, constants, field.phi_r)
    hc = apply_hamiltonian(field.grid, v, constants, field.phi_c)
    return float(np.sum(field.phi_r * hr + field.phi_c * hc) * field.grid.dx)


def phase_angle(field: SchroedingerVectorField, rho_floor: float = 1e-12) -> np.ndarray:
    """Unwrapped atan2(phi_c, phi_r), walking outward from the density maximum.

    Flagged nodes are NaN.  A per-cell phase step near pi means the grid does
    not resolve the phase and triggers ``GridResolutionWarning``.
    """
    raw = np.arctan2(field.phi_c, field.phi_r)
    flags = flagged_nodes(field, rho_floor)
    theta = np.full(raw.shape, np.nan)
    start = int(np.argmax(field.rho))
    theta[start] = raw[start]
    worst = 0.0
    for direction in (1, -1):
        prev = raw[start]
        i = start + direction
        while 0 <= i < raw.size:
            if not flags[i]:
                d = (raw[i] - prev + np.pi) % (2 * np.pi) - np.pi
                worst = max(worst, abs(d))
                theta[i] = prev = prev + d
            i += direction
    if worst > 0.9 * np.pi:
        warnings.warn(f"phase step {worst:.3f} rad across one cell; refine the grid",
                      GridResolutionWarning, stacklevel=2)
    return theta


def time_reverse(field: SchroedingerVectorField) -> SchroedingerVectorField:
    return field.with_components(field.phi_r.copy(), -field.phi_c)


def continuity_residual(before: SchroedingerVectorField, after: SchroedingerVectorField, dt: float,
                        constants: PhysicalConstants = PhysicalConstants()) -> float:
    mid = before.with_components(0.5 * (before.phi_r + after.phi_r), 0.5 * (before.phi_c + after.phi_c))
    div = _grad(flux(mid, constants), before.grid.dx)
    r = (after.rho - before.rho) / dt + div
    return float(np.sqrt(np.sum(r[1:-1] ** 2) * before.grid.dx))


def observe(field: SchroedingerVectorField, potential: Potential, rho_floor: float = 1e-12,
            constants: PhysicalConstants = PhysicalConstants()) -> ObservableFrame:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", GridResolutionWarning)
        theta = phase_angle(field, rho_floor)
    return ObservableFrame(
        time=field.time,
        rho=field.rho,
        flux_j=flux(field, constants),
        v_local=local_velocity(field, rho_floor, constants),
        E_local=local_energy(field, potential, rho_floor, constants),
        theta=theta,
        flags=flagged_nodes(field, rho_floor),
    )


def propagate(field: SchroedingerVectorField, potential: Potential, config: SolverConfig,
              frame_stride: int = 1, constants: PhysicalConstants = PhysicalConstants(),
              observables: bool = True):
    """Run ``n_steps`` steps, recording ``(field, frame)`` every ``frame_stride`` steps.

    With ``observables=False`` the frame slot is None (cheaper when only the
    fields are needed, e.g. as drift sources).
    """
    if frame_stride < 1:
        raise ValueError("frame_stride must be >= 1")
    stepper = CrankNicolson(field.grid, potential, config.dt, constants)
    obs = (lambda f: observe(f, potential, config.rho_floor, constants)) if observables else (lambda f: None)
    out = [(field, obs(field))]
    u = np.empty(2 * field.grid.n_points)
    u[0::2], u[1::2] = field.phi_r, field.phi_c
    t0 = field.time
    for k in range(1, config.n_steps + 1):
        u = stepper.step_array(u)
        if k % frame_stride == 0 or k == config.n_steps:
            f = SchroedingerVectorField(field.grid, u[0::2].copy(), u[1::2].copy(), t0 + k * config.dt)
            out.append((f, obs(f)))
    return out


def conservation_diagnostics(trajectory, potential: Potential,
                             constants: PhysicalConstants = PhysicalConstants()) -> dict:
    norms = np.array([f.norm() for f, _ in trajectory])
    energies = np.array([energy_expectation(f, potential, constants) for f, _ in trajectory])
    e0 = energies[0]
    scale = abs(e0) if abs(e0) > 0 else 1.0
    return {
        "norm_drift": float(np.max(np.abs(norms - norms[0]))),
        "energy_drift_rel": float(np.max(np.abs(energies - e0)) / scale),
        "norm_initial": float(norms[0]),
        "energy_initial": float(e0),
    }


def write_frame_csv(frame: ObservableFrame, grid: Grid1D, path):
    table = np.column_stack([grid.x, frame.rho, frame.flux_j, frame.v_local, frame.E_local, frame.theta])
    np.savetxt(path, table, delimiter=",", header="x,rho,j,v,E_local,theta", comments="", fmt="%.17g")


def write_run_manifest(path, config: SolverConfig, diagnostics: dict, extra: dict | None = None):
    doc = {"solver": asdict(config), "diagnostics": diagnostics}
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True))
