"""Real-valued matrix Feynman-Kac propagation.

The kinetic part is a real Wiener measure with increment variance
``(hbar/m) dt``; the potential enters only through a 2x2 rotation
``exp(-(dt/hbar) sum V(q_k) J)`` accumulated along each path.  Two
estimators of the same kernel are provided (Monte Carlo over Brownian
paths and a deterministic Trotterized transfer-matrix product), plus a
harness that compares both with the grid solver.

Nothing here renormalizes: the kernel contracts the L2 norm.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.signal import fftconvolve

from .core import Grid1D, PhysicalConstants, Potential, SchroedingerVectorField
from .rng import blocks, ordered_map, stream
from .solver import SolverConfig, propagate

log = logging.getLogger(__name__)


class KernelUnderresolved(ValueError):
    pass


@dataclass(frozen=True)
class KernelConfig:
    n_time_slices: int = 8
    n_samples: int = 10_000
    master_seed: int = 0
    estimator: str = "expectation"  # or "pinned"
    block_size: int = 8192

    def __post_init__(self):
        if self.n_time_slices < 1 or self.n_samples < 1:
            raise ValueError("n_time_slices and n_samples must be >= 1")
        if self.estimator not in ("expectation", "pinned"):
            raise ValueError(f"unknown estimator {self.estimator!r}")


@dataclass(frozen=True)
class RotationWeight:
    angle: float

    @property
    def matrix(self) -> np.ndarray:
        c, s = np.cos(self.angle), np.sin(self.angle)
        return np.array([[c, -s], [s, c]])

    def __matmul__(self, other: "RotationWeight") -> "RotationWeight":
        return RotationWeight(self.angle + other.angle)


@dataclass(eq=False)
class KernelEstimate:
    field: SchroedingerVectorField
    stderr_r: np.ndarray
    stderr_c: np.ndarray
    exit_fraction: float
    n_samples: int
    audit_paths: list = field(default_factory=list)

    @property
    def stderr(self) -> np.ndarray:
        """Per-node pooled standard error of the two-vector estimate."""
        return np.hypot(self.stderr_r, self.stderr_c)


# -- paths and weights ------------------------------------------------------


def sample_wiener_path(x_start: float, t_total: float, n_slices: int,
                       constants: PhysicalConstants, rng: np.random.Generator) -> np.ndarray:
    if n_slices < 1:
        raise ValueError("n_slices must be >= 1")
    dt = t_total / n_slices
    steps = rng.standard_normal(n_slices) * np.sqrt(constants.hbar / constants.mass * dt)
    return x_start + np.concatenate([[0.0], np.cumsum(steps)])


def rotation_weight(path: np.ndarray, potential: Potential, dt: float,
                    constants: PhysicalConstants = PhysicalConstants(),
                    grid: Grid1D | None = None) -> RotationWeight:
    """Left-endpoint rule: V is summed over every point except the last."""
    q = np.asarray(path, float)[:-1]
    if grid is not None:
        q = np.clip(q, grid.x_min, grid.x_max)
    return RotationWeight(float(-dt / constants.hbar * np.sum(potential(q))))


def heat_kernel(dx_values: np.ndarray, variance: float) -> np.ndarray:
    return np.exp(-0.5 * dx_values**2 / variance) / np.sqrt(2 * np.pi * variance)


# -- Monte Carlo estimators -------------------------------------------------


def _spline(field0):
    # cubic interpolation keeps the endpoint lookup bias well below MC noise
    return CubicSpline(field0.grid.x, np.stack([field0.phi_r, field0.phi_c], axis=1), extrapolate=False)


def _field_values(spline, q):
    v = np.nan_to_num(spline(q), nan=0.0)
    return v[:, 0], v[:, 1]


def _node_expectation(x, field0, potential, t_total, config, constants, node):
    grid = field0.grid
    n = config.n_time_slices
    dt = t_total / n
    scale = np.sqrt(constants.hbar / constants.mass * dt)
    spline = _spline(field0)
    sums = np.zeros(4)  # sum r, sum c, sum r^2, sum c^2
    exits = 0
    audit = None
    for b, (lo, hi) in enumerate(blocks(config.n_samples, config.block_size)):
        rng = stream(config.master_seed, "kernel", node, b)
        y = x + np.cumsum(rng.standard_normal((hi - lo, n)) * scale, axis=1)
        exits += int(np.count_nonzero(np.any((y < grid.x_min) | (y > grid.x_max), axis=1)))
        angle = -dt / constants.hbar * potential(np.clip(y, grid.x_min, grid.x_max)).sum(axis=1)
        r0, c0 = _field_values(spline, y[:, -1])
        cs, sn = np.cos(angle), np.sin(angle)
        r = cs * r0 - sn * c0
        c = sn * r0 + cs * c0
        sums += (r.sum(), c.sum(), (r * r).sum(), (c * c).sum())
        if b == 0:
            audit = np.concatenate([np.full((hi - lo, 1), x), y], axis=1)
    return sums, exits, audit


def _node_pinned(q, field0, potential, t_total, config, constants, node):
    """2x2 Green function row G(q, t: q0, 0) by Brownian bridges, applied to field0."""
    grid = field0.grid
    n = config.n_time_slices
    dt = t_total / n
    var = constants.hbar / constants.mass * t_total
    src = grid.x
    dens = heat_kernel(q - src, var) * grid.dx
    sums = np.zeros(4)
    exits = 0
    kfrac = np.arange(n + 1) / n
    for b, (lo, hi) in enumerate(blocks(config.n_samples, config.block_size)):
        rng = stream(config.master_seed, "pinned", node, b)
        steps = rng.standard_normal((hi - lo, src.size, n)) * np.sqrt(constants.hbar / constants.mass * dt)
        w = np.concatenate([np.zeros((hi - lo, src.size, 1)), np.cumsum(steps, axis=2)], axis=2)
        path = src[None, :, None] + w - kfrac * (w[..., -1:] - (q - src)[None, :, None])
        exits += int(np.count_nonzero(np.any((path < grid.x_min) | (path > grid.x_max), axis=2)))
        angle = -dt / constants.hbar * potential(np.clip(path[..., :-1], grid.x_min, grid.x_max)).sum(axis=2)
        cs, sn = np.cos(angle), np.sin(angle)
        # one replicate per sample index: independent bridges for every source node
        r = (dens * (cs * field0.phi_r - sn * field0.phi_c)).sum(axis=1)
        c = (dens * (sn * field0.phi_r + cs * field0.phi_c)).sum(axis=1)
        sums += (r.sum(), c.sum(), (r * r).sum(), (c * c).sum())
    return sums, exits / src.size, None


def propagate_by_kernel(field0: SchroedingerVectorField, t_total: float, potential: Potential,
                        config: KernelConfig, constants: PhysicalConstants = PhysicalConstants(),
                        threads: int = 1, audit_cap: int = 0) -> KernelEstimate:
    """Monte Carlo estimate of the kernel-propagated field at every grid node."""
    grid = field0.grid
    if t_total <= 0:
        return KernelEstimate(field0, np.zeros(grid.n_points), np.zeros(grid.n_points), 0.0, config.n_samples)
    worker = _node_expectation if config.estimator == "expectation" else _node_pinned
    results = ordered_map(
        lambda i: worker(grid.x[i], field0, potential, t_total, config, constants, i),
        range(grid.n_points), threads,
    )
    S = np.array([r[0] for r in results])
    n = config.n_samples
    mean_r, mean_c = S[:, 0] / n, S[:, 1] / n
    denom = max(n - 1, 1)
    var_r = np.maximum(S[:, 2] - n * mean_r**2, 0.0) / denom
    var_c = np.maximum(S[:, 3] - n * mean_c**2, 0.0) / denom
    exit_fraction = float(sum(r[1] for r in results)) / (n * grid.n_points)
    audit = []
    if audit_cap > 0 and results[0][2] is not None:
        for i, r in enumerate(results):
            for p in r[2][: max(0, audit_cap - len(audit))]:
                audit.append((i, p))
            if len(audit) >= audit_cap:
                break
    out = SchroedingerVectorField(grid, mean_r, mean_c, field0.time + t_total)
    return KernelEstimate(out, np.sqrt(var_r / n), np.sqrt(var_c / n), exit_fraction, n, audit)


def write_audit_paths(estimate: KernelEstimate, path):
    rows = [np.concatenate([[node], p]) for node, p in estimate.audit_paths]
    if not rows:
        return
    n = len(rows[0]) - 1
    header = "node," + ",".join(f"q{k}" for k in range(n))
    np.savetxt(path, np.array(rows), delimiter=",", header=header, comments="", fmt="%.17g")


# -- deterministic transfer matrix ------------------------------------------


def transfer_matrix_propagate(field0: SchroedingerVectorField, potential: Potential, dt: float, n_steps: int,
                              constants: PhysicalConstants = PhysicalConstants(),
                              norms: list | None = None, pad: bool = True) -> SchroedingerVectorField:
    """Trotterized kernel: nodewise rotation by -V dt/hbar, then Gaussian smoothing.

    With ``pad`` the grid is extended by six total diffusion lengths on each
    side, where V is held at its boundary value; amplitude may leave the grid
    and return, matching the clamped-V convention of the Monte Carlo paths.
    Without it the field is zero outside the grid at every step.  Norms
    (over the original grid) after each step are appended to ``norms``.
    """
    grid = field0.grid
    var = constants.hbar / constants.mass * dt
    if np.sqrt(var) < 2 * grid.dx:
        raise KernelUnderresolved(
            f"kernel width {np.sqrt(var):.3g} is below 2*dx = {2 * grid.dx:.3g}; increase dt or refine the grid"
        )
    npad = int(np.ceil(6 * np.sqrt(var * n_steps) / grid.dx)) if pad else 0
    x = grid.x_min + grid.dx * np.arange(-npad, grid.n_points + npad)
    inner = slice(npad, npad + grid.n_points)
    half = min(int(np.ceil(10 * np.sqrt(var) / grid.dx)), x.size - 1)
    taps = heat_kernel(np.arange(-half, half + 1) * grid.dx, var) * grid.dx
    angle = -potential(np.clip(x, grid.x_min, grid.x_max)) * dt / constants.hbar
    cs, sn = np.cos(angle), np.sin(angle)
    r = np.zeros(x.size)
    c = np.zeros(x.size)
    r[inner], c[inner] = field0.phi_r, field0.phi_c
    if norms is not None:
        norms.append(field0.norm())
    for _ in range(n_steps):
        r, c = cs * r - sn * c, sn * r + cs * c
        r = fftconvolve(r, taps, mode="same")
        c = fftconvolve(c, taps, mode="same")
        if norms is not None:
            norms.append(float(np.sum(r[inner] ** 2 + c[inner] ** 2) * grid.dx))
    log.debug("transfer-matrix norms: %s", norms)
    return field0.with_components(r[inner].copy(), c[inner].copy(), field0.time + n_steps * dt)


def heat_smooth(field0: SchroedingerVectorField, variance: float) -> SchroedingerVectorField:
    """Exact Gaussian smoothing on the grid by dense quadrature."""
    x = field0.grid.x
    k = heat_kernel(x[:, None] - x[None, :], variance) * field0.grid.dx
    return field0.with_components(k @ field0.phi_r, k @ field0.phi_c)


# -- comparison harness -----------------------------------------------------


def l2_distance(a: SchroedingerVectorField, b: SchroedingerVectorField) -> float:
    return float(np.sqrt(np.sum((a.phi_r - b.phi_r) ** 2 + (a.phi_c - b.phi_c) ** 2) * a.grid.dx))


@dataclass
class ComparisonReport:
    distances: dict
    norms: dict
    mc_stderr_l2: float
    within_3se_fraction: float
    exit_fraction: float
    transfer_norm_trajectory: list

    def to_dict(self) -> dict:
        return {
            "distances": self.distances,
            "norms": self.norms,
            "mc_stderr_l2": self.mc_stderr_l2,
            "within_3se_fraction": self.within_3se_fraction,
            "exit_fraction": self.exit_fraction,
            "transfer_norm_trajectory": self.transfer_norm_trajectory,
        }

    def write(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))


def compare_propagations(field0: SchroedingerVectorField, potential: Potential, t_total: float,
                         kernel_config: KernelConfig, solver_dt: float,
                         constants: PhysicalConstants = PhysicalConstants(), threads: int = 1,
                         fields: dict | None = None) -> ComparisonReport:
    """Pairwise L2 gaps between grid solver, transfer-matrix kernel and MC kernel.

    Agreement between solver and kernel is not expected in general and is
    only reported.  ``fields`` (if given) receives the three final fields.
    """
    n_solver = max(1, int(round(t_total / solver_dt)))
    solved = propagate(field0, potential, SolverConfig(t_total / n_solver, n_solver),
                       frame_stride=n_solver, constants=constants, observables=False)[-1][0]
    dt = t_total / kernel_config.n_time_slices
    tm_norms: list = []
    tm = transfer_matrix_propagate(field0, potential, dt, kernel_config.n_time_slices, constants, tm_norms)
    mc = propagate_by_kernel(field0, t_total, potential, kernel_config, constants, threads)
    gap = np.hypot(mc.field.phi_r - tm.phi_r, mc.field.phi_c - tm.phi_c)
    # a zero standard error only occurs where both estimates are identically zero
    within = gap <= 3 * mc.stderr + 1e-300
    if fields is not None:
        fields.update(solver=solved, transfer=tm, monte_carlo=mc)
    return ComparisonReport(
        distances={
            "solver_vs_transfer": l2_distance(solved, tm),
            "solver_vs_mc": l2_distance(solved, mc.field),
            "mc_vs_transfer": l2_distance(mc.field, tm),
        },
        norms={"initial": field0.norm(), "solver": solved.norm(), "transfer": tm.norm(), "mc": mc.field.norm()},
        mc_stderr_l2=float(np.sqrt(np.sum(mc.stderr**2) * field0.grid.dx)),
        within_3se_fraction=float(np.mean(within)),
        exit_fraction=mc.exit_fraction,
        transfer_norm_trajectory=[float(v) for v in tm_norms],
    )
