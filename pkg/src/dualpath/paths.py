"""Quantum stochastic paths ``dX = alpha_real dt + sqrt(hbar/m) dW``.

The drift is the local velocity (flux over density) of a Schroedinger field
supplied frame by frame, usually by the grid solver.  Ensembles are split
into fixed-size blocks, each with its own keyed random stream, so results
do not depend on the number of worker threads.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .core import Grid1D, Grid2D, PhysicalConstants, Potential, SchroedingerVectorField
from .rng import blocks, ordered_map, stream
from .solver import CrankNicolson, flagged_nodes, flux


class OutOfDomain(ValueError):
    pass


class FrameMismatch(ValueError):
    pass


@dataclass(frozen=True)
class SdeConfig:
    dt: float
    n_steps: int
    n_paths: int = 1
    master_seed: int = 0
    noise_on: bool = True
    rho_floor: float = 1e-12  # relative to max(rho)
    clamp_value: float | None = None  # None: 50 x max|v| of the first frame
    interpolation: str = "linear"
    block_size: int = 4096

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.n_paths < 1:
            raise ValueError("n_paths must be >= 1")
        if self.n_steps < 0:
            raise ValueError("n_steps must be >= 0")
        if self.clamp_value is not None and not self.clamp_value > 0:
            raise ValueError("clamp_value must be positive")
        if self.interpolation != "linear":
            raise ValueError("only linear interpolation is supported")

    @property
    def t_end(self) -> float:
        return self.n_steps * self.dt


# -- drift frames -----------------------------------------------------------


@dataclass(frozen=True, eq=False)
class DriftFieldFrame:
    """Drift on the grid.  For 2D grids ``alpha_*`` carry a leading axis of length 2."""

    grid: Grid1D | Grid2D
    time: float
    alpha_real: np.ndarray
    alpha_imag: np.ndarray
    flags: np.ndarray
    clamp_value: float
    clamped: np.ndarray

    @property
    def n_clamped(self) -> int:
        return int(np.count_nonzero(self.clamped))


def default_clamp(field: SchroedingerVectorField, rho_floor: float = 1e-12,
                  constants: PhysicalConstants = PhysicalConstants()) -> float:
    """50 x the largest unflagged |v|, but never below the grid's Nyquist velocity pi*hbar/(m dx)."""
    flags = flagged_nodes(field, rho_floor)
    axes = (0, 1) if isinstance(field.grid, Grid2D) else (0,)
    vmax = 0.0
    for ax in axes:
        v = flux(field, constants, ax)[~flags] / field.rho[~flags]
        if v.size:
            vmax = max(vmax, float(np.max(np.abs(v))))
    nyquist = np.pi * constants.hbar / (constants.mass * field.grid.dx)
    return max(50.0 * vmax, nyquist)


def build_drift_frame(field: SchroedingerVectorField, rho_floor: float = 1e-12,
                      clamp_value: float | None = None,
                      constants: PhysicalConstants = PhysicalConstants()) -> DriftFieldFrame:
    if clamp_value is None:
        clamp_value = default_clamp(field, rho_floor, constants)
    rho = field.rho
    flags = flagged_nodes(field, rho_floor)
    two_d = isinstance(field.grid, Grid2D)
    axes = (0, 1) if two_d else (0,)
    D = constants.diffusion_D
    real, imag = [], []
    for ax in axes:
        j = flux(field, constants, ax)
        real.append(np.divide(j, rho, out=np.zeros_like(rho), where=~flags))
        grad_rho = np.gradient(rho, field.grid.dx, axis=ax, edge_order=1)
        imag.append(np.divide(-D * grad_rho, rho, out=np.zeros_like(rho), where=~flags))
    real = np.stack(real) if two_d else real[0]
    imag = np.stack(imag) if two_d else imag[0]
    clamped = np.abs(real) > clamp_value
    real = np.clip(real, -clamp_value, clamp_value)
    return DriftFieldFrame(field.grid, field.time, real, imag, flags, float(clamp_value), clamped)


def _bracket(x, axis: Grid1D):
    n = axis.n_points
    u = (x - axis.x_min) / axis.dx
    i = np.clip(np.floor(u).astype(np.int64), 0, n - 2)
    return i, u - i


def drift_at_many(frame: DriftFieldFrame, x: np.ndarray):
    """Interpolated drift for positions ``x`` (shape (n,) in 1D, (n, 2) in 2D).

    Returns ``(v, flagged, clamped)``; the drift is zero wherever a
    bracketing node is flagged.
    """
    if isinstance(frame.grid, Grid1D):
        i, s = _bracket(x, frame.grid)
        a = frame.alpha_real
        flagged = frame.flags[i] | frame.flags[i + 1]
        clamped = frame.clamped[i] | frame.clamped[i + 1]
        v = (1 - s) * a[i] + s * a[i + 1]
        return np.where(flagged, 0.0, v), flagged, clamped & ~flagged
    ax = frame.grid.axis
    i, s = _bracket(x[:, 0], ax)
    j, u = _bracket(x[:, 1], ax)
    w00, w11 = (1 - s) * (1 - u), s * u
    w10, w01 = s * (1 - u), (1 - s) * u
    f = frame.flags
    flagged = f[i, j] | f[i + 1, j] | f[i, j + 1] | f[i + 1, j + 1]
    c = frame.clamped
    clamped = (c[:, i, j] | c[:, i + 1, j] | c[:, i, j + 1] | c[:, i + 1, j + 1]).any(axis=0)
    out = np.empty_like(x)
    for d in range(2):
        a = frame.alpha_real[d]
        # grouped so that swapping the two coordinates is bit-exact
        out[:, d] = (w00 * a[i, j] + w11 * a[i + 1, j + 1]) + (w10 * a[i + 1, j] + w01 * a[i, j + 1])
    out[flagged] = 0.0
    return out, flagged, clamped & ~flagged


def drift_at(frame: DriftFieldFrame, x: float) -> tuple[float, bool]:
    """Drift at one point of a 1D frame; returns ``(velocity, flagged)``."""
    g = frame.grid
    if not (g.x_min <= x <= g.x_max):
        raise OutOfDomain(f"x={x} outside [{g.x_min}, {g.x_max}]")
    v, flagged, _ = drift_at_many(frame, np.array([float(x)]))
    return float(v[0]), bool(flagged[0])


def reflect(x: np.ndarray, lo: float, hi: float) -> tuple[np.ndarray, np.ndarray]:
    """Fold positions back into [lo, hi]; returns the folded array and a hit mask."""
    hit = (x < lo) | (x > hi)
    if not hit.any():
        return x, hit
    L = hi - lo
    y = np.mod(x - lo, 2 * L)
    y = np.where(y > L, 2 * L - y, y)
    return np.where(hit, lo + y, x), hit


def euler_maruyama_step(x, frame: DriftFieldFrame, dt: float, noise_on: bool, rng: np.random.Generator | None,
                        constants: PhysicalConstants = PhysicalConstants(), noise: np.ndarray | None = None):
    """One Euler-Maruyama update with reflecting walls.

    ``noise`` (standard normals, same shape as ``x``) overrides ``rng``.
    Returns ``(x_new, n_reflections)``.
    """
    x = np.asarray(x, float)
    scalar = x.ndim == 0
    xs = np.atleast_1d(x)
    v, _, _ = drift_at_many(frame, xs)
    new = xs + v * dt
    if noise_on:
        if noise is None:
            noise = rng.standard_normal(xs.shape)
        new = new + np.sqrt(constants.hbar / constants.mass * dt) * np.reshape(noise, xs.shape)
    g = frame.grid.axis if isinstance(frame.grid, Grid2D) else frame.grid
    new, hit = reflect(new, g.x_min, g.x_max)
    n_ref = int(np.count_nonzero(hit))
    return (float(new[0]) if scalar else new), n_ref


# -- field trajectories -----------------------------------------------------


class RecordedTrajectory:
    """Fields recorded at increasing times; lookups snap to the nearest one."""

    def __init__(self, fields):
        fields = [f[0] if isinstance(f, tuple) else f for f in fields]
        if not fields:
            raise FrameMismatch("empty field trajectory")
        self.fields = fields
        self.times = np.array([f.time for f in fields])
        if np.any(np.diff(self.times) <= 0):
            raise FrameMismatch("trajectory times must be strictly increasing")
        self.spacing = float(np.max(np.diff(self.times))) if len(fields) > 1 else 0.0
        self.t_start, self.t_end = float(self.times[0]), float(self.times[-1])
        self.grid = fields[0].grid

    def index_at(self, t: float) -> int:
        k = int(np.searchsorted(self.times, t))
        if k == 0:
            return 0
        if k >= len(self.times):
            return len(self.times) - 1
        # ties go to the earlier frame
        return k - 1 if t - self.times[k - 1] <= self.times[k] - t else k

    def field_at(self, t: float) -> SchroedingerVectorField:
        return self.fields[self.index_at(t)]


class SolverTrajectory:
    """Streams fields from the grid solver; queries must not go backwards in time."""

    def __init__(self, field0: SchroedingerVectorField, potential: Potential, dt: float, t_end: float,
                 constants: PhysicalConstants = PhysicalConstants()):
        self.stepper = CrankNicolson(field0.grid, potential, dt, constants)
        self.grid = field0.grid
        self.spacing = dt
        self.t_start = field0.time
        self.n_max = int(round((t_end - field0.time) / dt))
        self.t_end = self.t_start + self.n_max * dt
        self._k = 0
        self._u = np.empty(2 * field0.grid.n_points)
        self._u[0::2], self._u[1::2] = field0.phi_r, field0.phi_c

    def index_at(self, t: float) -> int:
        x = (t - self.t_start) / self.spacing
        k = int(np.floor(x))
        # ties go to the earlier frame
        if x - k > 0.5 + 1e-9:
            k += 1
        return min(max(k, 0), self.n_max)

    def field_at(self, t: float) -> SchroedingerVectorField:
        k = self.index_at(t)
        if k < self._k:
            raise FrameMismatch("solver trajectory cannot be queried backwards in time")
        while self._k < k:
            self._u = self.stepper.step_array(self._u)
            self._k += 1
        return SchroedingerVectorField(self.grid, self._u[0::2].copy(), self._u[1::2].copy(),
                                       self.t_start + k * self.spacing)


class AnalyticTrajectory:
    """Closed-form fields ``fn(t)`` sampled on a lattice of frame times."""

    def __init__(self, fn, t_start: float, t_end: float, spacing: float):
        self.fn = fn
        self.t_start, self.t_end, self.spacing = t_start, t_end, spacing
        self.grid = fn(t_start).grid

    def index_at(self, t: float) -> int:
        n_max = int(round((self.t_end - self.t_start) / self.spacing))
        x = (t - self.t_start) / self.spacing
        k = int(np.floor(x))
        if x - k > 0.5 + 1e-9:
            k += 1
        return min(max(k, 0), n_max)

    def field_at(self, t: float) -> SchroedingerVectorField:
        return self.fn(self.t_start + self.index_at(t) * self.spacing)


def as_trajectory(obj):
    if hasattr(obj, "field_at"):
        return obj
    return RecordedTrajectory(obj)


# -- ensembles --------------------------------------------------------------


@dataclass(eq=False)
class PathEnsemble:
    times: np.ndarray
    positions: np.ndarray  # (n_paths, n_records) or (n_paths, n_records, 2)
    master_seed: int
    block_size: int
    counters: dict = field(default_factory=dict)

    @property
    def endpoint(self) -> np.ndarray:
        return self.positions[:, -1]

    @property
    def n_paths(self) -> int:
        return self.positions.shape[0]

    def seed_lineage(self, path_index: int) -> tuple:
        """Stream key of a path: (master_seed, 'noise', block) plus its row inside the block."""
        return (self.master_seed, "noise", path_index // self.block_size), path_index % self.block_size

    def manifest(self) -> dict:
        return {
            "n_paths": self.n_paths,
            "master_seed": self.master_seed,
            "block_size": self.block_size,
            "t_start": float(self.times[0]),
            "t_end": float(self.times[-1]),
            "n_records": int(self.times.size),
            "counters": self.counters,
        }

    def write(self, directory, stem: str = "ensemble", path_cap: int = 0):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        end = self.endpoint
        if end.ndim == 1:
            table, header = np.column_stack([np.arange(self.n_paths), end]), "path,x"
        else:
            table, header = np.column_stack([np.arange(self.n_paths), end]), "path,x1,x2"
        np.savetxt(directory / f"{stem}_endpoints.csv", table, delimiter=",", header=header, comments="",
                   fmt=["%d"] + ["%.17g"] * (table.shape[1] - 1))
        if path_cap > 0 and self.positions.ndim == 2:
            rows = self.positions[:path_cap]
            head = "path," + ",".join(f"t{k}" for k in range(self.times.size))
            np.savetxt(directory / f"{stem}_paths.csv", np.column_stack([np.arange(len(rows)), rows]),
                       delimiter=",", header=head, comments="", fmt="%.17g")
        (directory / f"{stem}_manifest.json").write_text(json.dumps(self.manifest(), indent=2, sort_keys=True))


def sample_from_density(field: SchroedingerVectorField, n: int, rng: np.random.Generator) -> np.ndarray:
    """Inverse-CDF sampling of rho on the grid (piecewise-linear CDF in 1D, cell + jitter in 2D)."""
    rho = field.rho
    if isinstance(field.grid, Grid2D):
        ax = field.grid.axis
        p = rho.ravel() / rho.sum()
        cdf = np.cumsum(p)
        cdf /= cdf[-1]
        k = np.minimum(np.searchsorted(cdf, rng.random(n), side="right"), p.size - 1)
        i, j = np.unravel_index(k, rho.shape)
        jitter = (rng.random((n, 2)) - 0.5) * ax.dx
        pts = np.column_stack([ax.x[i], ax.x[j]]) + jitter
        return np.clip(pts, ax.x_min, ax.x_max)
    x = field.grid.x
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (rho[1:] + rho[:-1]) * field.grid.dx)])
    cdf /= cdf[-1]
    # drop flat stretches so the inverse is well defined
    keep = np.concatenate([[True], np.diff(cdf) > 0])
    return np.interp(rng.random(n), cdf[keep], x[keep])


def _frame_cache(trajectory, config: SdeConfig, constants: PhysicalConstants):
    cache: dict = {}
    clamp = [config.clamp_value]

    def get(t: float) -> DriftFieldFrame:
        k = trajectory.index_at(t)
        if k not in cache:
            f = trajectory.field_at(t)
            if clamp[0] is None:
                clamp[0] = default_clamp(f, config.rho_floor, constants)
            if not isinstance(trajectory, RecordedTrajectory):
                cache.clear()
            cache[k] = build_drift_frame(f, config.rho_floor, clamp[0], constants)
        return cache[k]

    return get


def integrate_paths(x0: np.ndarray, trajectory, config: SdeConfig,
                    constants: PhysicalConstants = PhysicalConstants(), noise: np.ndarray | None = None,
                    record_every: int | None = None, t0: float | None = None):
    """Evolve the given start points with explicit standard-normal ``noise``
    of shape ``(n_steps, *x0.shape)`` (ignored when noise is off).

    Returns ``(times, positions, counters)``.  This is the deterministic core
    used by :func:`evolve_ensemble`.
    """
    trajectory = as_trajectory(trajectory)
    t0 = trajectory.t_start if t0 is None else t0
    drift = _frame_cache(trajectory, config, constants)
    rec = config.n_steps if record_every is None else record_every
    x = np.array(x0, float)
    times, snaps = [t0], [x.copy()]
    counters = {"reflections": 0, "flagged_queries": 0, "clamped_queries": 0}
    g = trajectory.grid.axis if isinstance(trajectory.grid, Grid2D) else trajectory.grid
    sq = np.sqrt(constants.hbar / constants.mass * config.dt)
    for k in range(config.n_steps):
        frame = drift(t0 + (k + 0.5) * config.dt)
        v, flagged, clamped = drift_at_many(frame, x)
        x = x + v * config.dt
        if config.noise_on:
            x = x + sq * noise[k]
        x, hit = reflect(x, g.x_min, g.x_max)
        counters["reflections"] += int(np.count_nonzero(hit))
        counters["flagged_queries"] += int(np.count_nonzero(flagged))
        counters["clamped_queries"] += int(np.count_nonzero(clamped))
        if rec and ((k + 1) % rec == 0 or k + 1 == config.n_steps):
            times.append(t0 + (k + 1) * config.dt)
            snaps.append(x.copy())
    return np.array(times), np.stack(snaps, axis=1), counters


def _check_coverage(trajectory, config: SdeConfig, t0: float):
    if trajectory.spacing > 10 * config.dt * (1 + 1e-9):
        raise FrameMismatch(f"frame spacing {trajectory.spacing} exceeds 10*dt = {10 * config.dt}")
    tol = 1e-9 * max(1.0, abs(t0) + config.t_end)
    if trajectory.t_start > t0 + tol or trajectory.t_end < t0 + config.t_end - tol:
        raise FrameMismatch(
            f"trajectory covers [{trajectory.t_start}, {trajectory.t_end}], "
            f"run needs [{t0}, {t0 + config.t_end}]"
        )


def evolve_ensemble(trajectory, config: SdeConfig, constants: PhysicalConstants = PhysicalConstants(),
                    initial_positions: np.ndarray | None = None, initial_sampler=None,
                    threads: int = 1, record_every: int | None = None) -> PathEnsemble:
    """Evolve ``config.n_paths`` paths through the drift of ``trajectory``.

    Start points default to inverse-CDF samples of the first frame's density.
    ``initial_sampler(rng, n)`` overrides that; ``initial_positions`` fixes
    them outright.  Steps from t to t+dt use the frame nearest to t+dt/2.
    """
    trajectory = as_trajectory(trajectory)
    t0 = trajectory.t_start
    _check_coverage(trajectory, config, t0)
    field0 = trajectory.field_at(t0)
    dim = 2 if isinstance(field0.grid, Grid2D) else 1
    parts = blocks(config.n_paths, config.block_size)

    def start(b, lo, hi):
        if initial_positions is not None:
            return np.asarray(initial_positions, float)[lo:hi]
        rng = stream(config.master_seed, "init", b)
        if initial_sampler is not None:
            return np.asarray(initial_sampler(rng, hi - lo), float)
        return sample_from_density(field0, hi - lo, rng)

    xs = [start(b, lo, hi) for b, (lo, hi) in enumerate(parts)]
    rngs = [stream(config.master_seed, "noise", b) for b in range(len(parts))]
    drift = _frame_cache(trajectory, config, constants)
    rec = config.n_steps if record_every is None else record_every
    g = field0.grid.axis if dim == 2 else field0.grid
    sq = np.sqrt(constants.hbar / constants.mass * config.dt)
    counts = np.zeros((len(parts), 3), np.int64)
    times = [t0]
    snaps = [np.concatenate(xs).copy()]

    def advance(b, frame):
        x = xs[b]
        v, flagged, clamped = drift_at_many(frame, x)
        x = x + v * config.dt
        if config.noise_on:
            x = x + sq * rngs[b].standard_normal(x.shape)
        x, hit = reflect(x, g.x_min, g.x_max)
        xs[b] = x
        counts[b] += (np.count_nonzero(hit), np.count_nonzero(flagged), np.count_nonzero(clamped))

    for k in range(config.n_steps):
        frame = drift(t0 + (k + 0.5) * config.dt)
        ordered_map(lambda b: advance(b, frame), range(len(parts)), threads)
        if rec and ((k + 1) % rec == 0 or k + 1 == config.n_steps):
            times.append(t0 + (k + 1) * config.dt)
            snaps.append(np.concatenate(xs).copy())

    total = counts.sum(axis=0)
    counters = {
        "reflections": int(total[0]),
        "flagged_queries": int(total[1]),
        "clamped_queries": int(total[2]),
        "dim": dim,
    }
    return PathEnsemble(np.array(times), np.stack(snaps, axis=1), config.master_seed, config.block_size, counters)


def bohmian_trajectory(x0: float, trajectory, dt: float, n_steps: int | None = None,
                       constants: PhysicalConstants = PhysicalConstants(), rho_floor: float = 1e-12,
                       clamp_value: float | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Noise-free integral curve of the local velocity; returns ``(times, path)``."""
    trajectory = as_trajectory(trajectory)
    if n_steps is None:
        n_steps = int(round((trajectory.t_end - trajectory.t_start) / dt))
    cfg = SdeConfig(dt=dt, n_steps=n_steps, n_paths=1, noise_on=False, rho_floor=rho_floor,
                    clamp_value=clamp_value)
    ens = evolve_ensemble(trajectory, cfg, constants, initial_positions=np.array([x0]), record_every=1)
    return ens.times, ens.positions[0]


# -- histograms -------------------------------------------------------------


@dataclass(eq=False)
class HistogramReport:
    edges: np.ndarray
    counts: np.ndarray
    reference_mass: np.ndarray | None
    l1: float | None
    chi2: float | None

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[1:] + self.edges[:-1])

    @property
    def mass(self) -> np.ndarray:
        return self.counts / max(self.counts.sum(), 1)

    @property
    def density(self) -> np.ndarray:
        w = np.diff(self.edges)
        return self.mass / np.where(w > 0, w, 1.0)

    def to_csv(self, path):
        ref = self.reference_mass if self.reference_mass is not None else np.full(self.counts.size, np.nan)
        w = np.diff(self.edges)
        table = np.column_stack([self.centers, self.counts, ref / np.where(w > 0, w, 1.0)])
        np.savetxt(path, table, delimiter=",", header="bin_center,count,reference_density", comments="",
                   fmt=["%.17g", "%d", "%.17g"])


def bin_masses(reference, edges: np.ndarray, n_sub: int = 64) -> np.ndarray:
    """Probability mass of ``reference`` in each bin.

    ``reference`` is a callable density or a ``(x, rho)`` pair sampled on a
    grid (linearly interpolated).  Masses are renormalized over the binned
    range.
    """
    if callable(reference):
        fn = reference
    else:
        xr, rr = reference
        fn = lambda q: np.interp(q, xr, rr, left=0.0, right=0.0)  # noqa: E731
    # composite midpoint rule inside each bin
    u = (np.arange(n_sub) + 0.5) / n_sub
    w = np.diff(edges)
    pts = edges[:-1, None] + u[None, :] * w[:, None]
    m = fn(pts).mean(axis=1) * w
    return m / m.sum()


def endpoint_histogram(samples, bins: int = 64, value_range: tuple | None = None,
                       reference=None) -> HistogramReport:
    """Histogram of 1D endpoints, with L1 and chi-square distances to ``reference``.

    L1 is the sum over bins of |empirical mass - reference mass| (range 0..2).
    """
    x = samples.endpoint if isinstance(samples, PathEnsemble) else np.asarray(samples, float)
    x = np.ravel(x)
    if x.size == 0:
        raise ValueError("empty ensemble")
    if value_range is None:
        lo, hi = float(x.min()), float(x.max())
        if lo == hi:
            return HistogramReport(np.array([lo, hi]), np.array([x.size]), None, None, None)
        value_range = (lo, hi)
    counts, edges = np.histogram(x, bins=bins, range=value_range)
    if reference is None:
        return HistogramReport(edges, counts, None, None, None)
    ref = bin_masses(reference, edges)
    n = counts.sum()
    emp = counts / n
    l1 = float(np.sum(np.abs(emp - ref)))
    expected = n * ref
    ok = expected > 0
    chi2 = float(np.sum((counts[ok] - expected[ok]) ** 2 / expected[ok]))
    return HistogramReport(edges, counts, ref, l1, chi2)


# -- canonical / Newtonian diagnostics --------------------------------------


def local_momentum_P(field: SchroedingerVectorField, x=None,
                     constants: PhysicalConstants = PhysicalConstants()):
    """Unnormalized local momentum psi^T p psi = hbar (phi_r grad phi_c - phi_c grad phi_r).

    With ``x`` given, returns the value at the nearest grid node.
    """
    P = constants.mass * flux(field, constants)
    if x is None:
        return P
    i = int(np.argmin(np.abs(field.grid.x - x)))
    return float(P[i])


def canonical_residual(field_t: SchroedingerVectorField, field_next: SchroedingerVectorField,
                       potential: Potential, dt: float,
                       constants: PhysicalConstants = PhysicalConstants()) -> tuple[np.ndarray, float]:
    """Nodewise dP_X/dt + rho grad V between consecutive frames, and its L2 norm."""
    dP = (local_momentum_P(field_next, constants=constants) - local_momentum_P(field_t, constants=constants)) / dt
    rho_mid = 0.5 * (field_t.rho + field_next.rho)
    r = dP + rho_mid * potential.gradient(field_t.grid.x)
    return r, float(np.sqrt(np.sum(r**2) * field_t.grid.dx))


def classical_trajectory(q0: float, p0: float, potential: Potential, t_end: float, dt: float,
                         constants: PhysicalConstants = PhysicalConstants()):
    """Velocity-Verlet integration of Hamilton's equations; returns ``(t, q, p)``."""
    n = int(round(t_end / dt))
    q = np.empty(n + 1)
    p = np.empty(n + 1)
    q[0], p[0] = q0, p0
    m = constants.mass
    f = -float(potential.gradient(q0))
    for k in range(n):
        ph = p[k] + 0.5 * dt * f
        q[k + 1] = q[k] + dt * ph / m
        f = -float(potential.gradient(q[k + 1]))
        p[k + 1] = ph + 0.5 * dt * f
    return np.arange(n + 1) * dt, q, p


@dataclass
class ClassicalLimitReport:
    hbar_scales: list
    max_deviation: list
    final_deviation: list
    mean_stderr: list
    monotone: bool

    def to_dict(self) -> dict:
        return {
            "hbar_scales": self.hbar_scales,
            "max_deviation": self.max_deviation,
            "final_deviation": self.final_deviation,
            "mean_stderr": self.mean_stderr,
            "monotone": self.monotone,
        }


def coherent_state_setup(hbar: float, omega: float = 1.0, amplitude: float = 1.0, t_end: float = 2 * np.pi,
                         constants: PhysicalConstants = PhysicalConstants(), noise_on: bool = True,
                         points_per_sigma: float = 14.0, points_per_wavelength: float = 120.0):
    """Grid, potential and initial coherent state for a harmonic run at the given hbar.

    The width is the coherent-state width sqrt(hbar/(2 m omega)) and the grid
    spacing resolves both that width and the largest phase gradient.
    """
    c = constants.scaled(hbar)
    m = c.mass
    sigma = np.sqrt(hbar / (2 * m * omega))
    p_max = m * omega * amplitude
    dx = min(sigma / points_per_sigma, 2 * np.pi * hbar / max(p_max, 1e-300) / points_per_wavelength)
    spread = np.sqrt(sigma**2 + (hbar / m * t_end if noise_on else 0.0))
    half = amplitude + max(6 * sigma, 5 * spread)
    n = int(np.ceil(2 * half / dx)) + 1
    from .core import gaussian_packet

    grid = Grid1D(-half, half, n)
    potential = Potential.harmonic(m * omega**2)
    field0 = gaussian_packet(grid, amplitude, sigma, 0.0, c)
    return grid, potential, field0, c


def classical_limit_run(hbar_scales=(1.0, 0.1, 0.01), n_paths: int = 4000, sde_dt: float = 2e-3,
                        omega: float = 1.0, amplitude: float = 1.0, t_end: float = 2 * np.pi,
                        master_seed: int = 0, constants: PhysicalConstants = PhysicalConstants(),
                        threads: int = 1, rho_floor: float = 1e-24) -> ClassicalLimitReport:
    """Noise-on ensembles of a harmonic coherent state at decreasing hbar.

    Drift comes from the grid solver run at half the SDE step, so every SDE
    step reads the field at its time midpoint.  All scales share one noise
    stream, so the sampling error of the mean path scales like sqrt(hbar).
    The low density floor keeps noise-spread tail paths on the drift field;
    with the 1e-12 default a few percent of paths stall in flagged regions
    and drag the mean by an hbar-independent amount.
    """
    devs, finals, ses = [], [], []
    for hbar in hbar_scales:
        grid, potential, field0, c = coherent_state_setup(hbar, omega, amplitude, t_end, constants)
        n_steps = int(round(t_end / sde_dt))
        traj = SolverTrajectory(field0, potential, sde_dt / 2, n_steps * sde_dt, c)
        cfg = SdeConfig(dt=sde_dt, n_steps=n_steps, n_paths=n_paths, master_seed=master_seed, noise_on=True,
                        rho_floor=rho_floor)
        ens = evolve_ensemble(traj, cfg, c, threads=threads, record_every=max(1, n_steps // 200))
        _, qc, _ = classical_trajectory(amplitude, 0.0, potential, n_steps * sde_dt, sde_dt / 8, c)
        qc_rec = np.interp(ens.times, np.arange(qc.size) * sde_dt / 8, qc)
        mean = ens.positions.mean(axis=0)
        dev = np.abs(mean - qc_rec)
        devs.append(float(dev.max()))
        finals.append(float(dev[-1]))
        ses.append(float(ens.positions[:, -1].std(ddof=1) / np.sqrt(n_paths)))
    mono = all(b < a for a, b in zip(devs, devs[1:]))
    return ClassicalLimitReport(list(map(float, hbar_scales)), devs, finals, ses, mono)
