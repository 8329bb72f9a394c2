"""Closed-form scenario fields and the statistical / scaling-law estimators."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq, minimize_scalar
from scipy.signal import find_peaks

from .core import Grid1D, Grid2D, PhysicalConstants, SchroedingerVectorField, ZeroNorm, gaussian_packet
from .paths import (
    AnalyticTrajectory,
    HistogramReport,
    PathEnsemble,
    SdeConfig,
    bin_masses,
    build_drift_frame,
    euler_maruyama_step,
    evolve_ensemble,
)
from .rng import stream


class DegenerateOrbitals(ZeroNorm):
    pass


class InsufficientSamples(ValueError):
    pass


# -- free packets -----------------------------------------------------------


def free_gaussian_psi(x, t: float, sigma0: float, p0: float = 0.0, q0: float = 0.0,
                      constants: PhysicalConstants = PhysicalConstants()) -> np.ndarray:
    """Exact complex free packet; at t=0 it equals :func:`gaussian_packet` (before grid normalization)."""
    hbar, m = constants.hbar, constants.mass
    s = 1 + 1j * hbar * t / (2 * m * sigma0**2)
    x = np.asarray(x, float)
    return ((2 * np.pi * sigma0**2) ** -0.25 / np.sqrt(s)
            * np.exp(-((x - q0 - p0 * t / m) ** 2) / (4 * sigma0**2 * s)
                     + 1j * p0 * (x - q0) / hbar - 1j * p0**2 * t / (2 * m * hbar)))


def free_gaussian_width(t: float, sigma0: float, constants: PhysicalConstants = PhysicalConstants()) -> float:
    """Position standard deviation of the free packet at time t."""
    return float(np.sqrt(sigma0**2 + (constants.hbar * t / (2 * constants.mass * sigma0)) ** 2))


def analytic_free_gaussian(grid: Grid1D, t: float, sigma0: float, p0: float = 0.0, q0: float = 0.0,
                           constants: PhysicalConstants = PhysicalConstants()) -> SchroedingerVectorField:
    psi = free_gaussian_psi(grid.x, t, sigma0, p0, q0, constants)
    return SchroedingerVectorField(grid, psi.real.copy(), psi.imag.copy(), t)


# -- double slit ------------------------------------------------------------


@dataclass(frozen=True)
class DoubleSlitSpec:
    slit_separation: float
    slit_width: float
    forward_momentum: float = 0.0
    screen_time: float = 1.0

    def __post_init__(self):
        if not (self.slit_separation > 2 * self.slit_width > 0):
            raise ValueError("need slit_separation > 2 * slit_width > 0")
        if not self.screen_time > 0:
            raise ValueError("screen_time must be positive")

    def fringe_spacing(self, t: float, constants: PhysicalConstants = PhysicalConstants()) -> float:
        """Far-field spacing 2 pi hbar t / (m d)."""
        return 2 * np.pi * constants.hbar * t / (constants.mass * self.slit_separation)


def double_slit_field(spec: DoubleSlitSpec, t: float, grid: Grid1D,
                      constants: PhysicalConstants = PhysicalConstants()) -> SchroedingerVectorField:
    """Transverse two-Gaussian superposition, normalized on the grid.

    The forward momentum only adds a global phase -p^2 t/(2 m hbar).
    """
    h = spec.slit_separation / 2
    psi = (free_gaussian_psi(grid.x, t, spec.slit_width, 0.0, -h, constants)
           + free_gaussian_psi(grid.x, t, spec.slit_width, 0.0, h, constants))
    psi = psi * np.exp(-1j * spec.forward_momentum**2 * t / (2 * constants.mass * constants.hbar))
    norm = np.sqrt(np.sum(np.abs(psi) ** 2) * grid.dx)
    return SchroedingerVectorField(grid, (psi.real / norm).copy(), (psi.imag / norm).copy(), t)


def density_minima(x: np.ndarray, rho: np.ndarray, rel_prominence: float = 0.05) -> np.ndarray:
    idx, _ = find_peaks(-rho, prominence=rel_prominence * rho.max())
    return x[idx]


@dataclass
class FringeReport:
    l1: float
    chi2: float
    reference_minima: list
    detected_minima: list
    offsets_bins: list
    max_offset_bins: float
    count_match: bool
    l1_threshold: float
    bin_tolerance: float

    @property
    def passed(self) -> bool:
        return (self.l1 < self.l1_threshold and self.count_match
                and self.max_offset_bins <= self.bin_tolerance)

    def to_dict(self) -> dict:
        return {
            "l1": self.l1,
            "chi2": self.chi2,
            "reference_minima": self.reference_minima,
            "detected_minima": self.detected_minima,
            "offsets_bins": self.offsets_bins,
            "max_offset_bins": self.max_offset_bins,
            "count_match": self.count_match,
            "l1_threshold": self.l1_threshold,
            "bin_tolerance": self.bin_tolerance,
            "passed": self.passed,
        }


def fringe_report(hist: HistogramReport, reference, l1_threshold: float = 0.05, bin_tolerance: float = 1.0,
                  rel_prominence: float = 0.05) -> FringeReport:
    """Compare an endpoint histogram with a reference density bin by bin.

    Minima are local minima of the binned masses with prominence at least
    ``rel_prominence`` of the largest bin; for the histogram the prominence
    must also clear four counting-noise standard deviations of the tallest bin.
    """
    ref = hist.reference_mass if hist.reference_mass is not None else bin_masses(reference, hist.edges)
    n = hist.counts.sum()
    emp = hist.counts / n
    l1 = float(np.sum(np.abs(emp - ref)))
    ok = ref > 0
    chi2 = float(np.sum((hist.counts[ok] - n * ref[ok]) ** 2 / (n * ref[ok])))
    centers = hist.centers
    ref_idx, _ = find_peaks(-ref, prominence=rel_prominence * ref.max())
    noise = np.sqrt(emp.max() / n)
    det_idx, _ = find_peaks(-emp, prominence=max(rel_prominence * emp.max(), 4 * noise))
    offsets = []
    for i in ref_idx:
        offsets.append(float(np.min(np.abs(det_idx - i))) if det_idx.size else float("inf"))
    return FringeReport(
        l1=l1,
        chi2=chi2,
        reference_minima=[float(centers[i]) for i in ref_idx],
        detected_minima=[float(centers[i]) for i in det_idx],
        offsets_bins=offsets,
        max_offset_bins=max(offsets) if offsets else 0.0,
        count_match=len(ref_idx) == len(det_idx),
        l1_threshold=l1_threshold,
        bin_tolerance=bin_tolerance,
    )


# -- hydrogen scaling -------------------------------------------------------


@dataclass(frozen=True)
class HydrogenScalingResult:
    radius: float
    energy: float
    Z: int
    n: int


def hydrogen_scaling(Z: int, n: int = 1, constants: PhysicalConstants = PhysicalConstants()) -> HydrogenScalingResult:
    """Bohr radius and energy from balancing the stochastic kinetic term against Coulomb attraction.

    Excited states use hbar -> n hbar.
    """
    if Z < 1 or n < 1:
        raise ValueError("Z and n must be >= 1")
    hb = n * constants.hbar
    m, e = constants.mass, constants.charge
    return HydrogenScalingResult(
        radius=hb**2 / (Z * m * e**2),
        energy=-0.5 * Z**2 * m * e**4 / hb**2,
        Z=Z,
        n=n,
    )


def scaling_energy(dq, Z: int, constants: PhysicalConstants = PhysicalConstants()):
    """H(dq) = hbar^2/(2 m dq^2) - Z e^2/dq."""
    return constants.hbar**2 / (2 * constants.mass * dq**2) - Z * constants.charge**2 / dq


def scaling_stationarity_check(Z: int, constants: PhysicalConstants = PhysicalConstants()) -> dict:
    """Numerically minimize H(dq) on (0, 100 a0] and compare with hbar^2/(Z m e^2)."""
    hbar, m, e = constants.hbar, constants.mass, constants.charge
    a0 = hbar**2 / (m * e**2)
    H = lambda q: scaling_energy(q, Z, constants)  # noqa: E731
    dH = lambda q: -(hbar**2) / (m * q**3) + Z * e**2 / q**2  # noqa: E731
    coarse = minimize_scalar(H, bounds=(1e-6 * a0, 100 * a0), method="bounded", options={"xatol": 1e-10 * a0})
    # polish on the stationarity condition inside a bracket around the coarse minimum
    lo, hi = coarse.x * 0.5, min(coarse.x * 2.0, 100 * a0)
    q_star = brentq(dH, lo, hi, xtol=1e-15 * a0, rtol=4 * np.finfo(float).eps)
    expected = a0 / Z
    return {
        "Z": Z,
        "argmin": float(q_star),
        "expected": float(expected),
        "relative_error": float(abs(q_star - expected) / expected),
        "H_min": float(H(q_star)),
        "dH_at_min": float(dH(q_star)),
        "coarse_argmin": float(coarse.x),
    }


# -- uncertainty products ---------------------------------------------------


def drift_free_increments(n: int, dt: float, constants: PhysicalConstants = PhysicalConstants(),
                          master_seed: int = 0) -> np.ndarray:
    """n increments of the SDE with zero drift, taken through :func:`euler_maruyama_step`."""
    spread = 12 * np.sqrt(constants.hbar / constants.mass * dt)
    grid = Grid1D(-spread, spread, 64)
    flat = SchroedingerVectorField(grid, np.ones(grid.n_points), np.zeros(grid.n_points))
    frame = build_drift_frame(flat, constants=constants)
    rng = stream(master_seed, "increments")
    x0 = np.zeros(n)
    x1, _ = euler_maruyama_step(x0, frame, dt, True, rng, constants)
    return x1 - x0


def uncertainty_estimators(increments: np.ndarray, dt: float,
                           constants: PhysicalConstants = PhysicalConstants()) -> dict:
    """<dq * m dq/dt> (expected hbar) and <m/2 (dq/dt)^2 dt> (expected hbar/2), with standard errors."""
    dq = np.asarray(increments, float)
    if dq.size < 1000:
        raise InsufficientSamples(f"need at least 1000 increments, got {dq.size}")
    m = constants.mass
    pq = m * dq**2 / dt
    et = 0.5 * m * dq**2 / dt
    se = lambda a: float(a.std(ddof=1) / np.sqrt(a.size))  # noqa: E731
    return {
        "pq_product": float(pq.mean()),
        "pq_stderr": se(pq),
        "Et_product": float(et.mean()),
        "Et_stderr": se(et),
        "var_over_dt": float(dq.var(ddof=1) / dt),
        "n": int(dq.size),
    }


# -- entangled pair ---------------------------------------------------------


@dataclass(frozen=True)
class Orbital:
    center: float
    width: float
    momentum: float = 0.0

    def psi(self, x, t: float, constants: PhysicalConstants) -> np.ndarray:
        return free_gaussian_psi(x, t, self.width, self.momentum, self.center, constants)


@dataclass(frozen=True)
class EntangledPairSpec:
    """Two-electron antisymmetrized product of free Gaussian orbitals; spin labels are inert tags."""

    orbital_a: Orbital
    orbital_b: Orbital
    spin_labels: tuple = ("alpha", "beta")

    @classmethod
    def symmetric(cls, separation: float = 4.0, width: float = 0.5, momentum: float = 2.0) -> "EntangledPairSpec":
        return cls(Orbital(-separation / 2, width, -momentum), Orbital(separation / 2, width, momentum))


def entangled_pair_field(spec: EntangledPairSpec, t: float, grid: Grid2D,
                         constants: PhysicalConstants = PhysicalConstants()) -> SchroedingerVectorField:
    """N(t) [a(q1) b(q2) - b(q1) a(q2)] on the product grid, normalized there."""
    x = grid.axis.x
    a = spec.orbital_a.psi(x, t, constants)
    b = spec.orbital_b.psi(x, t, constants)
    ab = np.multiply.outer(a, b)
    # transpose rather than a second outer product: exchange antisymmetry holds bit-for-bit
    psi = ab - ab.T
    total = float(np.sum(np.abs(psi) ** 2) * grid.dx**2)
    scale = float(np.sum(np.abs(a) ** 2) * np.sum(np.abs(b) ** 2) * grid.dx**2)
    if total < 1e-300 or total < 1e-24 * scale:
        raise DegenerateOrbitals("orbitals a and b coincide; the antisymmetrized pair vanishes")
    psi = psi / np.sqrt(total)
    return SchroedingerVectorField(grid, psi.real.copy(), psi.imag.copy(), t)


def pair_trajectory(spec: EntangledPairSpec, grid: Grid2D, t_end: float, spacing: float,
                    constants: PhysicalConstants = PhysicalConstants()) -> AnalyticTrajectory:
    return AnalyticTrajectory(lambda t: entangled_pair_field(spec, t, grid, constants), 0.0, t_end, spacing)


def two_particle_sde_run(spec: EntangledPairSpec, config: SdeConfig, grid: Grid2D,
                         constants: PhysicalConstants = PhysicalConstants(), threads: int = 1,
                         frame_spacing: float | None = None, initial_positions=None,
                         record_every: int | None = None) -> PathEnsemble:
    """Pairs (X1, X2) driven by the analytic entangled field, independent noise per coordinate."""
    spacing = config.dt if frame_spacing is None else frame_spacing
    traj = pair_trajectory(spec, grid, config.t_end, spacing, constants)
    return evolve_ensemble(traj, config, constants, initial_positions=initial_positions, threads=threads,
                           record_every=record_every)


# -- channel statistics -----------------------------------------------------


def channel_statistics(endpoints, region_A: tuple, region_B: tuple) -> dict:
    """Classify endpoints into channels.

    Pairs (shape (n, 2)): AB when X1 in A and X2 in B, BA for the mirror,
    otherwise undecided.  Single particles (shape (n,)): AB means the particle
    ended in A, BA means in B.
    """
    a_lo, a_hi = region_A
    b_lo, b_hi = region_B
    if max(a_lo, b_lo) < min(a_hi, b_hi):
        raise ValueError("regions must be disjoint")
    e = endpoints.endpoint if isinstance(endpoints, PathEnsemble) else np.asarray(endpoints, float)
    inA = lambda q: (q >= a_lo) & (q <= a_hi)  # noqa: E731
    inB = lambda q: (q >= b_lo) & (q <= b_hi)  # noqa: E731
    if e.ndim == 1:
        ab, ba = inA(e), inB(e)
    else:
        ab = inA(e[:, 0]) & inB(e[:, 1])
        ba = inB(e[:, 0]) & inA(e[:, 1])
    n = e.shape[0]
    n_ab, n_ba = int(np.count_nonzero(ab)), int(np.count_nonzero(ba))
    n_und = n - n_ab - n_ba
    return {
        "frac_AB": n_ab / n,
        "frac_BA": n_ba / n,
        "frac_undecided": n_und / n,
        "n_AB": n_ab,
        "n_BA": n_ba,
        "n_undecided": n_und,
        "n": n,
    }


def separating_pair_field(separation: float, width: float, momentum: float, t: float, grid: Grid1D,
                          constants: PhysicalConstants = PhysicalConstants()) -> SchroedingerVectorField:
    """One electron shared by two wells that fly apart (the H2+ dissociation channel model)."""
    psi = (free_gaussian_psi(grid.x, t, width, -momentum, -separation / 2, constants)
           + free_gaussian_psi(grid.x, t, width, momentum, separation / 2, constants))
    norm = np.sqrt(np.sum(np.abs(psi) ** 2) * grid.dx)
    return SchroedingerVectorField(grid, (psi.real / norm).copy(), (psi.imag / norm).copy(), t)


__all__ = [
    "DegenerateOrbitals",
    "DoubleSlitSpec",
    "EntangledPairSpec",
    "FringeReport",
    "HydrogenScalingResult",
    "InsufficientSamples",
    "Orbital",
    "analytic_free_gaussian",
    "channel_statistics",
    "density_minima",
    "double_slit_field",
    "drift_free_increments",
    "entangled_pair_field",
    "free_gaussian_psi",
    "free_gaussian_width",
    "fringe_report",
    "gaussian_packet",
    "hydrogen_scaling",
    "pair_trajectory",
    "scaling_energy",
    "scaling_stationarity_check",
    "separating_pair_field",
    "two_particle_sde_run",
    "uncertainty_estimators",
]
