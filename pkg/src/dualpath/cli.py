"""Scenario runner: ``dualpath run --config cfg.json`` / ``dualpath validate --config cfg.json``."""

from __future__ import annotations

import argparse
import copy
import datetime as _dt
import json
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .core import Grid1D, Grid2D, PacketTruncated, PhysicalConstants, Potential, gaussian_packet, plane_wave_window
from .core import momentum_functional, rotate, write_field
from .kernel import KernelConfig, compare_propagations, l2_distance, propagate_by_kernel
from .paths import (
    AnalyticTrajectory,
    SdeConfig,
    SolverTrajectory,
    bohmian_trajectory,
    classical_limit_run,
    classical_trajectory,
    coherent_state_setup,
    endpoint_histogram,
    evolve_ensemble,
    sample_from_density,
)
from .rng import stream
from .scenarios import (
    DoubleSlitSpec,
    EntangledPairSpec,
    Orbital,
    analytic_free_gaussian,
    channel_statistics,
    double_slit_field,
    drift_free_increments,
    entangled_pair_field,
    fringe_report,
    free_gaussian_width,
    hydrogen_scaling,
    scaling_stationarity_check,
    separating_pair_field,
    two_particle_sde_run,
    uncertainty_estimators,
)
from .solver import SolverConfig, conservation_diagnostics, flux, propagate, time_reverse, write_frame_csv


class ConfigInvalid(ValueError):
    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


class StageFailure(RuntimeError):
    pass


SCENARIOS = (
    "FreeGaussian",
    "Harmonic",
    "PlaneWaveCalibration",
    "DoubleSlit",
    "HydrogenScaling",
    "UncertaintyScaling",
    "KernelComparison",
    "Entanglement",
    "H2PlusChannel",
    "ClassicalLimit",
)

EQUATION_TAGS = {
    "FreeGaussian": ["Eq_Sch4", "Eq_fact2", "Eq_Econtinuity", "Eq_t-reverse", "Eq_Stchastic1"],
    "Harmonic": ["Eq_Sch4", "Eq_Realalpha", "Eq_Bohm3", "Eq_Canonical"],
    "PlaneWaveCalibration": ["Eq_pln", "Eq_exrho", "Eq_plane", "Eq_p-op2", "Eq_Sch4"],
    "DoubleSlit": ["Eq_Stchastic1", "Eq_Bohm3", "Eq_Realalpha"],
    "HydrogenScaling": ["Eq_hAtom", "Eq_BohrE", "Eq_BohrQ"],
    "UncertaintyScaling": ["Eq_randomQ", "Eq_uncert", "Eq_uncertainty3", "Eq_Dconst"],
    "KernelComparison": ["Eq_matrixGreen", "Eq_PI-real", "Eq_Sch4"],
    "Entanglement": ["Eq_ent", "Eq_X1", "Eq_X2", "Eq_X3", "Eq_X4", "Eq_Stchastic1"],
    "H2PlusChannel": ["Eq_H2plus", "Eq_Stchastic1"],
    "ClassicalLimit": ["Eq_Stchastic1", "Eq_Ehrenfestp", "Eq_Sch4"],
}

# Layered defaults: COMMON, then the scenario block, then the user file.
COMMON = {
    "constants": {"hbar": 1.0, "mass": 1.0, "charge": 1.0},
    "grid": None,
    "solver": None,
    "sde": None,
    "kernel": None,
    "params": {},
    "thresholds": {},
    "output_dir": None,
}

DEFAULTS = {
    "FreeGaussian": {
        "grid": {"x_min": -10.0, "x_max": 14.0, "n_points": 2048},
        "solver": {"dt": 0.0025, "n_steps": 800, "frame_stride": 200},
        "sde": {"dt": 0.01, "n_steps": 200, "n_paths": 10000, "noise_on": True},
        "params": {"sigma0": 1.0, "p0": 1.0, "q0": 0.0, "bins": 64},
        "thresholds": {"l2": 1e-4, "norm_drift": 1e-10, "energy_drift": 1e-8, "round_trip": 1e-8,
                       "irreversibility_factor": 5.0, "bohmian_return": 2e-2},
    },
    "Harmonic": {
        "sde": {"dt": 1e-3},
        "params": {"omega": 1.0, "amplitude": 1.0, "points_per_sigma": 50, "points_per_wavelength": 800},
        "thresholds": {"max_error": 1e-4},
    },
    "PlaneWaveCalibration": {
        "grid": {"x_min": -10.0, "x_max": 10.0, "n_points": 2001},
        "solver": {"dt": 0.01, "n_steps": 100, "frame_stride": 100},
        "params": {"p0": 1.5, "interval": [-5.0, 5.0], "chi": 0.0, "V0": 0.7, "sigma0": 1.0},
        "thresholds": {"momentum_rel": 1e-3, "flux_rel": 1e-3, "rho": 1e-12, "rotation": 1e-12},
    },
    "DoubleSlit": {
        "grid": {"x_min": -30.0, "x_max": 30.0, "n_points": 1201},
        "sde": {"dt": 2e-3, "n_paths": 100000},
        "params": {"slit_separation": 6.0, "slit_width": 0.5, "forward_momentum": 0.0, "screen_time": 4.0,
                   "bins": 64, "range": [-16.0, 16.0]},
        "thresholds": {"l1": 0.05, "baseline_l1": 0.03, "noise_on_bins": 2, "noise_off_bins": 1},
    },
    "HydrogenScaling": {
        "params": {"Z": 1, "n": 1, "Z_max": 5, "n_max": 5},
        "thresholds": {"identity": 1e-12, "argmin_rel": 1e-8, "gradient": 1e-8},
    },
    "UncertaintyScaling": {
        "params": {"n_increments": 100000, "dt": 0.01},
        "thresholds": {"n_se": 3.0},
    },
    "KernelComparison": {
        "grid": {"x_min": -6.0, "x_max": 6.0, "n_points": 97},
        "solver": {"dt": 0.005},
        "kernel": {"n_time_slices": 8, "n_samples": 100000, "estimator": "expectation", "block_size": 8192},
        "params": {"q0": 0.0, "sigma0": 1.0, "p0": 1.0, "k": 1.0, "t": 0.5,
                   "slope_samples": [1000, 3000, 10000, 30000, 100000]},
        "thresholds": {"within_3se": 0.95, "slope": -0.5, "slope_tol": 0.15},
    },
    "Entanglement": {
        "grid": {"x_min": -20.0, "x_max": 20.0, "n_points": 321},
        "sde": {"dt": 0.005, "n_paths": 10000, "noise_on": True},
        "params": {"separation": 4.0, "width": 1.0, "momentum": 4.0, "screen_time": 2.0, "region_gap": 1.0,
                   "probe_times": [0.0, 0.5, 1.0, 1.5, 2.0]},
        "thresholds": {"frac_AB": [0.485, 0.515], "undecided": 0.05, "antisymmetry": 1e-12},
    },
    "H2PlusChannel": {
        "grid": {"x_min": -30.0, "x_max": 30.0, "n_points": 1201},
        "sde": {"dt": 0.005, "n_paths": 10000, "noise_on": True},
        "params": {"separation": 2.0, "width": 0.7, "momentum": 3.0, "screen_time": 3.0, "region_gap": 1.0},
        "thresholds": {"n_sigma": 3.0, "undecided": 0.05},
    },
    "ClassicalLimit": {
        "sde": {"dt": 2e-3, "n_paths": 4000},
        "params": {"hbar_scales": [1.0, 0.1, 0.01], "omega": 1.0, "amplitude": 1.0, "t_end": 2 * np.pi,
                   "rho_floor": 1e-24},
        "thresholds": {},
    },
}


# keys a user may set in each structured section; params/thresholds follow the scenario defaults
SECTION_KEYS = {
    "constants": {"hbar", "mass", "charge"},
    "grid": {"x_min", "x_max", "n_points"},
    "solver": {"dt", "n_steps", "frame_stride"},
    "sde": {"dt", "n_steps", "n_paths", "noise_on", "rho_floor", "clamp_value", "block_size"},
    "kernel": {"n_time_slices", "n_samples", "estimator", "block_size"},
}


def _merge(base, over):
    if not isinstance(base, dict) or not isinstance(over, dict):
        return copy.deepcopy(over)
    out = copy.deepcopy(base)
    for k, v in over.items():
        out[k] = _merge(out.get(k), v) if k in out and isinstance(out[k], dict) else copy.deepcopy(v)
    return out


@dataclass
class ScenarioConfig:
    scenario: str
    master_seed: int
    constants: PhysicalConstants
    grid: dict | None
    solver: dict | None
    sde: dict | None
    kernel: dict | None
    params: dict
    thresholds: dict
    output_dir: str | None = None
    raw: dict = field(default_factory=dict)

    def resolved(self) -> dict:
        """Everything that determines the result (no output location)."""
        d = {k: v for k, v in self.raw.items() if k != "output_dir"}
        d["master_seed"] = self.master_seed
        return d


def _positive(d: dict | None, key: str, section: str, errors: list, integer=False):
    if d is None or key not in d or d[key] is None:
        return
    v = d[key]
    ok = isinstance(v, (int, float)) and not isinstance(v, bool) and v > 0
    if integer:
        ok = ok and float(v).is_integer()
    if not ok:
        errors.append(f"{section}.{key} must be a positive {'integer' if integer else 'number'} (got {v!r})")


def _containment(grid: dict, centers, sigma: float, label: str, errors: list):
    lo, hi = grid["x_min"], grid["x_max"]
    for c in centers:
        if c - 5 * sigma <= lo or c + 5 * sigma >= hi:
            errors.append(f"{label}: packet at {c:g} with width {sigma:g} lies within 5 sigma of the grid boundary"
                          f" [{lo:g}, {hi:g}]")
            return


def validate_config(raw_text: str) -> tuple[ScenarioConfig | None, list[str]]:
    """Parse and check a JSON config; returns ``(config, [])`` or ``(None, errors)``."""
    errors: list[str] = []
    try:
        user = json.loads(raw_text)
    except json.JSONDecodeError as exc:
        return None, [f"config is not valid JSON: {exc}"]
    if not isinstance(user, dict):
        return None, ["config must be a JSON object"]
    name = user.get("scenario")
    if name not in SCENARIOS:
        return None, [f"scenario must be one of {', '.join(SCENARIOS)} (got {name!r})"]
    seed = user.get("master_seed")
    if seed is None:
        errors.append("master_seed required for reproducibility")
    elif isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed < 2**64:
        errors.append(f"master_seed must be an unsigned 64-bit integer (got {seed!r})")
    unknown = set(user) - set(COMMON) - {"scenario", "master_seed"}
    if unknown:
        errors.append(f"unknown top-level keys: {sorted(unknown)}")

    base = _merge(COMMON, DEFAULTS[name])
    for sec in ("constants", "grid", "solver", "sde", "kernel", "params", "thresholds"):
        given = user.get(sec)
        if given is None:
            continue
        if not isinstance(given, dict):
            errors.append(f"{sec} must be an object")
            continue
        allowed = SECTION_KEYS.get(sec) or set(base[sec] or {})
        extra = sorted(set(given) - allowed)
        if extra:
            errors.append(f"unknown keys in {sec} for {name}: {extra}")
    cfg = _merge(base, {k: v for k, v in user.items() if k in COMMON and isinstance(v, (dict, type(None), str))})
    cfg["scenario"] = name
    cfg["master_seed"] = seed

    consts = cfg["constants"]
    for k in ("hbar", "mass", "charge"):
        _positive(consts, k, "constants", errors)
    try:
        constants = PhysicalConstants(float(consts["hbar"]), float(consts["mass"]), float(consts["charge"]))
    except (TypeError, ValueError, KeyError):
        constants = PhysicalConstants()

    g, sol, sde, ker, p = cfg["grid"], cfg["solver"], cfg["sde"], cfg["kernel"], cfg["params"]
    if g is not None:
        for k in ("x_min", "x_max", "n_points"):
            if k not in g:
                errors.append(f"grid.{k} missing")
        if not errors or all("grid." not in e for e in errors):
            if not g["x_max"] > g["x_min"]:
                errors.append("grid.x_max must exceed grid.x_min")
            _positive(g, "n_points", "grid", errors, integer=True)
            if isinstance(g.get("n_points"), int) and g["n_points"] < 8:
                errors.append("grid.n_points must be >= 8")
    if sol is not None:
        _positive(sol, "dt", "solver", errors)
        _positive(sol, "n_steps", "solver", errors, integer=True)
        _positive(sol, "frame_stride", "solver", errors, integer=True)
        if sol.get("n_steps") and sol.get("frame_stride") and isinstance(sol["n_steps"], int) \
                and isinstance(sol["frame_stride"], int) and sol["n_steps"] % sol["frame_stride"]:
            errors.append("solver.frame_stride must divide solver.n_steps")
    if sde is not None:
        _positive(sde, "dt", "sde", errors)
        _positive(sde, "n_steps", "sde", errors, integer=True)
        _positive(sde, "n_paths", "sde", errors, integer=True)
        _positive(sde, "rho_floor", "sde", errors)
        _positive(sde, "clamp_value", "sde", errors)
        _positive(sde, "block_size", "sde", errors, integer=True)
    if ker is not None:
        _positive(ker, "n_time_slices", "kernel", errors, integer=True)
        _positive(ker, "n_samples", "kernel", errors, integer=True)
        if ker.get("estimator", "expectation") not in ("expectation", "pinned"):
            errors.append("kernel.estimator must be 'expectation' or 'pinned'")

    # scenario-specific physics checks
    try:
        if name == "FreeGaussian" and not errors:
            _positive(p, "sigma0", "params", errors)
            t_end = sol["dt"] * sol["n_steps"]
            _containment(g, [p["q0"]], p["sigma0"], "params.q0", errors)
            _containment(g, [p["q0"] + p["p0"] * t_end / constants.mass],
                         free_gaussian_width(t_end, p["sigma0"], constants), "final packet", errors)
        elif name == "PlaneWaveCalibration" and not errors:
            a, b = p["interval"]
            if not g["x_min"] <= a < b <= g["x_max"]:
                errors.append("params.interval must lie inside the grid")
            _containment(g, [0.0], p["sigma0"], "rotation packet", errors)
        elif name == "DoubleSlit" and not errors:
            DoubleSlitSpec(p["slit_separation"], p["slit_width"], p["forward_momentum"], p["screen_time"])
            h = p["slit_separation"] / 2
            _containment(g, [-h, h], free_gaussian_width(p["screen_time"], p["slit_width"], constants),
                         "slit packets at screen time", errors)
            if sde.get("n_steps") is not None and \
                    abs(sde["n_steps"] * sde["dt"] - p["screen_time"]) > 1e-9 * p["screen_time"]:
                errors.append("sde.n_steps * sde.dt must equal params.screen_time")
        elif name == "KernelComparison" and not errors:
            _containment(g, [p["q0"]], p["sigma0"], "params.q0", errors)
        elif name in ("Entanglement", "H2PlusChannel") and not errors:
            T = p["screen_time"]
            h = p["separation"] / 2
            w = free_gaussian_width(T, p["width"], constants)
            _containment(g, [-h, h], p["width"], "orbitals", errors)
            _containment(g, [-h - p["momentum"] * T / constants.mass, h + p["momentum"] * T / constants.mass],
                         w, "orbitals at screen time", errors)
            if p["region_gap"] < 0:
                errors.append("params.region_gap must be >= 0")
        elif name == "HydrogenScaling":
            for k in ("Z", "n", "Z_max", "n_max"):
                _positive(p, k, "params", errors, integer=True)
        elif name == "UncertaintyScaling":
            _positive(p, "dt", "params", errors)
            if p.get("n_increments", 0) < 1000:
                errors.append("params.n_increments must be >= 1000")
    except (KeyError, TypeError) as exc:
        errors.append(f"params: missing or malformed entry {exc}")
    except ValueError as exc:
        errors.append(f"params: {exc}")

    if errors:
        return None, errors
    return ScenarioConfig(name, int(seed), constants, g, sol, sde, ker, p, cfg["thresholds"],
                          cfg.get("output_dir"), cfg), []


def load_config(path) -> ScenarioConfig:
    cfg, errors = validate_config(Path(path).read_text())
    if errors:
        raise ConfigInvalid(errors)
    return cfg


# -- reports ----------------------------------------------------------------


def _check(name: str, value, threshold, comparison: str, passed: bool) -> dict:
    return {"name": name, "value": value, "threshold": threshold, "comparison": comparison, "passed": bool(passed)}


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if np.isfinite(v) else str(v)
    return obj


@dataclass
class RunReport:
    scenario: str
    config: dict
    checks: list
    measured: dict
    artifacts: list

    @property
    def passed(self) -> bool:
        return all(c["passed"] for c in self.checks)

    def to_dict(self) -> dict:
        return _clean({
            "scenario": self.scenario,
            "config": self.config,
            "checks": self.checks,
            "measured": self.measured,
            "passed": self.passed,
        })

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


class _Ctx:
    def __init__(self, cfg: ScenarioConfig, out: Path | None, threads: int):
        self.cfg, self.out, self.threads = cfg, out, threads
        self.artifacts: list[str] = []

    def path(self, name: str) -> Path | None:
        if self.out is None:
            return None
        self.artifacts.append(name)
        return self.out / name

    def field(self, f, stem: str):
        if self.out is not None:
            write_field(f, self.out / stem, self.cfg.constants)
            self.artifacts += [stem + ".csv", stem + ".json"]

    def histogram(self, h, name: str):
        p = self.path(name)
        if p is not None:
            h.to_csv(p)

    def ensemble(self, ens, stem: str):
        if self.out is not None:
            ens.write(self.out, stem)
            self.artifacts += [f"{stem}_endpoints.csv", f"{stem}_manifest.json"]


def _grid(cfg: ScenarioConfig) -> Grid1D:
    return Grid1D(float(cfg.grid["x_min"]), float(cfg.grid["x_max"]), int(cfg.grid["n_points"]))


def _sde(cfg: ScenarioConfig, n_steps: int | None = None, **kw) -> SdeConfig:
    s = dict(cfg.sde)
    args = dict(dt=float(s["dt"]), n_steps=int(n_steps if n_steps is not None else s["n_steps"]),
                n_paths=int(s.get("n_paths", 1)), master_seed=cfg.master_seed,
                noise_on=bool(s.get("noise_on", True)), rho_floor=float(s.get("rho_floor", 1e-12)),
                clamp_value=s.get("clamp_value"), block_size=int(s.get("block_size", 4096)))
    args.update(kw)
    return SdeConfig(**args)


def _free_gaussian(ctx: _Ctx):
    cfg, c, p, th = ctx.cfg, ctx.cfg.constants, ctx.cfg.params, ctx.cfg.thresholds
    grid = _grid(cfg)
    sc = SolverConfig(float(cfg.solver["dt"]), int(cfg.solver["n_steps"]))
    t_end = sc.dt * sc.n_steps
    pot = Potential.free()
    f0 = gaussian_packet(grid, p["q0"], p["sigma0"], p["p0"], c)
    traj = propagate(f0, pot, sc, frame_stride=int(cfg.solver["frame_stride"]), constants=c)
    fT = traj[-1][0]
    exact = analytic_free_gaussian(grid, t_end, p["sigma0"], p["p0"], p["q0"], c)
    l2 = l2_distance(fT, exact)
    diag = conservation_diagnostics(traj, pot, c)
    for k, (f, frame) in enumerate(traj):
        if frame is not None:
            p_ = ctx.path(f"frame_{k:03d}.csv")
            if p_ is not None:
                write_frame_csv(frame, grid, p_)
    ctx.field(fT, "field_final")

    # forward, reverse, forward, reverse
    g = f0
    for _ in range(2):
        g = time_reverse(propagate(g, pot, sc, frame_stride=sc.n_steps, constants=c, observables=False)[-1][0])
    round_trip = float(np.max(np.hypot(g.phi_r - f0.phi_r, g.phi_c - f0.phi_c)))

    # ensemble round trip: noise-on paths forward, then through the reversed field back to t=0
    sde = _sde(cfg)
    T = sde.t_end
    fwd = SolverTrajectory(f0, pot, sde.dt / 2, T, c)
    ens = evolve_ensemble(fwd, sde, c, threads=ctx.threads)
    fT_sde = propagate(f0, pot, SolverConfig(sde.dt / 2, 2 * sde.n_steps), frame_stride=2 * sde.n_steps,
                       constants=c, observables=False)[-1][0]
    rev = time_reverse(fT_sde)
    back = SolverTrajectory(rev.with_components(rev.phi_r, rev.phi_c, 0.0), pot, sde.dt / 2, T, c)
    ens_back = evolve_ensemble(back, sde, c, initial_positions=ens.endpoint, threads=ctx.threads)
    bins = int(p["bins"])
    span = (p["q0"] - 6 * p["sigma0"], p["q0"] + 6 * p["sigma0"])
    h_back = endpoint_histogram(ens_back.endpoint, bins, span, (grid.x, f0.rho))
    iid = sample_from_density(f0, sde.n_paths, stream(cfg.master_seed, "baseline"))
    h_iid = endpoint_histogram(iid, bins, span, (grid.x, f0.rho))
    ctx.histogram(h_back, "round_trip_histogram.csv")
    ctx.ensemble(ens, "forward")
    ratio = h_back.l1 / h_iid.l1
    # the same round trip with the noise switched off returns each path to its start
    det = _sde(cfg, n_paths=min(sde.n_paths, 1000), noise_on=False)
    fwd_det = evolve_ensemble(SolverTrajectory(f0, pot, sde.dt / 2, T, c), det, c, threads=ctx.threads)
    back_det = evolve_ensemble(SolverTrajectory(rev.with_components(rev.phi_r, rev.phi_c, 0.0), pot, sde.dt / 2, T, c),
                               det, c, initial_positions=fwd_det.endpoint, threads=ctx.threads)
    bohm_return = float(np.max(np.abs(back_det.endpoint - fwd_det.positions[:, 0])))
    checks = [
        _check("solver_vs_analytic_l2", l2, th["l2"], "<", l2 < th["l2"]),
        _check("norm_drift", diag["norm_drift"], th["norm_drift"], "<", diag["norm_drift"] < th["norm_drift"]),
        _check("energy_drift_rel", diag["energy_drift_rel"], th["energy_drift"], "<",
               diag["energy_drift_rel"] < th["energy_drift"]),
        _check("time_reversal_round_trip", round_trip, th["round_trip"], "<", round_trip < th["round_trip"]),
        _check("noise_on_round_trip_l1_over_baseline", ratio, th["irreversibility_factor"], ">",
               ratio > th["irreversibility_factor"]),
        _check("noise_off_round_trip_max_abs", bohm_return, th["bohmian_return"], "<",
               bohm_return < th["bohmian_return"]),
    ]
    measured = {"t_end": t_end, "l2": l2, **diag, "round_trip_max_abs": round_trip,
                "round_trip_l1": h_back.l1, "bohmian_return_max_abs": bohm_return, "sampling_baseline_l1": h_iid.l1,
                "ensemble_counters": ens.counters, "reverse_counters": ens_back.counters}
    return checks, measured


def _harmonic(ctx: _Ctx):
    cfg, p, th = ctx.cfg, ctx.cfg.params, ctx.cfg.thresholds
    c0 = cfg.constants
    dt = float(cfg.sde["dt"])
    n = int(round(2 * np.pi / p["omega"] / dt))
    grid, pot, f0, c = coherent_state_setup(c0.hbar, p["omega"], p["amplitude"], n * dt, c0, noise_on=False,
                                            points_per_sigma=p["points_per_sigma"],
                                            points_per_wavelength=p["points_per_wavelength"])
    pot = Potential.harmonic(c.mass * p["omega"] ** 2)
    traj = SolverTrajectory(f0, pot, dt / 2, n * dt, c)
    times, path = bohmian_trajectory(p["amplitude"], traj, dt, n, c)
    tc, qc, _ = classical_trajectory(p["amplitude"], 0.0, pot, n * dt, dt / 8, c)
    qref = np.interp(times, tc, qc)
    err = float(np.max(np.abs(path - qref)))
    pth = ctx.path("bohmian_path.csv")
    if pth is not None:
        np.savetxt(pth, np.column_stack([times, path, qref]), delimiter=",", header="t,q_bohm,q_classical",
                   comments="", fmt="%.17g")
    checks = [_check("bohmian_vs_classical_max_error", err, th["max_error"], "<", err < th["max_error"])]
    return checks, {"max_error": err, "period": n * dt, "n_grid": grid.n_points, "dx": grid.dx}


def _plane_wave(ctx: _Ctx):
    cfg, c, p, th = ctx.cfg, ctx.cfg.constants, ctx.cfg.params, ctx.cfg.thresholds
    grid = _grid(cfg)
    a, b = p["interval"]
    w = plane_wave_window(grid, p["p0"], (a, b), p["chi"], c)
    inside = (grid.x > a + grid.dx) & (grid.x < b - grid.dx)
    measure = np.count_nonzero(inside) * grid.dx
    pf = momentum_functional(w, c, inside)
    mom_rel = abs(pf / measure - p["p0"]) / abs(p["p0"])
    j = flux(w, c)[inside]
    flux_rel = float(np.max(np.abs(j - p["p0"] / c.mass)) / abs(p["p0"] / c.mass))
    rho_dev = float(np.max(np.abs(w.rho[(grid.x >= a) & (grid.x <= b)] - 1.0)))
    ctx.field(w, "plane_wave")

    sc = SolverConfig(float(cfg.solver["dt"]), int(cfg.solver["n_steps"]))
    t = sc.dt * sc.n_steps
    f0 = gaussian_packet(grid, 0.0, p["sigma0"], p["p0"], c)
    free = propagate(f0, Potential.free(), sc, frame_stride=sc.n_steps, constants=c, observables=False)[-1][0]
    shifted = propagate(f0, Potential.constant(p["V0"]), sc, frame_stride=sc.n_steps, constants=c,
                        observables=False)[-1][0]
    target = rotate(free, -p["V0"] * t / c.hbar)
    rot_err = float(np.max(np.hypot(shifted.phi_r - target.phi_r, shifted.phi_c - target.phi_c)))
    rho_err = float(np.max(np.abs(shifted.rho - free.rho)))
    checks = [
        _check("momentum_functional_rel", mom_rel, th["momentum_rel"], "<", mom_rel < th["momentum_rel"]),
        _check("flux_rel", flux_rel, th["flux_rel"], "<", flux_rel < th["flux_rel"]),
        _check("window_density_deviation", rho_dev, th["rho"], "<=", rho_dev <= th["rho"]),
        _check("constant_potential_rotation", rot_err, th["rotation"], "<", rot_err < th["rotation"]),
        _check("constant_potential_rho", rho_err, th["rho"], "<", rho_err < th["rho"]),
    ]
    measured = {"momentum_functional": pf, "interval_measure": measure, "rotation_angle": -p["V0"] * t / c.hbar,
                "rotation_error": rot_err, "rho_error": rho_err}
    return checks, measured


def _double_slit(ctx: _Ctx):
    cfg, c, p, th = ctx.cfg, ctx.cfg.constants, ctx.cfg.params, ctx.cfg.thresholds
    grid = _grid(cfg)
    spec = DoubleSlitSpec(p["slit_separation"], p["slit_width"], p["forward_momentum"], p["screen_time"])
    T = spec.screen_time
    dt = float(cfg.sde["dt"])
    n = int(round(T / dt))
    traj = AnalyticTrajectory(lambda t: double_slit_field(spec, t, grid, c), 0.0, n * dt, dt / 2)
    ref = double_slit_field(spec, n * dt, grid, c)
    ctx.field(ref, "screen_field")
    span, bins = tuple(p["range"]), int(p["bins"])
    out = {}
    checks = []
    iid = sample_from_density(ref, int(cfg.sde["n_paths"]), stream(cfg.master_seed, "baseline"))
    h_iid = endpoint_histogram(iid, bins, span, (grid.x, ref.rho))
    checks.append(_check("sampling_baseline_l1", h_iid.l1, th["baseline_l1"], "<", h_iid.l1 < th["baseline_l1"]))
    for noise in (False, True):
        label = "noise_on" if noise else "noise_off"
        ens = evolve_ensemble(traj, _sde(cfg, n, noise_on=noise), c, threads=ctx.threads)
        h = endpoint_histogram(ens.endpoint, bins, span, (grid.x, ref.rho))
        tol = th["noise_on_bins"] if noise else th["noise_off_bins"]
        rep = fringe_report(h, None, th["l1"], tol)
        ctx.histogram(h, f"histogram_{label}.csv")
        out[label] = {**rep.to_dict(), "counters": ens.counters}
        if noise:
            checks.append(_check("noise_on_l1", rep.l1, th["l1"], "<", rep.l1 < th["l1"]))
        checks.append(_check(f"{label}_minima_offset_bins", rep.max_offset_bins, tol, "<=",
                             rep.count_match and rep.max_offset_bins <= tol))
    out["sampling_baseline_l1"] = h_iid.l1
    out["fringe_spacing_far_field"] = spec.fringe_spacing(T, c)
    return checks, out


def _hydrogen(ctx: _Ctx):
    c, p, th = ctx.cfg.constants, ctx.cfg.params, ctx.cfg.thresholds
    a0 = c.hbar**2 / (c.mass * c.charge**2)
    e0 = c.mass * c.charge**4 / c.hbar**2
    main = hydrogen_scaling(int(p["Z"]), int(p["n"]), c)
    worst = 0.0
    table = []
    for Z in range(1, int(p["Z_max"]) + 1):
        for n in range(1, int(p["n_max"]) + 1):
            r = hydrogen_scaling(Z, n, c)
            worst = max(worst, abs(r.radius * Z / n**2 - a0) / a0, abs(r.energy + Z**2 / (2 * n**2) * e0) / e0)
            table.append([Z, n, r.radius, r.energy])
    stat = [scaling_stationarity_check(Z, c) for Z in range(1, int(p["Z_max"]) + 1)]
    worst_arg = max(s["relative_error"] for s in stat)
    worst_grad = max(abs(s["dH_at_min"]) for s in stat)
    pth = ctx.path("hydrogen_table.csv")
    if pth is not None:
        np.savetxt(pth, np.array(table), delimiter=",", header="Z,n,radius,energy", comments="", fmt="%.17g")
    exp_r = int(p["n"]) ** 2 * a0 / int(p["Z"])
    exp_e = -int(p["Z"]) ** 2 * e0 / (2 * int(p["n"]) ** 2)
    checks = [
        _check("radius", main.radius, exp_r, "==", abs(main.radius - exp_r) <= th["identity"] * exp_r),
        _check("energy", main.energy, exp_e, "==", abs(main.energy - exp_e) <= th["identity"] * abs(exp_e)),
        _check("identity_grid_max_rel", worst, th["identity"], "<=", worst <= th["identity"]),
        _check("stationarity_argmin_rel", worst_arg, th["argmin_rel"], "<", worst_arg < th["argmin_rel"]),
        _check("stationarity_gradient", worst_grad, th["gradient"], "<", worst_grad < th["gradient"]),
    ]
    return checks, {"radius": main.radius, "energy": main.energy, "Z": main.Z, "n": main.n, "stationarity": stat}


def _uncertainty(ctx: _Ctx):
    cfg, c, p, th = ctx.cfg, ctx.cfg.constants, ctx.cfg.params, ctx.cfg.thresholds
    n, dt, k = int(p["n_increments"]), float(p["dt"]), th["n_se"]
    inc = drift_free_increments(n, dt, c, cfg.master_seed)
    est = uncertainty_estimators(inc, dt, c)
    inc4 = drift_free_increments(n, dt / 4, c, cfg.master_seed + 1)
    est4 = uncertainty_estimators(inc4, dt / 4, c)
    inc2 = drift_free_increments(n, dt / 2, c, cfg.master_seed + 2)
    est2 = uncertainty_estimators(inc2, dt / 2, c)
    target = c.hbar / c.mass
    se = est["pq_stderr"] / c.mass
    checks = [
        _check("var_over_dt", est["var_over_dt"], target, f"within {k} se",
               abs(est["var_over_dt"] - target) < k * se),
        _check("scaling_dq_half_dt_quarter", est4["var_over_dt"], est["var_over_dt"], f"within {k} se",
               abs(est4["var_over_dt"] - est["var_over_dt"]) < k * np.hypot(se, est4["pq_stderr"] / c.mass)),
        _check("pq_product", est["pq_product"], c.hbar, f"within {k} se",
               abs(est["pq_product"] - c.hbar) < k * est["pq_stderr"]),
        _check("Et_product", est["Et_product"], c.hbar / 2, f"within {k} se",
               abs(est["Et_product"] - c.hbar / 2) < k * est["Et_stderr"]),
        _check("pq_product_half_dt", est2["pq_product"], est["pq_product"], f"within {k} se",
               abs(est2["pq_product"] - est["pq_product"]) < k * np.hypot(est["pq_stderr"], est2["pq_stderr"])),
    ]
    std_ratio = float(inc4.std() / inc.std())
    return checks, {"dt": est, "dt_over_4": est4, "dt_over_2": est2, "dq_std_ratio_quarter_dt": std_ratio}


def _kernel(ctx: _Ctx):
    cfg, c, p, th = ctx.cfg, ctx.cfg.constants, ctx.cfg.params, ctx.cfg.thresholds
    grid = _grid(cfg)
    pot = Potential.harmonic(p["k"])
    f0 = gaussian_packet(grid, p["q0"], p["sigma0"], p["p0"], c)
    kc = KernelConfig(int(cfg.kernel["n_time_slices"]), int(cfg.kernel["n_samples"]), cfg.master_seed,
                      cfg.kernel.get("estimator", "expectation"), int(cfg.kernel.get("block_size", 8192)))
    fields: dict = {}
    rep = compare_propagations(f0, pot, p["t"], kc, float(cfg.solver["dt"]), c, ctx.threads, fields)
    tm = fields["transfer"]
    errs = []
    for m in p["slope_samples"]:
        if m == kc.n_samples:
            est = fields["monte_carlo"]
        else:
            sub = KernelConfig(kc.n_time_slices, int(m), cfg.master_seed, kc.estimator, kc.block_size)
            est = propagate_by_kernel(f0, p["t"], pot, sub, c, ctx.threads)
        errs.append(l2_distance(est.field, tm))
    slope = float(np.polyfit(np.log(p["slope_samples"]), np.log(errs), 1)[0])
    ctx.field(fields["monte_carlo"].field, "kernel_mc")
    ctx.field(tm, "kernel_transfer")
    ctx.field(fields["solver"], "solver")
    checks = [
        _check("within_3se_fraction", rep.within_3se_fraction, th["within_3se"], ">=",
               rep.within_3se_fraction >= th["within_3se"]),
        _check("mc_error_slope", slope, [th["slope"] - th["slope_tol"], th["slope"] + th["slope_tol"]], "in",
               abs(slope - th["slope"]) <= th["slope_tol"]),
    ]
    measured = {**rep.to_dict(), "slope_samples": p["slope_samples"], "slope_errors": errs, "slope": slope,
                "solver_vs_kernel_gap_reported_only": rep.distances["solver_vs_transfer"]}
    return checks, measured


def _entanglement(ctx: _Ctx):
    cfg, c, p, th = ctx.cfg, ctx.cfg.constants, ctx.cfg.params, ctx.cfg.thresholds
    grid = Grid2D(_grid(cfg))
    spec = EntangledPairSpec(Orbital(-p["separation"] / 2, p["width"], -p["momentum"]),
                             Orbital(p["separation"] / 2, p["width"], p["momentum"]))
    worst = 0.0
    for t in p["probe_times"]:
        f = entangled_pair_field(spec, float(t), grid, c)
        worst = max(worst, float(np.max(np.abs(f.phi_r + f.phi_r.T))), float(np.max(np.abs(f.phi_c + f.phi_c.T))),
                    float(np.max(np.abs(f.rho - f.rho.T))), float(np.max(np.abs(np.diag(f.rho)))))
    dt = float(cfg.sde["dt"])
    n = int(round(p["screen_time"] / dt))
    ens = two_particle_sde_run(spec, _sde(cfg, n), grid, c, ctx.threads, frame_spacing=dt / 2)
    gap = p["region_gap"]
    A, B = (grid.axis.x_min, -gap), (gap, grid.axis.x_max)
    st = channel_statistics(ens, A, B)
    swapped = channel_statistics(ens, B, A)
    ctx.ensemble(ens, "pairs")
    lo, hi = th["frac_AB"]
    total = st["frac_AB"] + st["frac_BA"] + st["frac_undecided"]
    checks = [
        _check("frac_AB", st["frac_AB"], [lo, hi], "in", lo <= st["frac_AB"] <= hi),
        _check("frac_undecided", st["frac_undecided"], th["undecided"], "<", st["frac_undecided"] < th["undecided"]),
        _check("antisymmetry", worst, th["antisymmetry"], "<=", worst <= th["antisymmetry"]),
        _check("fractions_sum", total, 1.0, "==", st["n_AB"] + st["n_BA"] + st["n_undecided"] == st["n"]),
        _check("region_swap_exchanges", swapped["n_AB"], st["n_BA"], "==",
               swapped["n_AB"] == st["n_BA"] and swapped["n_BA"] == st["n_AB"]),
    ]
    return checks, {"channels": st, "antisymmetry_max": worst, "counters": ens.counters}


def _h2plus(ctx: _Ctx):
    cfg, c, p, th = ctx.cfg, ctx.cfg.constants, ctx.cfg.params, ctx.cfg.thresholds
    grid = _grid(cfg)
    dt = float(cfg.sde["dt"])
    n = int(round(p["screen_time"] / dt))
    traj = AnalyticTrajectory(lambda t: separating_pair_field(p["separation"], p["width"], p["momentum"], t, grid, c),
                              0.0, n * dt, dt / 2)
    ens = evolve_ensemble(traj, _sde(cfg, n), c, threads=ctx.threads)
    gap = p["region_gap"]
    st = channel_statistics(ens, (grid.x_min, -gap), (gap, grid.x_max))
    ctx.ensemble(ens, "electron")
    half = th["n_sigma"] * np.sqrt(0.25 / st["n"])
    checks = [
        _check("frac_left", st["frac_AB"], [0.5 - half, 0.5 + half], "in", abs(st["frac_AB"] - 0.5) <= half),
        _check("frac_undecided", st["frac_undecided"], th["undecided"], "<", st["frac_undecided"] < th["undecided"]),
    ]
    return checks, {"channels": st, "counters": ens.counters}


def _classical_limit(ctx: _Ctx):
    cfg, p = ctx.cfg, ctx.cfg.params
    rep = classical_limit_run(tuple(p["hbar_scales"]), int(cfg.sde["n_paths"]), float(cfg.sde["dt"]), p["omega"],
                              p["amplitude"], p["t_end"], cfg.master_seed,
                              PhysicalConstants(mass=cfg.constants.mass, charge=cfg.constants.charge),
                              ctx.threads, p["rho_floor"])
    checks = [_check("deviation_monotone", rep.max_deviation, "decreasing", "monotone", rep.monotone)]
    return checks, rep.to_dict()


RUNNERS = {
    "FreeGaussian": _free_gaussian,
    "Harmonic": _harmonic,
    "PlaneWaveCalibration": _plane_wave,
    "DoubleSlit": _double_slit,
    "HydrogenScaling": _hydrogen,
    "UncertaintyScaling": _uncertainty,
    "KernelComparison": _kernel,
    "Entanglement": _entanglement,
    "H2PlusChannel": _h2plus,
    "ClassicalLimit": _classical_limit,
}


def run_scenario(cfg: ScenarioConfig, out: str | Path | None = None, threads: int = 1) -> RunReport:
    """Run one scenario; writes artifacts plus ``report.json`` and ``manifest.json`` when ``out`` is set."""
    out = Path(out) if out is not None else (Path(cfg.output_dir) if cfg.output_dir else None)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    ctx = _Ctx(cfg, out, max(1, int(threads)))
    started = _dt.datetime.now(_dt.timezone.utc)
    t0 = time.perf_counter()
    try:
        checks, measured = RUNNERS[cfg.scenario](ctx)
    except (ValueError, RuntimeError, ArithmeticError, PacketTruncated) as exc:
        raise StageFailure(f"{cfg.scenario}: {type(exc).__name__}: {exc}") from exc
    report = RunReport(cfg.scenario, cfg.resolved(), checks, measured, sorted(ctx.artifacts))
    if out is not None:
        (out / "report.json").write_text(report.to_json())
        manifest = {
            "scenario": cfg.scenario,
            "equation_tags": EQUATION_TAGS[cfg.scenario],
            "artifacts": sorted(ctx.artifacts) + ["report.json"],
            "started_utc": started.isoformat(),
            "runtime_s": time.perf_counter() - t0,
            "threads": ctx.threads,
            "master_seed": cfg.master_seed,
            "version": __version__,
            "numpy": np.__version__,
        }
        (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return report


def _print_checks(report: RunReport, stream_=sys.stdout):
    for chk in report.checks:
        flag = "PASS" if chk["passed"] else "FAIL"
        print(f"[{flag}] {report.scenario}.{chk['name']}: value={_clean(chk['value'])} "
              f"{chk['comparison']} {_clean(chk['threshold'])}", file=stream_)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="dualpath", description="Run and validate dual-path scenarios.")
    sub = ap.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run a scenario config")
    r.add_argument("--config", required=True)
    r.add_argument("--out", default=None, help="output directory (default: output_dir in config, else runs/<scenario>)")
    r.add_argument("--seed-override", type=int, default=None)
    r.add_argument("--threads", type=int, default=1)
    v = sub.add_parser("validate", help="check a config without running it")
    v.add_argument("--config", required=True)
    args = ap.parse_args(argv)

    try:
        text = Path(args.config).read_text()
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return 2
    if args.command == "run" and args.seed_override is not None:
        try:
            raw = json.loads(text)
            raw["master_seed"] = args.seed_override
            text = json.dumps(raw)
        except (json.JSONDecodeError, TypeError):
            pass
    cfg, errors = validate_config(text)
    if errors:
        for e in errors:
            print(f"config error: {e}", file=sys.stderr)
        return 2
    if args.command == "validate":
        print(json.dumps(_clean(cfg.resolved()), indent=2, sort_keys=True))
        return 0
    out = args.out or cfg.output_dir or f"runs/{cfg.scenario}"
    try:
        report = run_scenario(cfg, out, args.threads)
    except StageFailure as exc:
        print(f"stage failure: {exc}", file=sys.stderr)
        return 3
    _print_checks(report)
    print(f"{'PASS' if report.passed else 'FAIL'}: {report.scenario} -> {out}/report.json")
    return 0 if report.passed else 1


if __name__ == "__main__":
    sys.exit(main())
