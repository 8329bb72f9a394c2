import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import discrete_ground_state
from dualpath.core import Grid1D, PhysicalConstants, Potential, gaussian_packet
from dualpath.core import plane_wave_window
from dualpath.scenarios import analytic_free_gaussian, free_gaussian_width
from dualpath.solver import (
    GridResolutionWarning,
    SolverConfig,
    conservation_diagnostics,
    continuity_residual,
    flagged_nodes,
    flux,
    local_energy,
    local_velocity,
    observe,
    phase_angle,
    propagate,
    step,
    step_complex,
    time_reverse,
    write_frame_csv,
)

C = PhysicalConstants()


def test_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(dt=0.0, n_steps=1)
    with pytest.raises(ValueError):
        SolverConfig(dt=0.1, n_steps=-1)
    g = Grid1D(-1, 1, 21)
    assert SolverConfig(1e-3, 1).explicit_stable(g, C)
    assert not SolverConfig(1.0, 1).explicit_stable(g, C)


def test_eigenstate_one_step():
    g = Grid1D(-8, 8, 401)
    pot = Potential.harmonic(1.0)
    E0, f = discrete_ground_state(g, pot)
    dt = 0.01
    f1 = step(f, pot, SolverConfig(dt, 1))
    assert np.max(np.abs(f1.rho - f.rho)) < 1e-10
    # Crank-Nicolson phase per step for an eigenvalue E: -2 arctan(E dt / 2 hbar)
    angle = np.arctan2(f1.phi_c, f1.phi_r)
    live = f.rho > 1e-6 * f.rho.max()
    assert np.allclose(angle[live], -2 * np.arctan(E0 * dt / 2), atol=1e-12)
    assert np.allclose(angle[live], -E0 * dt, atol=1e-6)
    E_loc = local_energy(f, pot)
    assert np.max(np.abs(E_loc[f.rho > 1e-12 * f.rho.max()] - E0)) < 1e-6


def test_free_gaussian_at_rest_matches_closed_form():
    g = Grid1D(-12, 12, 2048)
    f0 = gaussian_packet(g, 0.0, 1.0)
    cfg = SolverConfig(0.005, 400)
    fT = propagate(f0, Potential.free(), cfg, frame_stride=400, observables=False)[-1][0]
    exact = analytic_free_gaussian(g, 2.0, 1.0)
    assert np.sqrt(np.sum((fT.rho - exact.rho) ** 2) * g.dx) < 1e-4
    var = np.sum(g.x**2 * fT.rho) * g.dx
    assert var == pytest.approx(free_gaussian_width(2.0, 1.0) ** 2, rel=1e-4)


def test_constant_potential_is_rigid_rotation():
    g = Grid1D(-10, 10, 512)
    f0 = gaussian_packet(g, 0.0, 1.0, 1.0)
    cfg = SolverConfig(0.01, 50)
    V0 = 0.8
    a = propagate(f0, Potential.free(), cfg, frame_stride=50, observables=False)[-1][0]
    b = propagate(f0, Potential.constant(V0), cfg, frame_stride=50, observables=False)[-1][0]
    assert np.max(np.abs(a.rho - b.rho)) < 1e-12
    rel = np.angle((b.phi_r + 1j * b.phi_c) / (a.phi_r + 1j * a.phi_c))
    live = a.rho > 1e-8
    assert np.allclose(rel[live], np.angle(np.exp(-1j * V0 * 0.5)), atol=1e-10)


def test_real_and_complex_steps_agree():
    g = Grid1D(-8, 8, 300)
    f = gaussian_packet(g, -1.0, 0.8, 2.0)
    pot = Potential.harmonic(0.7)
    cfg = SolverConfig(0.01, 1)
    a, b = f, f
    for _ in range(20):
        a = step(a, pot, cfg)
        b = step_complex(b, pot, cfg)
    assert np.max(np.abs(a.phi_r - b.phi_r)) < 1e-14
    assert np.max(np.abs(a.phi_c - b.phi_c)) < 1e-14


def test_propagate_zero_steps_and_conservation():
    g = Grid1D(-10, 10, 256)
    f0 = gaussian_packet(g, 0.5, 1.0, 0.5)
    pot = Potential.harmonic(1.0)
    out = propagate(f0, pot, SolverConfig(0.01, 0))
    assert len(out) == 1 and out[0][0] is f0
    traj = propagate(f0, pot, SolverConfig(0.01, 10_000), frame_stride=1000, observables=False)
    diag = conservation_diagnostics(traj, pot)
    assert diag["norm_drift"] < 1e-10
    assert diag["energy_drift_rel"] < 1e-8


def test_flux_and_velocity():
    g = Grid1D(-10, 10, 801)
    real = gaussian_packet(g, 0.0, 1.0)
    assert np.all(flux(real) == 0)
    assert np.all(local_velocity(real) == 0)
    w = plane_wave_window(g, 1.5, (-4, 4))
    inside = (g.x > -4 + g.dx) & (g.x < 4 - g.dx)
    assert np.allclose(flux(w)[inside], np.sin(1.5 * g.dx) / g.dx, rtol=1e-12)
    f = gaussian_packet(g, 0.0, 1.0, 1.2)
    v = local_velocity(f)
    live = ~flagged_nodes(f)
    core = np.abs(g.x) < 2.0
    assert np.allclose(v[core], 1.2, rtol=1e-3)
    # central differences of a Gaussian amplitude give a cosh(x dx / 2 sigma^2) factor in the tails
    assert np.allclose(v[live], 1.2, rtol=1e-2)
    assert np.max(np.abs(v[live] * f.rho[live] - flux(f)[live])) < 1e-15
    assert np.allclose(flux(f)[core], 1.2 * f.rho[core], rtol=1e-3)


def test_velocity_linear_for_dispersing_packet():
    g = Grid1D(-15, 15, 3001)
    t, s0 = 1.5, 1.0
    f = analytic_free_gaussian(g, t, s0)
    v = local_velocity(f)
    # exact: v = x t / (4 m^2 s0^4 / hbar^2 + t^2)
    exact = g.x * t / (4 * s0**4 + t**2)
    st_ = free_gaussian_width(t, s0)
    core = np.abs(g.x) <= 2 * st_
    core &= np.abs(g.x) > 0.05
    assert np.max(np.abs(v[core] - exact[core]) / np.abs(exact[core])) < 1e-3


def test_phase_angle():
    g = Grid1D(-5, 5, 1001)
    th = phase_angle(gaussian_packet(g, 0.0, 0.5))
    assert np.all(th[~np.isnan(th)] == 0) and np.isnan(th[0])
    w = plane_wave_window(g, 2.0, (-5, 5))
    th = phase_angle(w)
    assert np.allclose(th - th[500], 2.0 * g.x - 2.0 * g.x[500], atol=1e-12)
    f = gaussian_packet(g, 0.0, 0.8, 3.0)
    th = phase_angle(f)
    live = ~np.isnan(th)
    assert np.allclose(np.diff(th[live]) / g.dx, 3.0, rtol=1e-12)


def test_phase_angle_warns_when_underresolved():
    g = Grid1D(-5, 5, 41)
    f = gaussian_packet(g, 0.0, 0.8, 12.0)
    with warnings.catch_warnings(record=True) as rec:
        warnings.simplefilter("always")
        phase_angle(f)
    assert any(issubclass(r.category, GridResolutionWarning) for r in rec)


def test_time_reverse():
    g = Grid1D(-8, 8, 400)
    real = gaussian_packet(g, 0.0, 1.0)
    r = time_reverse(real)
    assert np.array_equal(r.phi_r, real.phi_r) and np.all(r.phi_c == 0)
    f = gaussian_packet(g, 0.0, 1.0, 1.0)
    assert np.array_equal(flux(time_reverse(f)), -flux(f))
    pot = Potential.harmonic(0.5)
    cfg = SolverConfig(0.01, 150)
    h = f
    for _ in range(2):
        h = time_reverse(propagate(h, pot, cfg, frame_stride=150, observables=False)[-1][0])
    assert np.max(np.hypot(h.phi_r - f.phi_r, h.phi_c - f.phi_c)) < 1e-8


def test_continuity_residual():
    g = Grid1D(-8, 8, 401)
    pot = Potential.harmonic(1.0)
    _, f = discrete_ground_state(g, pot)
    f1 = step(f, pot, SolverConfig(0.01, 1))
    assert continuity_residual(f, f1, 0.01) < 1e-8
    m = gaussian_packet(g, 0.0, 1.0, 1.0)
    r = continuity_residual(m, m, 0.3)
    j = flux(m)
    div = np.gradient(j, g.dx)[1:-1]
    assert r == pytest.approx(np.sqrt(np.sum(div**2) * g.dx), rel=1e-12)


def test_continuity_residual_decreases_under_refinement():
    res = []
    for n, dt in ((201, 0.02), (401, 0.01), (801, 0.005)):
        g = Grid1D(-10, 10, n)
        f = gaussian_packet(g, 0.0, 1.0, 1.0)
        f1 = step(f, Potential.free(), SolverConfig(dt, 1))
        res.append(continuity_residual(f, f1, dt))
    assert res[0] > res[1] > res[2]


@settings(max_examples=15, deadline=None)
@given(st.floats(-2, 2), st.floats(0.6, 1.5), st.floats(-2, 2), st.floats(0.005, 0.05))
def test_step_preserves_norm(q0, sigma, p0, dt):
    g = Grid1D(-10, 10, 256)
    f = gaussian_packet(g, q0, sigma, p0)
    f1 = step(f, Potential.harmonic(1.0), SolverConfig(dt, 1))
    assert abs(f1.norm() - f.norm()) < 1e-12


def test_frame_csv(tmp_path):
    g = Grid1D(-6, 6, 64)
    f = gaussian_packet(g, 0.0, 1.0, 1.0)
    fr = observe(f, Potential.free())
    write_frame_csv(fr, g, tmp_path / "frame.csv")
    lines = (tmp_path / "frame.csv").read_text().splitlines()
    assert lines[0] == "x,rho,j,v,E_local,theta"
    assert len(lines) == 65
