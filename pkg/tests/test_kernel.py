import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dualpath.core import Grid1D, PhysicalConstants, Potential, gaussian_packet, rotate
from dualpath.kernel import (
    KernelConfig,
    KernelUnderresolved,
    RotationWeight,
    compare_propagations,
    heat_smooth,
    l2_distance,
    propagate_by_kernel,
    rotation_weight,
    sample_wiener_path,
    transfer_matrix_propagate,
    write_audit_paths,
)
from dualpath.rng import stream

C = PhysicalConstants()


def test_config_validation():
    with pytest.raises(ValueError):
        KernelConfig(n_time_slices=0)
    with pytest.raises(ValueError):
        KernelConfig(n_samples=0)
    with pytest.raises(ValueError):
        KernelConfig(estimator="other")


def test_wiener_increment_variance():
    rng = stream(11, "test")
    n, dt = 100_000, 0.3
    inc = np.array([np.diff(sample_wiener_path(0.0, dt, 1, C, rng))[0] for _ in range(n)])
    var = inc.var(ddof=1)
    se = var * np.sqrt(2 / (n - 1))
    assert abs(var - dt) < 3 * se
    assert abs(var / dt - 1) < 5 / np.sqrt(n)


def test_wiener_variance_additive_and_zero_time():
    rng = stream(12, "test")
    paths = np.array([sample_wiener_path(1.0, 2.0, 8, C, rng) for _ in range(20_000)])
    total = paths[:, -1] - paths[:, 0]
    se = total.var() * np.sqrt(2 / total.size)
    assert abs(total.var(ddof=1) - 2.0) < 3 * se
    assert np.all(sample_wiener_path(1.5, 0.0, 5, C, rng) == 1.5)


def test_rotation_weight_examples():
    path = np.array([0.1, -0.3, 0.7, 1.2])
    assert rotation_weight(path, Potential.free(), 0.1).angle == 0.0
    assert np.array_equal(rotation_weight(path, Potential.free(), 0.1).matrix, np.eye(2))
    w = rotation_weight(path, Potential.constant(2.0), 0.1)
    assert w.angle == pytest.approx(-2.0 * 0.3)


@given(arrays(float, 9, elements=st.floats(-5, 5)), st.floats(1e-3, 1.0))
def test_rotation_weight_orthogonal(values, dt):
    g = Grid1D(-4, 4, 9)
    pot = Potential.tabulated(g, values)
    path = np.linspace(-3.5, 3.5, 6)
    m = rotation_weight(path, pot, dt).matrix
    assert np.allclose(m.T @ m, np.eye(2), atol=1e-14)
    assert np.linalg.det(m) == pytest.approx(1.0, abs=1e-14)


@settings(max_examples=30)
@given(arrays(float, 12, elements=st.floats(-3, 3)), st.integers(1, 10))
def test_rotation_weight_composes(path, k):
    pot = Potential.harmonic(1.3)
    whole = rotation_weight(path, pot, 0.05)
    a = rotation_weight(path[: k + 1], pot, 0.05)
    b = rotation_weight(path[k:], pot, 0.05)
    assert abs((a @ b).angle - whole.angle) < 1e-13
    assert np.allclose((a @ b).matrix, a.matrix @ b.matrix, atol=1e-13)


def test_free_kernel_is_heat_smoothing():
    g = Grid1D(-6, 6, 61)
    f0 = gaussian_packet(g, 0.0, 0.6)
    t = 0.4
    exact = heat_smooth(f0, t)
    errs = []
    for n in (1000, 16000):
        est = propagate_by_kernel(f0, t, Potential.free(), KernelConfig(4, n, master_seed=5))
        errs.append(l2_distance(est.field, exact))
        pooled = np.sqrt(np.sum(est.stderr**2) * g.dx)
        assert errs[-1] < 3 * pooled
    # error ~ n^-1/2: a 16x increase in samples should cut it by roughly 4
    assert errs[1] < errs[0] / 2


def test_constant_potential_kernel_rotates_heat_smoothing():
    g = Grid1D(-6, 6, 61)
    f0 = gaussian_packet(g, 0.0, 0.6, 1.0)
    t, V0 = 0.4, 1.7
    est0 = propagate_by_kernel(f0, t, Potential.free(), KernelConfig(4, 2000, master_seed=1))
    estV = propagate_by_kernel(f0, t, Potential.constant(V0), KernelConfig(4, 2000, master_seed=1))
    target = rotate(est0.field, -V0 * t)
    assert np.max(np.abs(estV.field.phi_r - target.phi_r)) < 1e-13
    assert np.max(np.abs(estV.field.phi_c - target.phi_c)) < 1e-13


def test_zero_time_recovers_field():
    g = Grid1D(-6, 6, 61)
    f0 = gaussian_packet(g, 0.0, 0.6, 1.0)
    est = propagate_by_kernel(f0, 0.0, Potential.harmonic(1.0), KernelConfig(4, 100))
    assert est.field is f0
    est = propagate_by_kernel(f0, 1e-8, Potential.harmonic(1.0), KernelConfig(4, 200))
    assert l2_distance(est.field, f0) < 1e-3


def test_transfer_matrix_free_is_semigroup():
    g = Grid1D(-10, 10, 201)
    f0 = gaussian_packet(g, 0.0, 0.8, 0.5)
    dt, n = 0.05, 8
    tm = transfer_matrix_propagate(f0, Potential.free(), dt, n)
    exact = heat_smooth(f0, dt * n)
    assert l2_distance(tm, exact) < 1e-10
    norms = []
    transfer_matrix_propagate(f0, Potential.free(), dt, n, norms=norms)
    assert len(norms) == n + 1 and all(b < a for a, b in zip(norms, norms[1:]))


def test_transfer_matrix_underresolved():
    g = Grid1D(-10, 10, 201)
    f0 = gaussian_packet(g, 0.0, 0.8)
    with pytest.raises(KernelUnderresolved):
        transfer_matrix_propagate(f0, Potential.free(), 0.01, 4)


def test_mc_matches_transfer_matrix_harmonic():
    g = Grid1D(-6, 6, 97)
    f0 = gaussian_packet(g, 0.0, 1.0, 1.0)
    pot = Potential.harmonic(1.0)
    t, n = 0.5, 8
    tm = transfer_matrix_propagate(f0, pot, t / n, n)
    est = propagate_by_kernel(f0, t, pot, KernelConfig(n, 20_000, master_seed=3))
    gap = np.hypot(est.field.phi_r - tm.phi_r, est.field.phi_c - tm.phi_c)
    assert np.mean(gap <= 3 * est.stderr + 1e-300) >= 0.95


def test_pinned_estimator_is_consistent():
    g = Grid1D(-6, 6, 81)
    f0 = gaussian_packet(g, 0.0, 1.0, 1.0)
    pot = Potential.harmonic(1.0)
    t, n = 0.5, 4
    tm = transfer_matrix_propagate(f0, pot, t / n, n)
    est = propagate_by_kernel(f0, t, pot, KernelConfig(n, 1500, master_seed=2, estimator="pinned"))
    gap = np.hypot(est.field.phi_r - tm.phi_r, est.field.phi_c - tm.phi_c)
    assert np.mean(gap <= 4 * est.stderr + 1e-6) >= 0.9


def test_thread_count_does_not_change_result():
    g = Grid1D(-6, 6, 25)
    f0 = gaussian_packet(g, 0.0, 1.0, 1.0)
    cfg = KernelConfig(4, 3000, master_seed=9, block_size=1000)
    a = propagate_by_kernel(f0, 0.5, Potential.harmonic(1.0), cfg, threads=1)
    b = propagate_by_kernel(f0, 0.5, Potential.harmonic(1.0), cfg, threads=3)
    assert np.array_equal(a.field.phi_r, b.field.phi_r) and np.array_equal(a.field.phi_c, b.field.phi_c)
    assert np.array_equal(a.stderr, b.stderr)


def test_compare_reports_solver_gap(tmp_path):
    g = Grid1D(-6, 6, 97)
    f0 = gaussian_packet(g, 0.0, 1.0, 1.0)
    rep = compare_propagations(f0, Potential.free(), 0.5, KernelConfig(8, 2000, master_seed=1), 0.005)
    # heat smoothing and Schroedinger dispersion differ: the gap is reported, not asserted small
    assert rep.distances["solver_vs_transfer"] > 0.05
    assert rep.norms["transfer"] < rep.norms["initial"]
    rep.write(tmp_path / "cmp.json")
    d = json.loads((tmp_path / "cmp.json").read_text())
    assert set(d["distances"]) == {"solver_vs_transfer", "solver_vs_mc", "mc_vs_transfer"}


def test_audit_paths(tmp_path):
    g = Grid1D(-6, 6, 17)
    f0 = gaussian_packet(g, 0.0, 1.0)
    est = propagate_by_kernel(f0, 0.5, Potential.free(), KernelConfig(4, 50), audit_cap=10)
    assert len(est.audit_paths) == 10
    write_audit_paths(est, tmp_path / "audit.csv")
    lines = (tmp_path / "audit.csv").read_text().splitlines()
    assert lines[0] == "node,q0,q1,q2,q3,q4" and len(lines) == 11


def test_rotation_weight_type():
    w = RotationWeight(0.3) @ RotationWeight(-0.1)
    assert w.angle == pytest.approx(0.2)
