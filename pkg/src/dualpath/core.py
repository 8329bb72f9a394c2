"""Constants, grids, potentials and the two-component real field.

The wavefunction is carried as a pair of real arrays ``(phi_r, phi_c)``;
the symplectic matrix ``J = [[0, -1], [1, 0]]`` plays the role of ``i``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np


class ZeroNorm(ValueError):
    pass


class PacketTruncated(ValueError):
    pass


# Symplectic generator; J @ J == -I.
J = np.array([[0.0, -1.0], [1.0, 0.0]])


@dataclass(frozen=True)
class PhysicalConstants:
    hbar: float = 1.0
    mass: float = 1.0
    charge: float = 1.0
    # calibration constants of the real formulation: p = -J hbar grad
    c_p_sign: float = -1.0
    c_t: float = 1.0

    def __post_init__(self):
        if not (self.hbar > 0 and self.mass > 0 and self.charge > 0):
            raise ValueError("hbar, mass and charge must be positive")

    @property
    def diffusion_D(self) -> float:
        return self.hbar / (2.0 * self.mass)

    @property
    def c_p(self) -> float:
        return self.c_p_sign * self.hbar

    def scaled(self, hbar: float) -> "PhysicalConstants":
        return replace(self, hbar=hbar)

    def to_dict(self) -> dict:
        return {"hbar": self.hbar, "mass": self.mass, "charge": self.charge, "diffusion_D": self.diffusion_D}


@dataclass(frozen=True)
class Grid1D:
    x_min: float
    x_max: float
    n_points: int

    def __post_init__(self):
        if self.n_points < 8:
            raise ValueError("Grid1D needs n_points >= 8")
        if not self.x_max > self.x_min:
            raise ValueError("Grid1D needs x_max > x_min")

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / (self.n_points - 1)

    @property
    def x(self) -> np.ndarray:
        return np.linspace(self.x_min, self.x_max, self.n_points)

    def contains(self, q) -> np.ndarray:
        q = np.asarray(q)
        return (q >= self.x_min) & (q <= self.x_max)

    def to_dict(self) -> dict:
        return {"x_min": self.x_min, "x_max": self.x_max, "n_points": self.n_points}


@dataclass(frozen=True)
class Grid2D:
    """Product grid for two-particle configuration space (q1 along axis 0)."""

    axis: Grid1D

    @property
    def shape(self) -> tuple[int, int]:
        return (self.axis.n_points, self.axis.n_points)

    @property
    def dx(self) -> float:
        return self.axis.dx

    @property
    def n_points(self) -> int:
        return self.axis.n_points

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.axis.x, self.axis.x, indexing="ij")

    def to_dict(self) -> dict:
        return {"axis": self.axis.to_dict(), "dims": 2}


# -- potentials -------------------------------------------------------------


@dataclass(frozen=True)
class Potential:
    """Time-independent potential V(q).

    ``kind`` is one of ``free``, ``constant``, ``harmonic``, ``soft_coulomb``,
    ``tabulated``.  Tabulated potentials are linearly interpolated off-grid
    and clamped at the table ends.
    """

    kind: str = "free"
    V0: float = 0.0
    k: float = 1.0
    center: float = 0.0
    Z: float = 1.0
    softening: float = 1.0
    table: tuple | None = None
    table_grid: Grid1D | None = None

    def __post_init__(self):
        if self.kind not in ("free", "constant", "harmonic", "soft_coulomb", "tabulated"):
            raise ValueError(f"unknown potential kind {self.kind!r}")
        if self.kind == "tabulated":
            if self.table is None or self.table_grid is None:
                raise ValueError("tabulated potential needs table and table_grid")
            if len(self.table) != self.table_grid.n_points:
                raise ValueError("tabulated potential length does not match grid")
            if not np.all(np.isfinite(self.table)):
                raise ValueError("tabulated potential has non-finite values")
        if self.kind == "soft_coulomb" and self.softening <= 0:
            raise ValueError("softening must be positive")

    @classmethod
    def free(cls) -> "Potential":
        return cls("free")

    @classmethod
    def constant(cls, V0: float) -> "Potential":
        return cls("constant", V0=V0)

    @classmethod
    def harmonic(cls, k: float, center: float = 0.0) -> "Potential":
        return cls("harmonic", k=k, center=center)

    @classmethod
    def soft_coulomb(cls, Z: float = 1.0, softening: float = 1.0) -> "Potential":
        return cls("soft_coulomb", Z=Z, softening=softening)

    @classmethod
    def tabulated(cls, grid: Grid1D, values) -> "Potential":
        return cls("tabulated", table=tuple(float(v) for v in values), table_grid=grid)

    def __call__(self, q) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        if self.kind == "free":
            return np.zeros_like(q)
        if self.kind == "constant":
            return np.full_like(q, self.V0)
        if self.kind == "harmonic":
            return 0.5 * self.k * (q - self.center) ** 2
        if self.kind == "soft_coulomb":
            return -self.Z / np.sqrt((q - self.center) ** 2 + self.softening**2)
        return np.interp(q, self.table_grid.x, np.asarray(self.table))

    def gradient(self, q) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        if self.kind in ("free", "constant"):
            return np.zeros_like(q)
        if self.kind == "harmonic":
            return self.k * (q - self.center)
        if self.kind == "soft_coulomb":
            r2 = (q - self.center) ** 2 + self.softening**2
            return self.Z * (q - self.center) / r2**1.5
        g = self.table_grid
        return np.interp(q, g.x, np.gradient(np.asarray(self.table), g.dx))

    def on_grid(self, grid: Grid1D) -> np.ndarray:
        return self(grid.x)

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        if self.kind == "constant":
            d["V0"] = self.V0
        elif self.kind == "harmonic":
            d.update(k=self.k, center=self.center)
        elif self.kind == "soft_coulomb":
            d.update(Z=self.Z, softening=self.softening, center=self.center)
        elif self.kind == "tabulated":
            d.update(values=list(self.table), grid=self.table_grid.to_dict())
        return d


@dataclass(frozen=True)
class TwoParticlePotential:
    """Sum of one-body terms plus an optional interaction table on the product grid."""

    one_body: Potential = field(default_factory=Potential.free)
    interaction: np.ndarray | None = None

    def on_grid(self, grid: Grid2D) -> np.ndarray:
        q1, q2 = grid.mesh()
        v = self.one_body(q1) + self.one_body(q2)
        if self.interaction is not None:
            if self.interaction.shape != grid.shape:
                raise ValueError("interaction table does not match product grid")
            v = v + self.interaction
        return v


# -- field ------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SchroedingerVectorField:
    grid: Grid1D | Grid2D
    phi_r: np.ndarray
    phi_c: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        phi_r = np.asarray(self.phi_r, dtype=float)
        phi_c = np.asarray(self.phi_c, dtype=float)
        shape = self.grid.shape if isinstance(self.grid, Grid2D) else (self.grid.n_points,)
        if phi_r.shape != shape or phi_c.shape != shape:
            raise ValueError(f"field arrays must have shape {shape}")
        if not (np.all(np.isfinite(phi_r)) and np.all(np.isfinite(phi_c))):
            raise ValueError("field has non-finite entries")
        phi_r.setflags(write=False)
        phi_c.setflags(write=False)
        object.__setattr__(self, "phi_r", phi_r)
        object.__setattr__(self, "phi_c", phi_c)

    @classmethod
    def from_complex(cls, grid, psi, time: float = 0.0) -> "SchroedingerVectorField":
        return cls(grid, psi.real.copy(), psi.imag.copy(), time)

    @property
    def psi(self) -> np.ndarray:
        return self.phi_r + 1j * self.phi_c

    @property
    def rho(self) -> np.ndarray:
        return density(self)

    @property
    def cell(self) -> float:
        dx = self.grid.dx
        return dx * dx if isinstance(self.grid, Grid2D) else dx

    def norm(self) -> float:
        return float(np.sum(self.rho) * self.cell)

    def with_components(self, phi_r, phi_c, time: float | None = None) -> "SchroedingerVectorField":
        return SchroedingerVectorField(self.grid, phi_r, phi_c, self.time if time is None else time)


def apply_J(field: SchroedingerVectorField) -> SchroedingerVectorField:
    return field.with_components(-field.phi_c, field.phi_r.copy())


def density(field: SchroedingerVectorField) -> np.ndarray:
    return field.phi_r**2 + field.phi_c**2


def normalize(field: SchroedingerVectorField) -> SchroedingerVectorField:
    total = float(np.sum(density(field)) * field.cell)
    if total < 1e-300:
        raise ZeroNorm("field has zero norm")
    s = 1.0 / np.sqrt(total)
    return field.with_components(field.phi_r * s, field.phi_c * s)


def rotate(field: SchroedingerVectorField, angle) -> SchroedingerVectorField:
    """Apply exp(angle * J) nodewise; ``angle`` may be scalar or per node."""
    c, s = np.cos(angle), np.sin(angle)
    return field.with_components(c * field.phi_r - s * field.phi_c, s * field.phi_r + c * field.phi_c)


def gaussian_packet(grid: Grid1D, q0: float, sigma: float, p0: float = 0.0,
                    constants: PhysicalConstants = PhysicalConstants(),
                    check_support: bool = True) -> SchroedingerVectorField:
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    if check_support and min(q0 - grid.x_min, grid.x_max - q0) <= 5 * sigma:
        raise PacketTruncated(
            f"packet at {q0} with width {sigma} lies within 5 sigma of the grid boundary"
        )
    x = grid.x
    env = np.exp(-((x - q0) ** 2) / (4 * sigma**2))
    phase = p0 * (x - q0) / constants.hbar
    f = SchroedingerVectorField(grid, env * np.cos(phase), env * np.sin(phase))
    if p0 == 0.0:
        f = f.with_components(f.phi_r, np.zeros_like(x))
    return normalize(f)


def plane_wave_window(grid: Grid1D, p0: float, interval: tuple[float, float], chi: float = 0.0,
                      constants: PhysicalConstants = PhysicalConstants()) -> SchroedingerVectorField:
    a, b = interval
    if not (grid.x_min <= a < b <= grid.x_max):
        raise ValueError("interval must lie inside the grid")
    x = grid.x
    inside = (x >= a) & (x <= b)
    phase = p0 * x / constants.hbar + chi
    return SchroedingerVectorField(grid, np.where(inside, np.cos(phase), 0.0),
                                   np.where(inside, np.sin(phase), 0.0))


def momentum_functional(field: SchroedingerVectorField, constants: PhysicalConstants = PhysicalConstants(),
                        mask: np.ndarray | None = None) -> float:
    """Integral of psi^T p psi with p = -J hbar grad, over ``mask`` (default all interior nodes)."""
    dx = field.grid.dx
    dr = np.gradient(field.phi_r, dx)
    dc = np.gradient(field.phi_c, dx)
    local = constants.hbar * (field.phi_r * dc - field.phi_c * dr)
    if mask is None:
        mask = np.ones(local.shape, bool)
    return float(np.sum(local[mask]) * dx)


# -- serialization ----------------------------------------------------------


def field_header(field: SchroedingerVectorField, constants: PhysicalConstants) -> dict:
    return {"grid": field.grid.to_dict(), "constants": constants.to_dict(), "time": field.time}


def write_field(field: SchroedingerVectorField, path, constants: PhysicalConstants = PhysicalConstants()):
    """Write ``<path>.csv`` (x, phi_r, phi_c, rho) and a ``<path>.json`` header."""
    path = Path(path)
    if isinstance(field.grid, Grid2D):
        raise ValueError("CSV snapshots are 1D only")
    table = np.column_stack([field.grid.x, field.phi_r, field.phi_c, field.rho])
    np.savetxt(path.with_suffix(".csv"), table, delimiter=",", header="x,phi_r,phi_c,rho",
               comments="", fmt="%.17g")
    path.with_suffix(".json").write_text(json.dumps(field_header(field, constants), indent=2))


def read_field(path) -> tuple[SchroedingerVectorField, PhysicalConstants]:
    path = Path(path)
    header = json.loads(path.with_suffix(".json").read_text())
    table = np.loadtxt(path.with_suffix(".csv"), delimiter=",", skiprows=1, ndmin=2)
    grid = Grid1D(**header["grid"])
    c = header["constants"]
    constants = PhysicalConstants(hbar=c["hbar"], mass=c["mass"], charge=c.get("charge", 1.0))
    return SchroedingerVectorField(grid, table[:, 1], table[:, 2], header["time"]), constants
