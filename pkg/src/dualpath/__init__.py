"""Real two-component Schroedinger dynamics, matrix Feynman-Kac kernels and quantum stochastic paths."""

__version__ = "0.1.0"

from .core import (  # noqa: F401
    J,
    Grid1D,
    Grid2D,
    PhysicalConstants,
    Potential,
    SchroedingerVectorField,
    gaussian_packet,
)
