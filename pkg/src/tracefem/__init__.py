"""Stabilized trace finite elements for surface PDEs on curves embedded in a 2D background mesh.

The package builds a uniform triangulation, finds the triangles cut by a
level-set curve, integrates on the curve exactly or on its piecewise
linear reconstruction, and assembles Laplace-Beltrami, mass and mean
curvature systems with face-jump and surface normal-derivative
stabilization of arbitrary order up to the polynomial degree.
"""
from .assembly import StabilizationConfig, assemble_laplace_beltrami, assemble_mass_system
from .fem import FiniteElementSpace, lagrange_basis
from .geometry import Circle, Ellipse, Line, cut_quadrature, parse_geometry
from .mesh import build_background_mesh, extract_active_mesh
from .solver import ConstrainedSystem, condition_number, solve

__version__ = "0.1.0"

__all__ = [
    "Circle",
    "ConstrainedSystem",
    "Ellipse",
    "FiniteElementSpace",
    "Line",
    "StabilizationConfig",
    "assemble_laplace_beltrami",
    "assemble_mass_system",
    "build_background_mesh",
    "condition_number",
    "cut_quadrature",
    "extract_active_mesh",
    "lagrange_basis",
    "parse_geometry",
    "solve",
]
