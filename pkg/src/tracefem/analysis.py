"""Error norms on the discrete curve, convergence rates, and empirical inequality constants."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import Circle, CutQuadrature, closest_point
from .solver import SINGULAR, pencil_max


class CircleSolution:
    """u = X^3 Y^3 / (X^2 + Y^2)^3 about the circle center, and its Laplace-Beltrami data.

    ``u`` is 0-homogeneous about the center, so its closest-point extension
    is the formula itself.  On the circle u(theta) = (3 sin 2t - sin 6t) / 32
    and -Laplace_Gamma u = (3 sin 2t - 9 sin 6t) / (8 r^2).
    """

    def __init__(self, geom: Circle):
        self.center = geom.center
        self.radius = geom.radius

    def _rel(self, x):
        return np.asarray(x, float) - self.center

    def u(self, x):
        X, Y = self._rel(x)[..., 0], self._rel(x)[..., 1]
        return X**3 * Y**3 / (X**2 + Y**2) ** 3

    def grad(self, x):
        X, Y = self._rel(x)[..., 0], self._rel(x)[..., 1]
        r2 = X**2 + Y**2
        gx = 3 * X**2 * Y**3 / r2**3 - 6 * X**4 * Y**3 / r2**4
        gy = 3 * X**3 * Y**2 / r2**3 - 6 * X**3 * Y**4 / r2**4
        return np.stack([gx, gy], axis=-1)

    def theta(self, x):
        rel = self._rel(x)
        return np.arctan2(rel[..., 1], rel[..., 0])

    def f(self, x):
        t = self.theta(x)
        return (3 * np.sin(2 * t) - 9 * np.sin(6 * t)) / (8 * self.radius**2)


def mass_data(x):
    """Right-hand side of the mass-matrix problem, as printed for the unit circle."""
    x1, x2 = np.asarray(x, float)[..., 0], np.asarray(x, float)[..., 1]
    return -(6 * x1 * x2 * (x1**4 - 4 * x1**2 * x2**2 + x2**4)) / (x1**2 + x2**2) ** 4


def error_l2_gammah(space, coeffs, quad: CutQuadrature, geom, u_exact) -> float:
    """||u^e - u_h|| in L2 of the discrete curve; u^e = u o p."""
    loc = space.local(quad.elements)
    uh = space.evaluate(np.asarray(coeffs), loc, quad.points)
    ue = np.asarray(u_exact(closest_point(geom, quad.points)), float)
    return float(math.sqrt(np.sum(quad.weights * (ue - uh) ** 2)))


def error_h1_gammah(space, coeffs, quad: CutQuadrature, geom, grad_extension) -> float:
    """||grad_Gh (u^e - u_h)|| in L2 of the discrete curve.

    ``grad_extension`` returns the full gradient of the extension u^e at
    points of the plane.
    """
    loc = space.local(quad.elements)
    G = space.gradients(loc, quad.points)
    guh = np.einsum("qik,qi->qk", G, np.asarray(coeffs)[space.cell_dofs[loc]])
    diff = np.asarray(grad_extension(quad.points), float) - guh
    n = quad.normals
    diff -= np.einsum("qk,qk->q", diff, n)[:, None] * n
    return float(math.sqrt(np.sum(quad.weights * np.einsum("qk,qk->q", diff, diff))))


def l2_vector_error(space, coeffs_by_component, quad: CutQuadrature, reference) -> float:
    """L2 norm on the discrete curve of a vector FE function minus ``reference`` values at the nodes."""
    loc = space.local(quad.elements)
    vals = np.stack([space.evaluate(c, loc, quad.points) for c in coeffs_by_component], axis=1)
    d = vals - reference
    return float(math.sqrt(np.sum(quad.weights * np.einsum("qk,qk->q", d, d))))


def eoc(errors, hs) -> list:
    """Rates log(e_k / e_k+1) / log(h_k / h_k+1) between consecutive levels."""
    errors = np.asarray(errors, float)
    hs = np.asarray(hs, float)
    if len(errors) != len(hs):
        raise ValueError("errors and mesh sizes differ in length")
    with np.errstate(divide="ignore", invalid="ignore"):
        rates = np.log(errors[:-1] / errors[1:]) / np.log(hs[:-1] / hs[1:])
    return [float(r) for r in rates]


def loglog_slope(hs, values) -> float:
    """Least-squares slope of log(values) against log(hs)."""
    return float(np.polyfit(np.log(hs), np.log(values), 1)[0])


def empirical_poincare_constant(A, bulk_mass, w, h, cd: int = 1) -> float:
    """Smallest C with ||v||^2_L2(T_h) <= C h^cd (a_h + s_h)(v, v) on the constrained subspace."""
    return pencil_max(bulk_mass, h**cd * A, w)


def empirical_inverse_constant(S, bulk_mass, h, cd: int = 1) -> float:
    """Smallest C with s_h(v, v) <= C h^-(cd+2) ||v||^2_L2(T_h)."""
    if S.nnz == 0 or not np.any(S.data):
        return 0.0
    return pencil_max(S, h ** -(cd + 2) * bulk_mass)


def stronger_poincare_constant(A, bulk_mass, bulk_stiffness, w, h, gamma, cd: int = 1) -> float:
    """Constant of ||v||^2 + h^(2 gamma) ||grad v||^2 <= C h^cd (a_h + s_h)(v, v)."""
    return pencil_max(bulk_mass + h ** (2 * gamma) * bulk_stiffness, h**cd * A, w)


@dataclass
class ConvergenceRecord:
    """Per-level results of a refinement study."""

    rows: list = field(default_factory=list)

    def add(self, **row):
        if self.rows and not row["h"] < self.rows[-1]["h"]:
            raise ValueError("mesh size must strictly decrease across levels")
        self.rows.append(row)

    def column(self, name):
        return [r.get(name) for r in self.rows]

    def rates(self, name):
        vals = self.column(name)
        if any(v is None or not np.isfinite(v) or v <= 0 for v in vals):
            return [math.nan] * max(0, len(vals) - 1)
        return eoc(vals, self.column("h"))


__all__ = [
    "CircleSolution",
    "ConvergenceRecord",
    "SINGULAR",
    "empirical_inverse_constant",
    "empirical_poincare_constant",
    "eoc",
    "error_h1_gammah",
    "error_l2_gammah",
    "l2_vector_error",
    "loglog_slope",
    "mass_data",
    "stronger_poincare_constant",
]
