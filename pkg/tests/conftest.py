from __future__ import annotations

import numpy as np
import pytest

from tracefem.analysis import CircleSolution
from tracefem.assembly import StabilizationConfig, assemble_laplace_beltrami
from tracefem.fem import FiniteElementSpace
from tracefem.geometry import Circle, Line, cut_quadrature
from tracefem.mesh import build_background_mesh, extract_active_mesh


def discretize(n, p, geom=None, shift=(0.0, 0.0), backend="exact", order=None, bbox=(-1.5, 1.5, -1.5, 1.5)):
    geom = Circle() if geom is None else geom
    bg = build_background_mesh(bbox, n, shift)
    quad = cut_quadrature(bg, geom, backend, 2 * p + 2 if order is None else order)
    space = FiniteElementSpace(extract_active_mesh(bg, geom, quad), p)
    return bg, quad, space


def lb_system(n, p, config=None, shift=(0.0, 0.0), geom=None):
    geom = Circle() if geom is None else geom
    bg, quad, space = discretize(n, p, geom, shift)
    config = StabilizationConfig.laplace_beltrami_defaults(p) if config is None else config
    system = assemble_laplace_beltrami(space, quad, geom, config, CircleSolution(geom).f)
    return bg, quad, space, system


def toy_single():
    """One cut triangle (0,0),(s,0),(s,s) with h = s = 0.5, cut by x - y = s/2.

    The neighbour (0,0),(s,s),(0,s) lies in {x - y <= 0} and stays uncut.
    """
    s = 0.5
    geom = Line(1.0, -1.0, -0.5 * s)
    bg, quad, space = discretize(1, 1, geom, bbox=(0.0, s, 0.0, s), order=4)
    return geom, bg, quad, space


def toy_pair():
    """Both triangles of the unit square cut by the line y = 0.3."""
    geom = Line(0.0, 1.0, -0.3)
    bg, quad, space = discretize(1, 1, geom, bbox=(0.0, 1.0, 0.0, 1.0), order=4)
    return geom, bg, quad, space


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240601)
