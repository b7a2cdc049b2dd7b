"""Lagrange elements of degree 1-3 on triangles and the space on the active mesh."""
from __future__ import annotations

import warnings
from fractions import Fraction
from functools import lru_cache
from math import comb

import numpy as np

from .mesh import ActiveMesh


def _monomials(p):
    return [(a, d - a) for d in range(p + 1) for a in range(d, -1, -1)]


def _reference_nodes(p):
    """Vertices, then p-1 nodes per edge (edge k runs from vertex k to k+1), then interior."""
    verts = [(Fraction(0), Fraction(0)), (Fraction(1), Fraction(0)), (Fraction(0), Fraction(1))]
    nodes = list(verts)
    for k in range(3):
        a, b = verts[k], verts[(k + 1) % 3]
        for m in range(1, p):
            t = Fraction(m, p)
            nodes.append((a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])))
    for j in range(1, p):
        for i in range(1, p - j):
            nodes.append((Fraction(i, p), Fraction(j, p)))
    return nodes


def _rational_inverse(M):
    n = len(M)
    A = [list(row) + [Fraction(int(i == j)) for j in range(n)] for i, row in enumerate(M)]
    for c in range(n):
        piv = next(r for r in range(c, n) if A[r][c] != 0)
        A[c], A[piv] = A[piv], A[c]
        inv = 1 / A[c][c]
        A[c] = [v * inv for v in A[c]]
        for r in range(n):
            if r != c and A[r][c] != 0:
                f = A[r][c]
                A[r] = [vr - f * vc for vr, vc in zip(A[r], A[c])]
    return [row[n:] for row in A]


class LagrangeBasis:
    """Equispaced Lagrange basis on the reference triangle (0,0), (1,0), (0,1).

    Shape functions are stored as exact rational monomial coefficients; the
    derivative tables hold, for every order ``j <= p`` and every split
    ``k`` = number of eta-derivatives, the coefficients of
    d^(j-k)/dxi^(j-k) d^k/deta^k of each shape function.
    """

    def __init__(self, p: int):
        if p not in (1, 2, 3):
            raise ValueError(f"degree must be 1, 2 or 3, got {p}")
        self.p = p
        self.monomials = _monomials(p)
        nodes = _reference_nodes(p)
        self.nodes = np.array([[float(x), float(y)] for x, y in nodes])
        self.n_local = len(nodes)
        V = [[x**a * y**b for (a, b) in self.monomials] for (x, y) in nodes]
        C = _rational_inverse(V)  # C[m][i]: coefficient of monomial m in shape function i
        self.exact_coefficients = [[C[m][i] for m in range(len(self.monomials))] for i in range(self.n_local)]
        self.tables = {}
        index = {mono: m for m, mono in enumerate(self.monomials)}
        for j in range(p + 1):
            tab = np.zeros((j + 1, self.n_local, len(self.monomials)))
            for k in range(j + 1):
                dx, dy = j - k, k
                for i in range(self.n_local):
                    for m, (a, b) in enumerate(self.monomials):
                        c = self.exact_coefficients[i][m]
                        if c == 0 or a < dx or b < dy:
                            continue
                        factor = _falling(a, dx) * _falling(b, dy)
                        tab[k, i, index[(a - dx, b - dy)]] = float(c * factor)
            self.tables[j] = tab

    def monomial_values(self, xi):
        xi = np.atleast_2d(xi)
        return np.stack([xi[:, 0] ** a * xi[:, 1] ** b for (a, b) in self.monomials], axis=1)

    def eval(self, xi, j: int = 0) -> np.ndarray:
        """Reference derivatives of order ``j`` at points ``xi`` (m, 2).

        Returns an array (m, j+1, n_local) whose entry ``[:, k, i]`` is
        d^(j-k)/dxi^(j-k) d^k/deta^k of shape function i.  Orders above ``p``
        are identically zero.
        """
        xi = np.atleast_2d(np.asarray(xi, float))
        if j > self.p:
            return np.zeros((len(xi), j + 1, self.n_local))
        return np.einsum("qm,kim->qki", self.monomial_values(xi), self.tables[j])


def _falling(a, k):
    out = 1
    for r in range(k):
        out *= a - r
    return out


@lru_cache(maxsize=None)
def lagrange_basis(p: int) -> LagrangeBasis:
    return LagrangeBasis(p)


def eval_basis(basis: LagrangeBasis, ref_point, deriv_order: int) -> np.ndarray:
    """Derivative table of order ``deriv_order`` at a single reference point, shape (j+1, n_local)."""
    return basis.eval(np.asarray(ref_point, float).reshape(1, 2), deriv_order)[0]


class FiniteElementSpace:
    """Continuous degree-p Lagrange space restricted to the active mesh.

    Global numbering: active-mesh vertices (by vertex id), then edge nodes
    (by edge id, ordered from the lower to the higher vertex id), then cell
    interior nodes (by triangle id).
    """

    def __init__(self, active: ActiveMesh, p: int):
        self.active = active
        self.p = p
        self.basis = lagrange_basis(p)
        bg = active.background
        tris = bg.triangles[active.elements]
        tedges = bg.triangle_edges[active.elements]

        verts = np.unique(tris)
        vmap = np.full(bg.n_vertices, -1, dtype=np.int64)
        vmap[verts] = np.arange(len(verts))
        n_vert_dofs = len(verts)

        edges = np.unique(tedges)
        emap = np.full(len(bg.edges), -1, dtype=np.int64)
        emap[edges] = np.arange(len(edges))
        per_edge = p - 1
        n_edge_dofs = per_edge * len(edges)

        ne = active.n_elements
        dofs = np.empty((ne, self.basis.n_local), dtype=np.int64)
        dofs[:, :3] = vmap[tris]
        col = 3
        for k in range(3):
            start = tris[:, k]
            stop = tris[:, (k + 1) % 3]
            base = n_vert_dofs + per_edge * emap[tedges[:, k]]
            forward = start < stop
            for m in range(per_edge):
                dofs[:, col] = base + np.where(forward, m, per_edge - 1 - m)
                col += 1
        n_interior = self.basis.n_local - col
        if n_interior:
            dofs[:, col:] = n_vert_dofs + n_edge_dofs + n_interior * np.arange(ne)[:, None] + np.arange(n_interior)
        self.cell_dofs = dofs
        self.ndof = n_vert_dofs + n_edge_dofs + n_interior * ne
        self.direction_warnings = 0

        P = bg.vertices[tris]
        self.origins = P[:, 0]
        self.jacobians = np.stack([P[:, 1] - P[:, 0], P[:, 2] - P[:, 0]], axis=2)  # columns
        self.inv_jacobians = np.linalg.inv(self.jacobians)
        self.areas = 0.5 * np.abs(np.linalg.det(self.jacobians))
        self.h = bg.h

    # -- geometry helpers -------------------------------------------------

    def local(self, triangle_ids) -> np.ndarray:
        loc = self.active.local_index(triangle_ids)
        if np.any(np.asarray(loc) < 0):
            raise ValueError("triangle is not in the active mesh")
        return loc

    def to_reference(self, loc, x) -> np.ndarray:
        return np.einsum("qij,qj->qi", self.inv_jacobians[loc], x - self.origins[loc])

    def dof_coordinates(self) -> np.ndarray:
        """Physical position of every global DOF."""
        coords = np.zeros((self.ndof, 2))
        X = self.origins[:, None, :] + np.einsum("eij,nj->eni", self.jacobians, self.basis.nodes)
        coords[self.cell_dofs.ravel()] = X.reshape(-1, 2)
        return coords

    # -- vectorized basis evaluation --------------------------------------

    def directional(self, loc, x, a, j: int) -> np.ndarray:
        """D^j_a of every local basis function: (m, n_local).

        ``loc`` are active-local element indices, ``x`` physical points and
        ``a`` directions, all with leading dimension m.
        """
        loc = np.asarray(loc)
        x = np.atleast_2d(x)
        xi = self.to_reference(loc, x)
        if j == 0:
            return self.basis.eval(xi, 0)[:, 0, :]
        a = np.atleast_2d(a)
        ar = np.einsum("qij,qj->qi", self.inv_jacobians[loc], a)
        tab = self.basis.eval(xi, j)  # (m, j+1, nloc)
        k = np.arange(j + 1)
        w = np.array([comb(j, kk) for kk in k]) * ar[:, 0:1] ** (j - k) * ar[:, 1:2] ** k
        return np.einsum("qk,qki->qi", w, tab)

    def gradients(self, loc, x) -> np.ndarray:
        """Physical gradients of every local basis function: (m, n_local, 2)."""
        loc = np.asarray(loc)
        xi = self.to_reference(loc, np.atleast_2d(x))
        ref = self.basis.eval(xi, 1)  # (m, 2, nloc)
        return np.einsum("qki,qkj->qij", ref, self.inv_jacobians[loc])

    def values(self, loc, x) -> np.ndarray:
        return self.directional(loc, x, None, 0)

    def interpolate(self, func) -> np.ndarray:
        """Nodal interpolant coefficients of a function of points (m, 2)."""
        return np.asarray(func(self.dof_coordinates()), dtype=float)

    def evaluate(self, coeffs, loc, x) -> np.ndarray:
        return np.einsum("qi,qi->q", self.values(loc, x), coeffs[self.cell_dofs[loc]])


def _unit(space, a):
    a = np.asarray(a, float)
    n = np.linalg.norm(a)
    if abs(n - 1.0) > 1e-12:
        space.direction_warnings += 1
        warnings.warn("direction is not a unit vector; normalizing", stacklevel=3)
        a = a / n
    return a


def directional_derivative(space: FiniteElementSpace, coeffs, element: int, x, direction, order: int) -> float:
    """j-th derivative of the FE function along ``direction`` at ``x`` in triangle ``element``."""
    a = _unit(space, direction)
    loc = space.local([element])
    vals = space.directional(loc, np.asarray(x, float)[None], a[None], order)
    return float(vals[0] @ np.asarray(coeffs)[space.cell_dofs[loc[0]]])


def face_jump(space: FiniteElementSpace, coeffs, face: int, x, order: int) -> float:
    """Jump of D^j_{n_F} across interior face ``face`` (plus side minus minus side)."""
    active = space.active
    if not 0 <= face < active.n_faces:
        raise IndexError(f"face {face} is not an interior face of the active mesh")
    minus, plus = active.face_elements[face]
    n = active.face_normals[face]
    return directional_derivative(space, coeffs, plus, x, n, order) - directional_derivative(
        space, coeffs, minus, x, n, order
    )


def tangential_gradient(space: FiniteElementSpace, coeffs, element: int, x, n_h) -> np.ndarray:
    """(I - n_h n_h^T) grad v at ``x``."""
    n_h = np.asarray(n_h, float)
    loc = space.local([element])
    G = space.gradients(loc, np.asarray(x, float)[None])[0]
    g = np.asarray(coeffs)[space.cell_dofs[loc[0]]] @ G
    return g - (g @ n_h) * n_h
