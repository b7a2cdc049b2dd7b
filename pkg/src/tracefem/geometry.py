"""Implicit curves, cut-element quadrature on the discrete curve, closest point.

Two quadrature backends are available:

``exact``
    Quadrature on the true zero level set.  Entry and exit points on the
    triangle edges are found by root finding, the arc between them is
    parametrized (angle for circles and ellipses, arclength for lines, a
    height function over the chord for general level sets) and a
    Gauss-Legendre rule is placed on the parameter interval.
``pl``
    Zero set of the nodal linear interpolant of the level set, one straight
    segment per cut triangle with a constant normal.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .mesh import BackgroundMesh, MeshError

SNAP = 1e-12
GRAD_TOL = 1e-10


class GeometryError(ValueError):
    pass


class MultiComponentCutError(GeometryError):
    """Several disjoint pieces of the curve inside one triangle; refine the mesh."""


class DegenerateCutError(GeometryError):
    pass


class ProjectionError(GeometryError):
    """Closest-point Newton iteration did not converge."""


class SingularGeometryError(GeometryError):
    """Vanishing level-set gradient."""


# --------------------------------------------------------------------------
# level sets
# --------------------------------------------------------------------------


class LevelSetGeometry:
    """Base class. ``phi``, ``grad`` and ``hess`` act on arrays of shape (..., 2)."""

    kind = "analytic"
    closed = True
    closest_point_capable = True
    polynomial_edges = False

    def phi(self, x):
        raise NotImplementedError

    def grad(self, x):
        raise NotImplementedError

    def hess(self, x):
        raise NotImplementedError

    def normal(self, x):
        g = self.grad(x)
        norm = np.linalg.norm(g, axis=-1, keepdims=True)
        if np.any(norm < GRAD_TOL):
            raise SingularGeometryError("|grad phi| vanishes")
        return g / norm

    # Curves with a global parametrization override these.
    period = None

    def has_parametrization(self) -> bool:
        return False

    def curve_point(self, s):
        raise NotImplementedError

    def curve_velocity(self, s):
        raise NotImplementedError

    def curve_param(self, x):
        raise NotImplementedError

    def sample_point(self):
        """Some point of the zero level set, used when no mesh edge is crossed."""
        return None

    def edge_polynomial(self, a, d):
        """Coefficients (A, B, C) of a quadratic in t sharing the zeros of phi(a + t d)."""
        raise NotImplementedError

    def describe(self) -> str:
        return self.kind


class Circle(LevelSetGeometry):
    """Signed distance to a circle, negative inside."""

    kind = "circle"
    polynomial_edges = True
    period = 2.0 * math.pi

    def __init__(self, center=(0.0, 0.0), radius=1.0):
        self.center = np.asarray(center, dtype=float)
        self.radius = float(radius)
        if self.radius <= 0:
            raise GeometryError("radius must be positive")

    def phi(self, x):
        return np.linalg.norm(np.asarray(x, float) - self.center, axis=-1) - self.radius

    def grad(self, x):
        rel = np.asarray(x, float) - self.center
        return rel / np.linalg.norm(rel, axis=-1, keepdims=True)

    def hess(self, x):
        rel = np.asarray(x, float) - self.center
        r = np.linalg.norm(rel, axis=-1)
        n = rel / r[..., None]
        eye = np.broadcast_to(np.eye(2), n.shape[:-1] + (2, 2))
        return (eye - n[..., :, None] * n[..., None, :]) / r[..., None, None]

    def has_parametrization(self):
        return True

    def curve_point(self, s):
        s = np.asarray(s, float)
        return self.center + self.radius * np.stack([np.cos(s), np.sin(s)], axis=-1)

    def curve_velocity(self, s):
        s = np.asarray(s, float)
        return self.radius * np.stack([-np.sin(s), np.cos(s)], axis=-1)

    def curve_param(self, x):
        rel = np.asarray(x, float) - self.center
        return np.mod(np.arctan2(rel[..., 1], rel[..., 0]), self.period)

    def sample_point(self):
        return self.curve_point(0.0)

    def edge_polynomial(self, a, d):
        rel = a - self.center
        return (
            np.einsum("ij,ij->i", d, d),
            2.0 * np.einsum("ij,ij->i", rel, d),
            np.einsum("ij,ij->i", rel, rel) - self.radius**2,
        )

    def describe(self):
        return f"circle:{self.center[0]:g},{self.center[1]:g},{self.radius:g}"


class Ellipse(LevelSetGeometry):
    """phi = x^2 / a2 + y^2 / b2 - offset (not a distance function)."""

    kind = "ellipse"
    polynomial_edges = True
    period = 2.0 * math.pi

    def __init__(self, a2=0.64, b2=1.0, offset=0.25):
        self.a2, self.b2, self.offset = float(a2), float(b2), float(offset)
        if min(self.a2, self.b2, self.offset) <= 0:
            raise GeometryError("ellipse coefficients must be positive")
        self.semi_x = math.sqrt(self.a2 * self.offset)
        self.semi_y = math.sqrt(self.b2 * self.offset)

    def phi(self, x):
        x = np.asarray(x, float)
        return x[..., 0] ** 2 / self.a2 + x[..., 1] ** 2 / self.b2 - self.offset

    def grad(self, x):
        x = np.asarray(x, float)
        return np.stack([2.0 * x[..., 0] / self.a2, 2.0 * x[..., 1] / self.b2], axis=-1)

    def hess(self, x):
        x = np.asarray(x, float)
        return np.broadcast_to(np.diag([2.0 / self.a2, 2.0 / self.b2]), x.shape[:-1] + (2, 2)).copy()

    def has_parametrization(self):
        return True

    def curve_point(self, s):
        s = np.asarray(s, float)
        return np.stack([self.semi_x * np.cos(s), self.semi_y * np.sin(s)], axis=-1)

    def curve_velocity(self, s):
        s = np.asarray(s, float)
        return np.stack([-self.semi_x * np.sin(s), self.semi_y * np.cos(s)], axis=-1)

    def curve_param(self, x):
        x = np.asarray(x, float)
        return np.mod(np.arctan2(x[..., 1] / self.semi_y, x[..., 0] / self.semi_x), self.period)

    def sample_point(self):
        return self.curve_point(0.0)

    def edge_polynomial(self, a, d):
        w = np.array([1.0 / self.a2, 1.0 / self.b2])
        return (
            (d * d) @ w,
            2.0 * (a * d) @ w,
            (a * a) @ w - self.offset,
        )

    def describe(self):
        return f"ellipse:{self.a2:g},{self.b2:g},{self.offset:g}"


class Line(LevelSetGeometry):
    """phi = a x + b y + c, normalized to a signed distance."""

    kind = "line"
    closed = False
    polynomial_edges = True

    def __init__(self, a=1.0, b=0.0, c=0.0):
        norm = math.hypot(a, b)
        if norm == 0:
            raise GeometryError("line normal must be nonzero")
        self.coeffs = (float(a), float(b), float(c))
        self.nu = np.array([a, b], dtype=float) / norm
        self.c = float(c) / norm
        self.origin = -self.c * self.nu
        self.tangent = np.array([-self.nu[1], self.nu[0]])

    def phi(self, x):
        return np.asarray(x, float) @ self.nu + self.c

    def grad(self, x):
        x = np.asarray(x, float)
        return np.broadcast_to(self.nu, x.shape).copy()

    def hess(self, x):
        x = np.asarray(x, float)
        return np.zeros(x.shape[:-1] + (2, 2))

    def has_parametrization(self):
        return True

    def curve_point(self, s):
        s = np.asarray(s, float)
        return self.origin + s[..., None] * self.tangent

    def curve_velocity(self, s):
        s = np.asarray(s, float)
        return np.broadcast_to(self.tangent, s.shape + (2,)).copy()

    def curve_param(self, x):
        return (np.asarray(x, float) - self.origin) @ self.tangent

    def edge_polynomial(self, a, d):
        return np.zeros(len(a)), d @ self.nu, a @ self.nu + self.c

    def describe(self):
        a, b, c = self.coeffs
        return f"line:{a:g},{b:g},{c:g}"


class AnalyticLevelSet(LevelSetGeometry):
    """User supplied ``phi``, ``grad`` and ``hess`` callables (vectorized over (..., 2))."""

    kind = "analytic"

    def __init__(self, phi, grad, hess, samples_per_edge=32):
        self._phi, self._grad, self._hess = phi, grad, hess
        self.samples_per_edge = samples_per_edge

    def phi(self, x):
        return self._phi(np.asarray(x, float))

    def grad(self, x):
        return self._grad(np.asarray(x, float))

    def hess(self, x):
        return self._hess(np.asarray(x, float))


def parse_geometry(text: str) -> LevelSetGeometry:
    """``circle:cx,cy,r`` | ``ellipse`` | ``ellipse:a2,b2,offset`` | ``line:a,b,c``."""
    name, _, args = text.strip().partition(":")
    values = [float(v) for v in args.split(",")] if args else []
    name = name.lower()
    if name == "circle":
        if not values:
            return Circle()
        if len(values) != 3:
            raise GeometryError(f"circle needs cx,cy,r: {text!r}")
        return Circle(values[:2], values[2])
    if name == "ellipse":
        if not values:
            return Ellipse()
        if len(values) != 3:
            raise GeometryError(f"ellipse needs a2,b2,offset: {text!r}")
        return Ellipse(*values)
    if name == "line":
        if len(values) != 3:
            raise GeometryError(f"line needs a,b,c: {text!r}")
        return Line(*values)
    raise GeometryError(f"unknown geometry {text!r}")


# --------------------------------------------------------------------------
# closest point, extension, curvature
# --------------------------------------------------------------------------


def closest_point(geom: LevelSetGeometry, x, maxiter: int = 50, tol: float = 1e-14):
    """Closest point on the zero level set for points of shape (2,) or (m, 2)."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    pts = np.atleast_2d(x)
    if isinstance(geom, Circle):
        rel = pts - geom.center
        r = np.linalg.norm(rel, axis=1)
        if np.any(r < GRAD_TOL):
            raise ProjectionError("closest point undefined at the circle center")
        out = geom.center + geom.radius * rel / r[:, None]
    elif isinstance(geom, Line):
        out = pts - geom.phi(pts)[:, None] * geom.nu
    else:
        out = _newton_projection(geom, pts, maxiter, tol)
    return out[0] if single else out


def _projection_start(geom, pts, maxiter, samples=512):
    """Initial guess near the global minimizer of the distance."""
    if geom.has_parametrization() and geom.period is not None:
        # nearest of a dense set of curve samples; a gradient-flow start can
        # land near the wrong critical point for points close to the medial axis
        curve = geom.curve_point(np.linspace(0.0, geom.period, samples, endpoint=False))
        nearest = np.empty(len(pts), dtype=int)
        for lo in range(0, len(pts), 4096):
            d = pts[lo:lo + 4096, None, :] - curve[None]
            nearest[lo:lo + 4096] = np.argmin(np.einsum("mkd,mkd->mk", d, d), axis=1)
        return curve[nearest].copy()
    y = pts.copy()
    for _ in range(maxiter):
        g = geom.grad(y)
        f = geom.phi(y)
        step = (f / np.einsum("ij,ij->i", g, g))[:, None] * g
        y = y - step
        if np.max(np.abs(step)) < 1e-3 * max(1.0, np.max(np.abs(pts - y))):
            break
    return y


def _newton_projection(geom, pts, maxiter, tol):
    # Start on or near the curve, then Newton on
    # y - x + lam * grad(y) = 0, phi(y) = 0.
    y = _projection_start(geom, pts, maxiter)
    g = geom.grad(y)
    lam = np.einsum("ij,ij->i", pts - y, g) / np.einsum("ij,ij->i", g, g)
    scale = 1.0 + np.max(np.abs(pts))
    for _ in range(maxiter):
        g = geom.grad(y)
        H = geom.hess(y)
        F = np.concatenate([y - pts + lam[:, None] * g, geom.phi(y)[:, None]], axis=1)
        if np.max(np.abs(F)) < tol * scale:
            return y
        J = np.zeros((len(y), 3, 3))
        J[:, :2, :2] = np.eye(2) + lam[:, None, None] * H
        J[:, :2, 2] = g
        J[:, 2, :2] = g
        delta = np.linalg.solve(J, -F[..., None])[..., 0]
        y = y + delta[:, :2]
        lam = lam + delta[:, 2]
        if np.max(np.abs(delta)) < tol * scale:
            return y
    raise ProjectionError(f"closest-point projection did not converge in {maxiter} Newton steps")


def extend_scalar(geom: LevelSetGeometry, u, x):
    """Closest-point extension u(p(x)) of a function defined on the curve."""
    return u(closest_point(geom, x))


def exact_mean_curvature_vector(geom: LevelSetGeometry, x):
    """-(div n) n with n = grad(phi)/|grad(phi)|, for points of shape (..., 2)."""
    x = np.asarray(x, dtype=float)
    g = geom.grad(x)
    H = geom.hess(x)
    gn = np.linalg.norm(g, axis=-1)
    if np.any(gn < GRAD_TOL):
        raise SingularGeometryError("|grad phi| vanishes")
    trace = H[..., 0, 0] + H[..., 1, 1]
    gHg = np.einsum("...i,...ij,...j->...", g, H, g)
    div_n = trace / gn - gHg / gn**3
    return -div_n[..., None] * g / gn[..., None]


# --------------------------------------------------------------------------
# cut quadrature
# --------------------------------------------------------------------------


@dataclass
class CutQuadrature:
    """Quadrature on the discrete curve, flattened over all cut triangles."""

    elements: np.ndarray      # (nq,) background triangle ids
    points: np.ndarray        # (nq, 2)
    weights: np.ndarray       # (nq,) arclength weights
    normals: np.ndarray       # (nq, 2)
    tangents: np.ndarray      # (nq, 2)
    backend: str
    order: int
    segments: np.ndarray | None = None
    segment_elements: np.ndarray | None = None

    def element_ids(self) -> np.ndarray:
        return np.unique(self.elements)

    def total_length(self) -> float:
        return float(self.weights.sum())

    def element_lengths(self) -> dict:
        ids, inv = np.unique(self.elements, return_inverse=True)
        return dict(zip(ids.tolist(), np.bincount(inv, weights=self.weights).tolist()))

    def restrict(self, triangle_id: int) -> "CutQuadrature":
        m = self.elements == triangle_id
        seg = None
        seg_el = None
        if self.segments is not None:
            sm = self.segment_elements == triangle_id
            seg, seg_el = self.segments[sm], self.segment_elements[sm]
        return CutQuadrature(self.elements[m], self.points[m], self.weights[m], self.normals[m],
                             self.tangents[m], self.backend, self.order, seg, seg_el)


def gauss_legendre(order: int):
    """Nodes/weights on [-1, 1] exact for polynomials of degree ``order``."""
    npts = max(1, order // 2 + 1)
    return np.polynomial.legendre.leggauss(npts)


def _solve_quadratics(A, B, C):
    """Real roots of A t^2 + B t + C = 0 per row; returns (row, t) arrays."""
    rows, roots = [], []
    scale = np.abs(A) + np.abs(B) + np.abs(C)
    lin = np.abs(A) <= 1e-14 * scale
    # linear rows
    idx = np.flatnonzero(lin & (np.abs(B) > 0))
    rows.append(idx)
    roots.append(-C[idx] / B[idx])
    idx = np.flatnonzero(~lin)
    a, b, c = A[idx], B[idx], C[idx]
    disc = b * b - 4 * a * c
    ok = disc >= 0
    idx, a, b, c, disc = idx[ok], a[ok], b[ok], c[ok], disc[ok]
    sq = np.sqrt(disc)
    q = -0.5 * (b + np.where(b >= 0, sq, -sq))
    t1 = np.where(q != 0, q / a, 0.0)
    safe_q = np.where(q != 0, q, 1.0)
    t2 = np.where(q != 0, c / safe_q, 0.0)
    rows += [idx, idx]
    roots += [t1, t2]
    return np.concatenate(rows), np.concatenate(roots)


def _edge_crossings(geom: LevelSetGeometry, a: np.ndarray, b: np.ndarray):
    """Curve/edge intersections as (edge index, t in [0, 1]) arrays.

    Roots within SNAP of an endpoint are snapped onto it.
    """
    d = b - a
    if geom.polynomial_edges:
        rows, ts = _solve_quadratics(*geom.edge_polynomial(a, d))
    else:
        rows, ts = _sampled_edge_roots(geom, a, d)
    keep = (ts >= -SNAP) & (ts <= 1 + SNAP)
    rows, ts = rows[keep], np.clip(ts[keep], 0.0, 1.0)
    ts = np.where(ts < SNAP, 0.0, np.where(ts > 1 - SNAP, 1.0, ts))
    return rows, ts


def _sampled_edge_roots(geom, a, d):
    m = geom.samples_per_edge if hasattr(geom, "samples_per_edge") else 32
    t = np.linspace(0.0, 1.0, m + 1)
    pts = a[:, None, :] + t[None, :, None] * d[:, None, :]
    f = geom.phi(pts)
    rows, roots = [], []
    cand = np.flatnonzero(np.any(np.sign(f[:, :-1]) != np.sign(f[:, 1:]), axis=1) | np.any(f == 0, axis=1))
    for e in cand:
        fe = f[e]
        for k in range(m):
            if fe[k] == 0.0:
                rows.append(e)
                roots.append(t[k])
            elif fe[k] * fe[k + 1] < 0:
                g = lambda s: float(geom.phi(a[e] + s * d[e]))
                rows.append(e)
                roots.append(brentq(g, t[k], t[k + 1], xtol=1e-15, rtol=4 * np.finfo(float).eps))
        if fe[m] == 0.0:
            rows.append(e)
            roots.append(1.0)
    return np.asarray(rows, dtype=np.int64), np.asarray(roots, dtype=float)


def _barycentric(tri: np.ndarray, x: np.ndarray) -> np.ndarray:
    T = np.column_stack([tri[1] - tri[0], tri[2] - tri[0]])
    l1, l2 = np.linalg.solve(T, x - tri[0])
    return np.array([1.0 - l1 - l2, l1, l2])


def _inside_triangle(tri: np.ndarray, x: np.ndarray, tol: float = 1e-12) -> bool:
    return bool(_barycentric(tri, x).min() >= -tol)


def _owns_arc(geom, tri, x, tol=1e-12) -> bool:
    """Arc midpoint test; an arc running along an edge belongs to the negative side."""
    lam = _barycentric(tri, x)
    if lam.min() < -tol:
        return False
    if lam.min() > tol:
        return True
    return bool(geom.phi(tri.mean(axis=0)) < 0)


def _arcs_from_params(geom, tri, params, h):
    """Parameter intervals of the curve lying inside ``tri``."""
    params = np.sort(np.asarray(params, float))
    period = geom.period
    if params.size:
        tol = 1e-13 * (period if period else max(1.0, np.max(np.abs(params))))
        uniq = [params[0]]
        for s in params[1:]:
            if s - uniq[-1] > tol:
                uniq.append(s)
        if period and len(uniq) > 1 and uniq[0] + period - uniq[-1] <= tol:
            uniq.pop()
        params = np.asarray(uniq)
    cands = [(params[i], params[i + 1]) for i in range(len(params) - 1)]
    if period and len(params) >= 1:
        cands.append((params[-1], params[0] + period))
    arcs = []
    for s0, s1 in cands:
        mid = geom.curve_point(0.5 * (s0 + s1))
        if _owns_arc(geom, tri, mid):
            if arcs and arcs[-1][1] == s0:
                arcs[-1] = (arcs[-1][0], s1)
            else:
                arcs.append((s0, s1))
    if period and len(arcs) > 1 and arcs[-1][1] - period == arcs[0][0]:
        arcs[0] = (arcs[-1][0] - period, arcs[0][1])
        arcs.pop()
    return arcs


def _param_arc_rule(geom, s0, s1, xg, wg):
    half = 0.5 * (s1 - s0)
    s = 0.5 * (s0 + s1) + half * xg
    pts = geom.curve_point(s)
    speed = np.linalg.norm(geom.curve_velocity(s), axis=-1)
    return pts, half * wg * speed


def _chord_arc_rule(geom, P, Q, xg, wg, tol=1e-14, maxiter=50):
    # height function over the chord P->Q: x(s) = P + s (Q - P) + tau(s) m
    chord = Q - P
    m = np.array([-chord[1], chord[0]]) / np.linalg.norm(chord)
    s = 0.5 * (1.0 + xg)
    tau = np.zeros_like(s)
    for _ in range(maxiter):
        x = P + s[:, None] * chord + tau[:, None] * m
        f = geom.phi(x)
        dtau = f / (geom.grad(x) @ m)
        tau -= dtau
        if np.max(np.abs(dtau)) < tol * np.linalg.norm(chord):
            break
    else:
        raise DegenerateCutError("height-function projection onto the curve failed")
    x = P + s[:, None] * chord + tau[:, None] * m
    g = geom.grad(x)
    dtau_ds = -(g @ chord) / (g @ m)
    speed = np.linalg.norm(chord[None, :] + dtau_ds[:, None] * m[None, :], axis=1)
    return x, 0.5 * wg * speed


def _triangle_rule_from_crossings(geom, tri, points, params, order, h):
    """Quadrature (points, weights) on the part of the curve inside ``tri``."""
    xg, wg = gauss_legendre(order)
    if geom.has_parametrization():
        arcs = _arcs_from_params(geom, tri, params, h)
        if len(arcs) > 1:
            raise MultiComponentCutError(f"{len(arcs)} curve pieces in one triangle")
        out = []
        for s0, s1 in arcs:
            pts, w = _param_arc_rule(geom, s0, s1, xg, wg)
            if w.sum() > SNAP * h:
                out.append((pts, w))
        return out
    # general level set: only a single entry/exit pair is supported
    uniq = []
    for p in points:
        if not any(np.linalg.norm(p - q) <= SNAP * h for q in uniq):
            uniq.append(p)
    if len(uniq) < 2:
        return []
    if len(uniq) > 2:
        raise MultiComponentCutError(f"{len(uniq)} boundary crossings in one triangle")
    P, Q = uniq
    pts, w = _chord_arc_rule(geom, P, Q, xg, wg)
    if not _owns_arc(geom, tri, pts[len(pts) // 2], tol=1e-8):
        return []
    if w.sum() <= SNAP * h:
        return []
    return [(pts, w)]


def _finish(geom, elements, pts, w, backend, order, normals=None):
    if normals is None:
        g = geom.grad(pts)
        gn = np.linalg.norm(g, axis=1)
        if gn.size and gn.min() < GRAD_TOL:
            raise SingularGeometryError("|grad phi| vanishes at a quadrature node")
        normals = g / gn[:, None]
    tangents = np.column_stack([-normals[:, 1], normals[:, 0]])
    return CutQuadrature(np.asarray(elements, dtype=np.int64), pts, w, normals, tangents, backend, order)


def cut_quadrature_exact(geom: LevelSetGeometry, element, order: int = 4, h: float | None = None) -> CutQuadrature:
    """Quadrature on the curve inside a single triangle given by its (3, 2) vertices."""
    tri = np.asarray(element, dtype=float)
    if h is None:
        h = float(np.max(np.linalg.norm(tri - np.roll(tri, -1, axis=0), axis=1)))
    a, b = tri, np.roll(tri, -1, axis=0)
    rows, ts = _edge_crossings(geom, a, b)
    points = a[rows] + ts[:, None] * (b - a)[rows]
    if rows.size == 0:
        sp = geom.sample_point()
        if sp is None or not _inside_triangle(tri, sp):
            return _finish(geom, [], np.zeros((0, 2)), np.zeros(0), "exact", order, np.zeros((0, 2)))
        params = np.zeros(0)
        if geom.has_parametrization():
            params = np.array([geom.curve_param(sp)])
    else:
        params = geom.curve_param(points) if geom.has_parametrization() else None
    pieces = _triangle_rule_from_crossings(geom, tri, points, params, order, h)
    if not pieces:
        return _finish(geom, [], np.zeros((0, 2)), np.zeros(0), "exact", order, np.zeros((0, 2)))
    pts = np.concatenate([p for p, _ in pieces])
    w = np.concatenate([w for _, w in pieces])
    return _finish(geom, np.zeros(len(w), dtype=np.int64), pts, w, "exact", order)


def cut_quadrature(bg: BackgroundMesh, geom: LevelSetGeometry, backend: str = "exact", order: int = 4) -> CutQuadrature:
    """Quadrature on the discrete curve over every cut triangle of ``bg``."""
    if backend == "exact":
        quad = _exact_mesh_quadrature(bg, geom, order)
    elif backend == "pl":
        quad = piecewise_linear_reconstruction(bg, geom, order)
    else:
        raise ValueError(f"unknown geometry backend {backend!r}")
    if quad.weights.size == 0:
        raise MeshError("the curve does not cut the background mesh")
    return quad


def _exact_mesh_quadrature(bg, geom, order):
    V = bg.vertices
    a, b = V[bg.edges[:, 0]], V[bg.edges[:, 1]]
    rows, ts = _edge_crossings(geom, a, b)
    cross_pts = a[rows] + ts[:, None] * (b - a)[rows]
    param = geom.has_parametrization()
    cross_par = geom.curve_param(cross_pts) if param else None

    per_tri: dict[int, list[int]] = {}
    for k, e in enumerate(rows):
        for t in bg.edge_triangles[e]:
            if t >= 0:
                per_tri.setdefault(int(t), []).append(k)

    if not per_tri:
        sp = geom.sample_point()
        if sp is None:
            raise MeshError("the curve does not cut the background mesh")
        for t in range(bg.n_triangles):
            if _inside_triangle(V[bg.triangles[t]], sp):
                pts_t = np.asarray([sp])
                per_tri[t] = []
                cross_pts = pts_t
                cross_par = np.array([geom.curve_param(sp)]) if param else None
                whole = t
                break
        else:
            raise MeshError("the curve does not cut the background mesh")
    else:
        whole = None

    elements, pts_all, w_all = [], [], []
    for t in sorted(per_tri):
        tri = V[bg.triangles[t]]
        idx = per_tri[t] if whole is None else [0]
        points = cross_pts[idx]
        params = cross_par[idx] if param else None
        for pts, w in _triangle_rule_from_crossings(geom, tri, points, params, order, bg.h):
            elements.append(np.full(len(w), t, dtype=np.int64))
            pts_all.append(pts)
            w_all.append(w)
    if not w_all:
        raise MeshError("the curve does not cut the background mesh")
    return _finish(geom, np.concatenate(elements), np.concatenate(pts_all), np.concatenate(w_all), "exact", order)


def piecewise_linear_reconstruction(bg: BackgroundMesh, geom: LevelSetGeometry, order: int = 2) -> CutQuadrature:
    """Zero segments of the nodal linear interpolant of ``geom.phi``."""
    eps = SNAP * bg.h
    vals = geom.phi(bg.vertices).astype(float)
    vals = np.where(np.abs(vals) < eps, eps, vals)
    tv = vals[bg.triangles]                       # (nt, 3)
    pos = tv > 0
    cut = np.flatnonzero(pos.any(axis=1) & ~pos.all(axis=1))
    if cut.size == 0:
        return _finish(geom, [], np.zeros((0, 2)), np.zeros(0), "pl", order, np.zeros((0, 2)))
    P = bg.vertices[bg.triangles[cut]]            # (m, 3, 2)
    f = tv[cut]
    ends = np.zeros((len(cut), 2, 2))
    slot = np.zeros(len(cut), dtype=np.int64)
    for k in range(3):
        k1 = (k + 1) % 3
        crosses = (f[:, k] > 0) != (f[:, k1] > 0)
        lam = f[crosses, k] / (f[crosses, k] - f[crosses, k1])
        z = P[crosses, k] + lam[:, None] * (P[crosses, k1] - P[crosses, k])
        ends[crosses, slot[crosses]] = z
        slot[crosses] += 1
    # gradient of the linear interpolant
    J = np.stack([P[:, 1] - P[:, 0], P[:, 2] - P[:, 0]], axis=1)       # rows are edge vectors
    rhs = np.column_stack([f[:, 1] - f[:, 0], f[:, 2] - f[:, 0]])
    g = np.linalg.solve(J, rhs[..., None])[..., 0]
    normals = g / np.linalg.norm(g, axis=1)[:, None]

    xg, wg = gauss_legendre(order)
    s = 0.5 * (1.0 + xg)
    length = np.linalg.norm(ends[:, 1] - ends[:, 0], axis=1)
    pts = ends[:, None, 0, :] + s[None, :, None] * (ends[:, None, 1, :] - ends[:, None, 0, :])
    w = 0.5 * wg[None, :] * length[:, None]
    nq = len(xg)
    quad = _finish(
        geom,
        np.repeat(cut, nq),
        pts.reshape(-1, 2),
        w.ravel(),
        "pl",
        order,
        np.repeat(normals, nq, axis=0),
    )
    quad.segments = ends
    quad.segment_elements = cut
    return quad
