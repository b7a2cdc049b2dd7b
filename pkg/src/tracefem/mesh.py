"""Structured background triangulation and the active (cut) sub-mesh."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class MeshError(ValueError):
    """Invalid mesh input or a geometry that does not meet the mesh."""


@dataclass(frozen=True)
class BackgroundMesh:
    """Uniform triangulation of an axis-aligned box.

    Every square of the ``n x n`` grid is split along the same diagonal.
    ``h`` is the axis spacing, not the triangle diameter.
    """

    vertices: np.ndarray          # (nv, 2)
    triangles: np.ndarray         # (nt, 3), counter-clockwise
    edges: np.ndarray             # (ne, 2), vertex pairs with edges[:, 0] < edges[:, 1]
    edge_triangles: np.ndarray    # (ne, 2), incident triangles, -1 on the boundary
    triangle_edges: np.ndarray    # (nt, 3), local edge k joins local vertices k and k+1
    h: float
    shift: np.ndarray
    bbox: tuple

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def signed_areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    def diameters(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        lengths = np.linalg.norm(p - np.roll(p, -1, axis=1), axis=2)
        return lengths.max(axis=1)

    def edge_incidence_counts(self) -> np.ndarray:
        return (self.edge_triangles >= 0).sum(axis=1)


def build_background_mesh(bbox=(-1.5, 1.5, -1.5, 1.5), n: int = 12, shift=(0.0, 0.0)) -> BackgroundMesh:
    """Uniform triangulation of ``bbox = (xmin, xmax, ymin, ymax)`` with ``n`` cells per axis.

    The box must be square-celled: ``h`` is taken from the x extent and the
    y extent must match it.
    """
    if n < 1:
        raise MeshError(f"n must be >= 1, got {n}")
    xmin, xmax, ymin, ymax = map(float, bbox)
    width, height = xmax - xmin, ymax - ymin
    if not (width > 0 and height > 0):
        raise MeshError(f"degenerate bounding box {bbox}")
    if not np.isclose(width, height, rtol=1e-12, atol=0.0):
        raise MeshError("bounding box must be square so that h_x1 = h_x2")
    shift = np.asarray(shift, dtype=float).reshape(2)
    h = width / n

    xs = xmin + h * np.arange(n + 1)
    ys = ymin + h * np.arange(n + 1)
    X, Y = np.meshgrid(xs, ys)  # row j is y index
    vertices = np.column_stack([X.ravel(), Y.ravel()]) + shift

    i, j = np.meshgrid(np.arange(n), np.arange(n))
    i, j = i.ravel(), j.ravel()
    a = j * (n + 1) + i
    b = a + 1
    c = a + n + 2
    d = a + n + 1
    # both triangles of square (i, j) share the diagonal a-c
    triangles = np.empty((2 * n * n, 3), dtype=np.int64)
    triangles[0::2] = np.column_stack([a, b, c])
    triangles[1::2] = np.column_stack([a, c, d])

    local = np.stack([triangles, np.roll(triangles, -1, axis=1)], axis=2)  # (nt, 3, 2)
    pairs = np.sort(local.reshape(-1, 2), axis=1)
    nv = len(vertices)
    keys, inverse = np.unique(pairs[:, 0] * nv + pairs[:, 1], return_inverse=True)
    edges = np.column_stack([keys // nv, keys % nv])
    inverse = inverse.ravel()
    triangle_edges = inverse.reshape(-1, 3)

    edge_triangles = np.full((len(edges), 2), -1, dtype=np.int64)
    owner = np.repeat(np.arange(len(triangles)), 3)
    # stable sort keeps the lower triangle id in slot 0
    order = np.argsort(inverse, kind="stable")
    e_sorted, t_sorted = inverse[order], owner[order]
    first = np.ones(len(order), dtype=bool)
    first[1:] = e_sorted[1:] != e_sorted[:-1]
    edge_triangles[e_sorted[first], 0] = t_sorted[first]
    edge_triangles[e_sorted[~first], 1] = t_sorted[~first]

    return BackgroundMesh(
        vertices=vertices,
        triangles=triangles,
        edges=edges,
        edge_triangles=edge_triangles,
        triangle_edges=triangle_edges,
        h=h,
        shift=shift,
        bbox=(xmin, xmax, ymin, ymax),
    )


@dataclass(frozen=True)
class ActiveMesh:
    """Background triangles cut by the discrete curve, with their interior faces.

    ``face_elements[k] = (minus, plus)`` with ``minus < plus`` (triangle ids) and
    ``face_normals[k]`` points from ``minus`` into ``plus``.
    """

    background: BackgroundMesh
    elements: np.ndarray            # sorted triangle ids
    face_edges: np.ndarray          # (nf,) edge ids
    face_elements: np.ndarray       # (nf, 2) triangle ids
    face_normals: np.ndarray        # (nf, 2)
    _lookup: np.ndarray = field(repr=False)

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    @property
    def n_faces(self) -> int:
        return len(self.face_edges)

    def local_index(self, triangle_ids) -> np.ndarray:
        """Position of background triangles within ``elements`` (-1 if inactive)."""
        return self._lookup[np.asarray(triangle_ids)]

    def face_endpoints(self) -> np.ndarray:
        """(nf, 2, 2) array with the two vertices of every interior face."""
        bg = self.background
        return bg.vertices[bg.edges[self.face_edges]]


def interior_faces(bg: BackgroundMesh, elements) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Edges whose two incident triangles both belong to ``elements``."""
    elements = np.asarray(elements, dtype=np.int64)
    active = np.zeros(bg.n_triangles, dtype=bool)
    active[elements] = True
    et = bg.edge_triangles
    both = (et[:, 0] >= 0) & (et[:, 1] >= 0)
    both[both] = active[et[both, 0]] & active[et[both, 1]]
    face_edges = np.flatnonzero(both)
    face_elements = np.sort(et[face_edges], axis=1)

    p = bg.vertices[bg.edges[face_edges]]
    tangent = p[:, 1] - p[:, 0]
    normal = np.column_stack([tangent[:, 1], -tangent[:, 0]])
    normal /= np.linalg.norm(normal, axis=1)[:, None]
    centroid_minus = bg.vertices[bg.triangles[face_elements[:, 0]]].mean(axis=1)
    outward = np.einsum("ij,ij->i", normal, p[:, 0] - centroid_minus)
    normal[outward < 0] *= -1.0
    return face_edges, face_elements, normal


def make_active_mesh(bg: BackgroundMesh, elements) -> ActiveMesh:
    elements = np.unique(np.asarray(elements, dtype=np.int64))
    if elements.size == 0:
        raise MeshError("the discrete curve does not cut any background triangle")
    lookup = np.full(bg.n_triangles, -1, dtype=np.int64)
    lookup[elements] = np.arange(len(elements))
    face_edges, face_elements, face_normals = interior_faces(bg, elements)
    return ActiveMesh(bg, elements, face_edges, face_elements, face_normals, lookup)


def extract_active_mesh(bg: BackgroundMesh, geom, quadrature=None) -> ActiveMesh:
    """Active mesh of the triangles carrying a piece of the discrete curve.

    Without ``quadrature`` the exact-curve intersection is used.
    """
    if quadrature is None:
        from .geometry import cut_quadrature

        quadrature = cut_quadrature(bg, geom, backend="exact", order=2)
    return make_active_mesh(bg, quadrature.element_ids())
