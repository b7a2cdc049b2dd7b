"""Bilinear and linear forms of the stabilized trace finite element method.

All matrices are accumulated as triplets from local blocks whose lower
triangle mirrors the upper one, so every assembled matrix is bitwise
symmetric without any post-hoc symmetrization.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field, asdict

import numpy as np
import scipy.sparse as sp

from .fem import FiniteElementSpace
from .geometry import GRAD_TOL, CutQuadrature, LevelSetGeometry, SingularGeometryError, closest_point, gauss_legendre

VARIANTS = ("proposed", "pure_face", "normal_gradient_element", "full_gradient", "none")


@dataclass(frozen=True)
class StabilizationConfig:
    """Choice of stabilization and its constants.

    ``c_F[j-1]`` and ``c_Gamma[j-1]`` multiply the order-j face-jump and
    surface normal-derivative terms, both scaled by ``h**(2*(j-1+gamma))``;
    the face term carries an extra ``h**(1-cd)``.  ``c_T`` and ``alpha``
    belong to the element normal-gradient and full-gradient variants.
    For ``pure_face`` only ``c_F[0]`` is used, with gamma = 0.
    """

    variant: str = "proposed"
    gamma: float = 1.0
    c_F: tuple = ()
    c_Gamma: tuple = ()
    alpha: float = 1.0
    c_T: float = 0.1
    cd: int = 1

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown stabilization variant {self.variant!r}")
        object.__setattr__(self, "c_F", tuple(float(c) for c in self.c_F))
        object.__setattr__(self, "c_Gamma", tuple(float(c) for c in self.c_Gamma))
        if not 0.0 <= self.gamma <= 1.0:
            warnings.warn(f"gamma={self.gamma} outside [0, 1]", stacklevel=3)
        if any(c < 0 for c in self.c_F + self.c_Gamma) or self.c_T < 0:
            raise ValueError("stabilization constants must be nonnegative")
        if int(self.cd) != self.cd or self.cd < 1:
            raise ValueError("codimension must be an integer >= 1")

    @classmethod
    def proposed(cls, p, c_F, c_Gamma=None, gamma=1.0, cd=1):
        c_F = _per_order(c_F, p)
        c_Gamma = c_F if c_Gamma is None else _per_order(c_Gamma, p)
        return cls("proposed", gamma, c_F, c_Gamma, cd=cd)

    @classmethod
    def laplace_beltrami_defaults(cls, p):
        return cls.proposed(p, [2.5 * 10.0 ** -j for j in range(1, p + 1)])

    @classmethod
    def mass_defaults(cls, p):
        return cls.proposed(p, [0.03 * 20.0 ** -j for j in range(1, p + 1)])

    @classmethod
    def pure_face(cls, c=0.1):
        return cls("pure_face", 0.0, (c,), ())

    def face_terms(self, p):
        """[(j, constant)] of the face-jump part, with the effective gamma."""
        if self.variant == "proposed":
            return [(j, self.c_F[j - 1]) for j in range(1, p + 1) if j <= len(self.c_F)], self.gamma
        if self.variant == "pure_face":
            return [(1, self.c_F[0])], 0.0
        return [], self.gamma

    def surface_terms(self, p):
        if self.variant == "proposed":
            return [(j, self.c_Gamma[j - 1]) for j in range(1, p + 1) if j <= len(self.c_Gamma)]
        return []

    def scaled(self, t):
        return StabilizationConfig(self.variant, self.gamma, tuple(t * c for c in self.c_F),
                                   tuple(t * c for c in self.c_Gamma), self.alpha, t * self.c_T, self.cd)

    def as_dict(self):
        return asdict(self)


def _per_order(c, p):
    c = np.atleast_1d(np.asarray(c, dtype=float))
    if c.size == 1:
        c = np.full(p, c[0])
    if c.size < p:
        raise ValueError(f"need {p} per-order constants, got {c.size}")
    return tuple(c[:p])


@dataclass
class AssembledSystem:
    matrix: sp.csr_matrix
    rhs: np.ndarray
    constraint_weights: np.ndarray | None
    h: float
    p: int
    config: StabilizationConfig | None
    parts: dict = field(default_factory=dict)


# --------------------------------------------------------------------------
# triplet helpers
# --------------------------------------------------------------------------


def _symmetric_local(local):
    upper = np.triu(local)
    return upper + np.swapaxes(np.triu(local, 1), -1, -2)


def _scatter(dofs, local, n):
    # duplicates are summed in an unspecified order, so only the upper
    # triangle is accumulated and then mirrored to keep exact symmetry
    local = _symmetric_local(local)
    m = dofs.shape[1]
    ia, ib = np.triu_indices(m)
    ri, ci = dofs[:, ia], dofs[:, ib]
    rows, cols = np.minimum(ri, ci).ravel(), np.maximum(ri, ci).ravel()
    U = sp.coo_matrix((local[:, ia, ib].ravel(), (rows, cols)), shape=(n, n)).tocsr()
    A = (U + sp.triu(U, 1, format="csr").T).tocsr()
    A.sum_duplicates()
    A.sort_indices()
    return A


def _zeros(n):
    return sp.csr_matrix((n, n))


def _weighted_gram(B, w):
    """sum_q w_q B_q B_q^T per row q: (m, n) x (m,) -> (m, n, n)."""
    return w[:, None, None] * B[:, :, None] * B[:, None, :]


# --------------------------------------------------------------------------
# forms on the curve
# --------------------------------------------------------------------------


def _quad_local(space, quad):
    loc = space.local(quad.elements)
    return loc, space.cell_dofs[loc]


def assemble_ah(space: FiniteElementSpace, quad: CutQuadrature) -> sp.csr_matrix:
    """(grad_Gh w, grad_Gh v) on the discrete curve."""
    loc, dofs = _quad_local(space, quad)
    G = space.gradients(loc, quad.points)
    n = quad.normals
    Gt = G - np.einsum("qi,qk->qik", np.einsum("qik,qk->qi", G, n), n)
    local = quad.weights[:, None, None] * np.einsum("qik,qjk->qij", Gt, Gt)
    return _scatter(dofs, local, space.ndof)


def assemble_mass(space: FiniteElementSpace, quad: CutQuadrature) -> sp.csr_matrix:
    loc, dofs = _quad_local(space, quad)
    return _scatter(dofs, _weighted_gram(space.values(loc, quad.points), quad.weights), space.ndof)


def assemble_sh_surface(space: FiniteElementSpace, quad: CutQuadrature, config: StabilizationConfig) -> sp.csr_matrix:
    """sum_j c_Gamma_j h^(2(j-1+gamma)) (D^j_nh w, D^j_nh v) on the curve."""
    terms = config.surface_terms(space.p)
    if not terms:
        return _zeros(space.ndof)
    loc, dofs = _quad_local(space, quad)
    h = space.h
    local = 0.0
    for j, c in terms:
        if c == 0.0:
            continue
        D = space.directional(loc, quad.points, quad.normals, j)
        local = local + _weighted_gram(D, c * h ** (2 * (j - 1 + config.gamma)) * quad.weights)
    if np.isscalar(local):
        return _zeros(space.ndof)
    return _scatter(dofs, local, space.ndof)


def assemble_constraint_weights(space: FiniteElementSpace, quad: CutQuadrature) -> np.ndarray:
    """w_i = integral of basis function i over the discrete curve."""
    loc, dofs = _quad_local(space, quad)
    vals = space.values(loc, quad.points) * quad.weights[:, None]
    return np.bincount(dofs.ravel(), weights=vals.ravel(), minlength=space.ndof)


def assemble_load(space: FiniteElementSpace, quad: CutQuadrature, f, geom: LevelSetGeometry | None = None) -> np.ndarray:
    """b_i = (f o p, phi_i) on the discrete curve; ``f`` maps points of the exact curve to values."""
    pts = quad.points if geom is None else closest_point(geom, quad.points)
    fh = np.asarray(f(pts), dtype=float)
    loc, dofs = _quad_local(space, quad)
    vals = space.values(loc, quad.points) * (quad.weights * fh)[:, None]
    return np.bincount(dofs.ravel(), weights=vals.ravel(), minlength=space.ndof)


# --------------------------------------------------------------------------
# face jumps
# --------------------------------------------------------------------------


def _face_union(space):
    """Union DOF list of the two elements of every face and the plus-side positions in it."""
    active = space.active
    lm = space.local(active.face_elements[:, 0])
    lp = space.local(active.face_elements[:, 1])
    dm, dp = space.cell_dofs[lm], space.cell_dofs[lp]
    nloc = dm.shape[1]
    eq = dp[:, :, None] == dm[:, None, :]
    shared = eq.any(axis=2)
    n_new = nloc - space.p - 1
    pos = np.where(shared, eq.argmax(axis=2), nloc + np.cumsum(~shared, axis=1) - 1)
    extra = dp[~shared].reshape(len(dp), n_new)
    return lm, lp, np.concatenate([dm, extra], axis=1), pos


def assemble_sh_face(space: FiniteElementSpace, config: StabilizationConfig, order: int | None = None) -> sp.csr_matrix:
    """sum_j c_F_j h^(2(j-1+gamma)) h^(1-cd) ([D^j_nF w], [D^j_nF v]) over interior faces."""
    terms, gamma = config.face_terms(space.p)
    active = space.active
    if not terms or active.n_faces == 0:
        return _zeros(space.ndof)
    order = 2 * space.p if order is None else order
    xg, wg = gauss_legendre(order)
    s = 0.5 * (1.0 + xg)
    ends = active.face_endpoints()
    length = np.linalg.norm(ends[:, 1] - ends[:, 0], axis=1)
    nf, nq = active.n_faces, len(s)
    pts = (ends[:, None, 0] + s[None, :, None] * (ends[:, None, 1] - ends[:, None, 0])).reshape(-1, 2)
    w = (0.5 * length[:, None] * wg[None, :]).ravel()
    normals = np.repeat(active.face_normals, nq, axis=0)

    lm, lp, union, pos = _face_union(space)
    nloc = space.basis.n_local
    h = space.h
    local = np.zeros((nf, union.shape[1], union.shape[1]))
    faces = np.arange(nf)
    for j, c in terms:
        if c == 0.0:
            continue
        Dm = space.directional(np.repeat(lm, nq), pts, normals, j).reshape(nf, nq, nloc)
        Dp = space.directional(np.repeat(lp, nq), pts, normals, j).reshape(nf, nq, nloc)
        jump = np.zeros((nf, nq, union.shape[1]))
        jump[:, :, :nloc] = -Dm
        for b in range(nloc):
            jump[faces, :, pos[:, b]] += Dp[:, :, b]
        scale = c * h ** (2 * (j - 1 + gamma)) * h ** (1 - config.cd)
        wf = (scale * w).reshape(nf, nq)
        local += np.einsum("fq,fqi,fqj->fij", wf, jump, jump)
    return _scatter(union, local, space.ndof)


# --------------------------------------------------------------------------
# element (bulk) forms
# --------------------------------------------------------------------------


def triangle_rule(order: int):
    """Collapsed Gauss rule on the reference triangle, exact to degree ``order``."""
    npts = order // 2 + 2
    x, w = np.polynomial.legendre.leggauss(npts)
    u, wu = 0.5 * (x + 1), 0.5 * w
    U, V = np.meshgrid(u, u, indexing="ij")
    W = np.outer(wu, wu) * (1.0 - U)
    pts = np.column_stack([U.ravel(), (V * (1.0 - U)).ravel()])
    return pts, W.ravel()


def _bulk_points(space, order):
    ref, wref = triangle_rule(order)
    ne = space.active.n_elements
    loc = np.repeat(np.arange(ne), len(wref))
    x = space.origins[loc] + np.einsum("qij,qj->qi", space.jacobians[loc], np.tile(ref, (ne, 1)))
    w = np.tile(wref, ne) * 2.0 * np.repeat(space.areas, len(wref))
    return loc, x, w


def assemble_bulk_mass(space: FiniteElementSpace, order: int | None = None) -> sp.csr_matrix:
    """L2 mass matrix over the full active triangles."""
    order = 2 * space.p if order is None else order
    loc, x, w = _bulk_points(space, order)
    return _scatter(space.cell_dofs[loc], _weighted_gram(space.values(loc, x), w), space.ndof)


def assemble_bulk_stiffness(space: FiniteElementSpace, order: int | None = None) -> sp.csr_matrix:
    """(grad w, grad v) over the full active triangles."""
    order = 2 * space.p if order is None else order
    loc, x, w = _bulk_points(space, order)
    G = space.gradients(loc, x)
    return _scatter(space.cell_dofs[loc], w[:, None, None] * np.einsum("qik,qjk->qij", G, G), space.ndof)


def assemble_variant(space: FiniteElementSpace, geom: LevelSetGeometry, config: StabilizationConfig,
                     order: int | None = None) -> sp.csr_matrix:
    """Element-volume stabilizations: normal-gradient c_T h^alpha and full-gradient c_T h."""
    h = space.h
    if config.variant == "full_gradient":
        return (config.c_T * h) * assemble_bulk_stiffness(space, order)
    if config.variant != "normal_gradient_element":
        raise ValueError(f"{config.variant!r} is not an element-volume variant")
    order = 2 * space.p + 2 if order is None else order
    loc, x, w = _bulk_points(space, order)
    g = geom.grad(x)
    gn = np.linalg.norm(g, axis=1)
    if gn.min() < GRAD_TOL:
        raise SingularGeometryError("|grad phi| vanishes at a bulk quadrature point")
    D = space.directional(loc, x, g / gn[:, None], 1)
    return _scatter(space.cell_dofs[loc], _weighted_gram(D, config.c_T * h**config.alpha * w), space.ndof)


def assemble_stabilization(space: FiniteElementSpace, quad: CutQuadrature, geom: LevelSetGeometry,
                           config: StabilizationConfig) -> sp.csr_matrix:
    v = config.variant
    if v == "none":
        return _zeros(space.ndof)
    if v in ("proposed", "pure_face"):
        S = assemble_sh_face(space, config)
        if v == "proposed":
            S = S + assemble_sh_surface(space, quad, config)
        return S.tocsr()
    return assemble_variant(space, geom, config)


# --------------------------------------------------------------------------
# systems
# --------------------------------------------------------------------------


def assemble_laplace_beltrami(space, quad, geom, config, f) -> AssembledSystem:
    """a_h + s_h with load (f o p, v) and the mean-value constraint weights."""
    A = assemble_ah(space, quad)
    S = assemble_stabilization(space, quad, geom, config)
    return AssembledSystem(
        matrix=(A + S).tocsr(),
        rhs=assemble_load(space, quad, f, geom),
        constraint_weights=assemble_constraint_weights(space, quad),
        h=space.h,
        p=space.p,
        config=config,
        parts={"a": A, "s": S},
    )


def assemble_mass_system(space, quad, geom, config, f) -> AssembledSystem:
    """(u, v) on the curve + s_h, no constraint."""
    M = assemble_mass(space, quad)
    S = assemble_stabilization(space, quad, geom, config)
    return AssembledSystem((M + S).tocsr(), assemble_load(space, quad, f, geom), None,
                           space.h, space.p, config, {"m": M, "s": S})


def assemble_mean_curvature_system(space, quad, geom, config) -> AssembledSystem:
    """Vector system (H, v) + s_h(H, v) = (grad_Gh x, grad_Gh v), unknowns ordered component-wise.

    The right-hand side pairs the rows of the tangential projector with the
    tangential gradients of the test functions.
    """
    M = assemble_mass(space, quad)
    S = assemble_stabilization(space, quad, geom, config)
    K = (M + S).tocsr()
    loc, dofs = _quad_local(space, quad)
    G = space.gradients(loc, quad.points)
    n = quad.normals
    Gt = G - np.einsum("qi,qk->qik", np.einsum("qik,qk->qi", G, n), n)
    rhs = np.concatenate([
        np.bincount(dofs.ravel(), weights=(Gt[:, :, k] * quad.weights[:, None]).ravel(), minlength=space.ndof)
        for k in range(2)
    ])
    return AssembledSystem(sp.block_diag([K, K], format="csr"), rhs, None, space.h, space.p, config,
                           {"m": M, "s": S, "block": K})
