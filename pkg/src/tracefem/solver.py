"""Linear solves and spectral condition numbers on the mean-value-constrained subspace."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla

DIRECT_MAX = 20_000
DENSE_MAX = 3000
SINGULAR_RATIO = 1e-14
SINGULAR = math.inf  # returned by condition_number for numerically singular operators


class ConditioningError(RuntimeError):
    def __init__(self, msg, kappa_estimate=None):
        super().__init__(msg)
        self.kappa_estimate = kappa_estimate


@dataclass
class ConstrainedSystem:
    A: sp.spmatrix
    b: np.ndarray
    w: np.ndarray | None = None

    def __post_init__(self):
        n = self.A.shape[0]
        if self.A.shape != (n, n) or len(self.b) != n:
            raise ValueError("dimension mismatch")
        if self.w is not None:
            if len(self.w) != n:
                raise ValueError("dimension mismatch")
            if not np.any(self.w):
                raise ValueError("constraint weights must be nonzero")


def _saddle_matrix(A, w):
    w = np.asarray(w, float).reshape(-1, 1)
    return sp.bmat([[sp.csr_matrix(A), sp.csr_matrix(w)], [sp.csr_matrix(w.T), None]], format="csc")


def solve(system: ConstrainedSystem, method: str = "auto", rtol: float = 1e-12) -> np.ndarray:
    """Solve A u = b, or the saddle system [A w; w^T 0][u; lam] = [b; 0] when ``w`` is set."""
    A, b, w = sp.csr_matrix(system.A), np.asarray(system.b, float), system.w
    n = A.shape[0]
    if method == "auto":
        method = "direct" if n <= DIRECT_MAX else "cg"
    if method == "direct":
        if w is None:
            return spla.splu(sp.csc_matrix(A)).solve(b)
        lu = spla.splu(_saddle_matrix(A, w))
        return lu.solve(np.append(b, 0.0))[:n]
    if method == "cg":
        return projected_cg(A, b, w, rtol=rtol)
    raise ValueError(f"unknown solver method {method!r}")


def projected_cg(A, b, w=None, rtol=1e-12, maxiter=None):
    """Jacobi-preconditioned CG, iterating in the complement of ``w`` when given.

    Raises ConditioningError if the residual fails to drop tenfold within 5N steps.
    """
    n = A.shape[0]
    d = A.diagonal()
    if np.any(d <= 0):
        raise ConditioningError("nonpositive diagonal, cannot precondition")
    if w is None:
        proj = lambda v: v
        prec = lambda r: r / d
    else:
        # projected preconditioner keeps all iterates in the constrained subspace
        wn = w / np.linalg.norm(w)
        dw = wn / d
        wdw = wn @ dw
        proj = lambda v: v - (wn @ v) * wn
        prec = lambda r: r / d - ((dw @ r) / wdw) * dw
    maxiter = 5 * n if maxiter is None else maxiter
    x = np.zeros(n)
    r = proj(b.copy())
    bnorm = np.linalg.norm(r)
    if bnorm == 0:
        return x
    z = prec(r)
    p = z.copy()
    rz = r @ z
    best = bnorm
    last_gain = 0
    for it in range(1, maxiter + 1):
        Ap = proj(A @ p)
        pAp = p @ Ap
        if not pAp > 0:  # breakdown: A is not positive definite on the subspace
            break
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        rn = np.linalg.norm(r)
        if rn <= rtol * bnorm:
            return x
        if rn < 0.1 * best:
            best, last_gain = rn, it
        elif it - last_gain > 5 * n:
            break
        z = prec(r)
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise ConditioningError(f"CG stagnated at relative residual {np.linalg.norm(r) / bnorm:.3e}",
                            kappa_estimate=_lanczos_kappa_estimate(A, w))


def _lanczos_kappa_estimate(A, w):
    try:
        return condition_number(A, w, method="lanczos", tol=1e-3)
    except Exception:  # diagnostic only
        return None


def _complement_basis(w, n):
    """Householder reflector rows 1..n-1 form an orthonormal basis of w-perp."""
    u = np.asarray(w, float).copy()
    u[0] += math.copysign(np.linalg.norm(u), u[0] if u[0] != 0 else 1.0)
    u /= np.linalg.norm(u)
    return u


def deflate_dense(A, w=None):
    """Dense matrix of A restricted to w-perp, in an orthonormal basis."""
    A = A.toarray() if sp.issparse(A) else np.asarray(A, float)
    if w is None:
        return A
    u = _complement_basis(w, len(A))
    Au = A @ u
    # H A H with H = I - 2 u u^T
    B = A - 2.0 * np.outer(u, Au) - 2.0 * np.outer(Au, u) + 4.0 * (u @ Au) * np.outer(u, u)
    B = 0.5 * (B + B.T)
    return B[1:, 1:]


def _kappa(lmin, lmax):
    if lmax <= 0 or lmin <= SINGULAR_RATIO * lmax:
        return SINGULAR
    return float(lmax / lmin)


def extreme_eigenvalues(A, w=None, method="auto", tol=1e-10):
    """(lambda_min, lambda_max) of A on w-perp."""
    n = A.shape[0]
    if method == "auto":
        method = "dense" if n <= DENSE_MAX else "lanczos"
    if method == "dense":
        ev = la.eigvalsh(deflate_dense(A, w))
        return float(ev[0]), float(ev[-1])
    if method == "lanczos":
        return _lanczos_extremes(sp.csr_matrix(A), w, tol)
    raise ValueError(f"unknown eigen method {method!r}")


def _lanczos_extremes(A, w, tol):
    n = A.shape[0]
    rng = np.random.default_rng(12345)
    v0 = rng.standard_normal(n)
    if w is None:
        proj = lambda v: v
        lu = spla.splu(sp.csc_matrix(A))
        inv = lu.solve
    else:
        wn = np.asarray(w, float) / np.linalg.norm(w)
        proj = lambda v: v - (wn @ v) * wn
        lu = spla.splu(_saddle_matrix(A, w))
        inv = lambda v: lu.solve(np.append(proj(v), 0.0))[:n]
        v0 = proj(v0)
    op = spla.LinearOperator((n, n), matvec=lambda v: proj(A @ proj(v)), dtype=float)
    lmax = spla.eigsh(op, k=1, which="LA", v0=v0, tol=tol, return_eigenvectors=False)[0]
    inv_op = spla.LinearOperator((n, n), matvec=inv, dtype=float)
    mu = spla.eigsh(inv_op, k=1, which="LA", v0=v0, tol=tol, return_eigenvectors=False)[0]
    lmin = 1.0 / mu if mu > 0 else 0.0
    return float(lmin), float(lmax)


def condition_number(A, w=None, method="auto", tol=1e-10) -> float:
    """lambda_max / lambda_min of A on {v : v.w = 0}; ``SINGULAR`` (inf) when numerically singular."""
    try:
        lmin, lmax = extreme_eigenvalues(A, w, method, tol)
    except RuntimeError:  # singular factorization in the shift-invert path
        return SINGULAR
    return _kappa(lmin, lmax)


def diagonal_scaling(A):
    """D^-1/2 A D^-1/2 with D = diag(A); also returns D^-1/2 as a vector."""
    A = sp.csr_matrix(A)
    d = A.diagonal()
    if np.any(d <= 0):
        raise ValueError("diagonal scaling needs a positive diagonal")
    s = 1.0 / np.sqrt(d)
    Ds = sp.diags(s)
    return (Ds @ A @ Ds).tocsr(), s


def scaled_condition_number(A, w=None, method="auto") -> float:
    """Condition number after diagonal scaling; the constraint transforms to D^-1/2 w."""
    As, s = diagonal_scaling(A)
    return condition_number(As, None if w is None else s * w, method)


def pencil_max(A, B, w=None) -> float:
    """Largest lambda of A v = lambda B v on w-perp (B positive definite there), dense."""
    Ad = deflate_dense(A, w)
    Bd = deflate_dense(B, w)
    try:
        ev = la.eigh(Ad, Bd, eigvals_only=True, subset_by_index=[len(Ad) - 1, len(Ad) - 1])
    except la.LinAlgError:
        return SINGULAR
    return float(ev[-1])
