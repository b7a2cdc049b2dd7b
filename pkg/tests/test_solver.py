from __future__ import annotations

import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from tracefem.analysis import loglog_slope
from tracefem.assembly import StabilizationConfig
from tracefem.solver import (
    SINGULAR,
    ConditioningError,
    ConstrainedSystem,
    condition_number,
    deflate_dense,
    diagonal_scaling,
    pencil_max,
    projected_cg,
    scaled_condition_number,
    solve,
)

from conftest import lb_system


def test_identity_solve():
    e1 = np.eye(5)[0]
    assert np.allclose(solve(ConstrainedSystem(sp.identity(5, format="csr"), e1)), e1)


def test_constrained_identity_is_orthogonal_projection(rng):
    n = 7
    b = rng.standard_normal(n)
    w = rng.random(n) + 0.1
    u = solve(ConstrainedSystem(sp.identity(n, format="csr"), b, w))
    np.testing.assert_allclose(u, b - (w @ b) / (w @ w) * w, atol=1e-14)


@pytest.fixture(scope="module", params=[1, 2, 3])
def lb(request):
    return lb_system(24, request.param, shift=(0.01, 0.004))[3]


def test_direct_solution_satisfies_system(lb):
    A, b, w = lb.matrix, lb.rhs, lb.constraint_weights
    u = solve(ConstrainedSystem(A, b, w))
    # the multiplier absorbs the component of b along w
    lam = (w @ (b - A @ u)) / (w @ w)
    assert np.linalg.norm(b - A @ u - lam * w) < 1e-10 * np.linalg.norm(b)
    assert abs(w @ u) < 1e-10 * np.linalg.norm(w) * np.linalg.norm(u)


def test_cg_agrees_with_direct(lb):
    system = ConstrainedSystem(lb.matrix, lb.rhs, lb.constraint_weights)
    direct = solve(system)
    cg = solve(system, method="cg", rtol=1e-13)
    assert np.linalg.norm(cg - direct) < 1e-8 * np.linalg.norm(direct)


def test_cg_stagnation_reports_estimate():
    A = sp.csr_matrix([[1.0, 1.0], [1.0, 1.0]])
    with pytest.raises(ConditioningError) as info:
        projected_cg(A, np.array([1.0, 0.0]), maxiter=20)
    assert info.value.kappa_estimate == SINGULAR


def test_unknown_method():
    with pytest.raises(ValueError):
        solve(ConstrainedSystem(sp.identity(2, format="csr"), np.ones(2)), method="qr")
    with pytest.raises(ValueError):
        condition_number(sp.identity(2), method="power")


def test_system_validation():
    with pytest.raises(ValueError):
        ConstrainedSystem(sp.identity(3), np.ones(2))
    with pytest.raises(ValueError):
        ConstrainedSystem(sp.identity(3), np.ones(3), np.ones(2))
    with pytest.raises(ValueError):
        ConstrainedSystem(sp.identity(3), np.ones(3), np.zeros(3))


# ---------------------------------------------------------------- condition numbers


def test_condition_number_examples(rng):
    assert condition_number(sp.diags([1.0, 4.0])) == pytest.approx(4.0)
    for _ in range(5):
        w = rng.standard_normal(6)
        assert condition_number(sp.identity(6), w) == pytest.approx(1.0)
    # on the complement of e1 only the remaining diagonal entries count
    assert condition_number(sp.diags([1e-9, 2.0, 5.0]), np.eye(3)[0]) == pytest.approx(2.5)


def test_singular_gives_infinity():
    A = sp.csr_matrix([[1.0, -1.0], [-1.0, 1.0]])
    assert condition_number(A) == SINGULAR == math.inf
    assert condition_number(A, np.array([1.0, 1.0])) == pytest.approx(1.0)
    assert condition_number(A, method="lanczos") == SINGULAR


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(3, 12))
def test_condition_number_invariances(seed, n):
    rng = np.random.default_rng(seed)
    Q = rng.standard_normal((n, n))
    A = Q @ Q.T + n * np.eye(n)
    w = rng.standard_normal(n)
    k = condition_number(A, w)
    P = np.eye(n)[rng.permutation(n)]
    assert condition_number(P @ A @ P.T, P @ w) == pytest.approx(k, rel=1e-9)
    t = float(np.exp(rng.uniform(-5, 5)))
    assert condition_number(t * A, w) == pytest.approx(k, rel=1e-9)
    assert condition_number(A, -3.0 * w) == pytest.approx(k, rel=1e-9)


def test_lanczos_agrees_with_dense(lb):
    dense = condition_number(lb.matrix, lb.constraint_weights, method="dense")
    lanczos = condition_number(lb.matrix, lb.constraint_weights, method="lanczos")
    assert lanczos == pytest.approx(dense, rel=1e-5)


def test_deflation_spectrum(rng):
    n = 6
    A = np.diag(np.arange(1.0, n + 1))
    B = deflate_dense(A, np.eye(n)[2])
    assert B.shape == (n - 1, n - 1)
    np.testing.assert_allclose(np.linalg.eigvalsh(B), [1, 2, 4, 5, 6], atol=1e-13)


# ---------------------------------------------------------------- scaling and pencils


def test_diagonal_scaling():
    As, s = diagonal_scaling(sp.diags([4.0, 9.0]))
    np.testing.assert_allclose(As.toarray(), np.eye(2))
    np.testing.assert_allclose(s, [0.5, 1 / 3])
    A = sp.csr_matrix([[4.0, 1.0], [1.0, 9.0]])
    once, _ = diagonal_scaling(A)
    twice, _ = diagonal_scaling(once)
    np.testing.assert_allclose(twice.toarray(), once.toarray(), atol=1e-15)
    with pytest.raises(ValueError):
        diagonal_scaling(sp.diags([1.0, 0.0]))


def test_unstabilized_linear_scaled_condition_grows_like_inverse_square():
    hs, kappas = [], []
    for n in (12, 24, 48, 96):
        _, _, space, system = lb_system(n, 1, config=StabilizationConfig("none"))
        hs.append(space.h)
        kappas.append(scaled_condition_number(system.matrix, system.constraint_weights))
    assert -2.3 <= loglog_slope(hs, kappas) <= -1.7


def test_pencil_max():
    A = np.diag([2.0, 3.0, 8.0])
    B = np.diag([1.0, 1.0, 2.0])
    assert pencil_max(A, B) == pytest.approx(4.0)
    assert pencil_max(A, B, np.eye(3)[2]) == pytest.approx(3.0)
