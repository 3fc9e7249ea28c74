import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from adrsplit.errors import FactorizationError, InvalidDimensionError
from adrsplit.linalg import (
    LinearMap,
    cached_spd_solver,
    difference_matrix,
    op_norm,
    power_iteration,
)
from oracles import dense_difference, dense_norm


def test_difference_matrix_small():
    np.testing.assert_array_equal(difference_matrix(3).to_dense(), [[1, -1, 0], [0, 1, -1]])
    np.testing.assert_array_equal(difference_matrix(2).to_dense(), [[1, -1]])


def test_difference_matrix_kills_constants():
    for n in range(2, 51):
        D = difference_matrix(n)
        assert D.shape == (n - 1, n)
        np.testing.assert_array_equal(D.apply(np.full(n, 3.7)), np.zeros(n - 1))
    np.testing.assert_array_equal(difference_matrix(4).apply(np.full(4, 2.0)), [0, 0, 0])


def test_difference_matrix_matches_dense_oracle():
    np.testing.assert_array_equal(difference_matrix(17).to_dense(), dense_difference(17))


@pytest.mark.parametrize("n", [1, 0, -3])
def test_difference_matrix_rejects_small(n):
    with pytest.raises(InvalidDimensionError):
        difference_matrix(n)


def test_op_norm_trivial_cases():
    assert op_norm(LinearMap.identity(7)) == 1.0
    assert op_norm(LinearMap(np.eye(4))) == pytest.approx(1.0, rel=1e-12)
    assert op_norm(LinearMap(np.diag([3.0, 1.0]))) == pytest.approx(3.0, rel=1e-10)


@pytest.mark.parametrize("n", [3, 5, 20, 100, 500])
def test_op_norm_difference_matches_svd(n):
    D = difference_matrix(n)
    ref = dense_norm(dense_difference(n))
    assert abs(op_norm(D) - ref) <= 1e-10 * ref
    # closed form for the path-graph incidence matrix
    assert op_norm(D) == pytest.approx(2 * np.cos(np.pi / (2 * n)), rel=1e-12)


def test_op_norm_difference_monotone_below_two():
    vals = [op_norm(difference_matrix(n)) for n in range(2, 60)]
    assert all(v < 2 for v in vals)
    assert all(b >= a for a, b in zip(vals, vals[1:]))


def test_op_norm_column_block_of_difference():
    D = difference_matrix(400)
    B = D.columns(slice(0, 200))
    assert op_norm(B) == pytest.approx(dense_norm(B.to_dense()), rel=1e-10)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 12), st.integers(1, 12), st.integers(0, 2**31 - 1))
def test_op_norm_random_dense(m, n, seed):
    A = np.random.default_rng(seed).standard_normal((m, n))
    L = LinearMap(A)
    est = op_norm(L)
    assert est == pytest.approx(dense_norm(A), rel=1e-8)
    x = np.random.default_rng(seed + 1).standard_normal(n)
    assert est >= np.linalg.norm(A @ x) / np.linalg.norm(x) - 1e-8


def test_power_iteration_reports_convergence():
    est, ok = power_iteration(LinearMap(np.diag([5.0, 1.0, 0.5])))
    assert ok and est == pytest.approx(5.0, rel=1e-9)
    _, ok = power_iteration(difference_matrix(300), tol=1e-14, max_iter=10)
    assert not ok


@pytest.mark.parametrize(
    "L",
    [
        LinearMap(np.random.default_rng(0).standard_normal((6, 4))),
        difference_matrix(30),
        LinearMap.identity(5, -2.5),
        difference_matrix(30).columns(slice(10, 20)),
    ],
)
def test_adjoint_consistency(L):
    rng = np.random.default_rng(1)
    for _ in range(100):
        x = rng.standard_normal(L.in_dim)
        y = rng.standard_normal(L.out_dim)
        lhs = L.apply(x) @ y
        rhs = x @ L.adjoint_apply(y)
        assert abs(lhs - rhs) <= 1e-10 * (1 + np.linalg.norm(x) * np.linalg.norm(y))


def test_dimension_mismatch():
    with pytest.raises(InvalidDimensionError):
        LinearMap(np.ones((2, 3))).apply(np.ones(2))


def test_inverse():
    A = np.array([[2.0, 1.0], [0.0, 1.0]])
    np.testing.assert_allclose(LinearMap(A).inverse().to_dense() @ A, np.eye(2), atol=1e-14)
    assert LinearMap.identity(3, -4.0).inverse().identity_scale == -0.25
    with pytest.raises(np.linalg.LinAlgError):
        LinearMap(np.ones((2, 2))).inverse()


def test_spd_solver_trivial():
    np.testing.assert_allclose(cached_spd_solver(np.eye(3)).solve([1.0, -2.0, 5.0]), [1, -2, 5])
    np.testing.assert_allclose(cached_spd_solver(2 * np.eye(2)).solve([4.0, 6.0]), [2.0, 3.0])


def test_spd_solver_random_residual():
    rng = np.random.default_rng(3)
    A = rng.standard_normal((10, 10))
    M = A.T @ A + np.eye(10)
    b = rng.standard_normal(10)
    x = cached_spd_solver(M).solve(b)
    assert np.linalg.norm(M @ x - b) <= 1e-10 * np.linalg.norm(b)


@pytest.mark.parametrize("n", [40, 1500])
def test_spd_solver_banded_matches_dense(n):
    D = difference_matrix(n + 1).columns(slice(0, n))
    M = (0.5 * sp.identity(n) + 3.0 * D.gram()).tocsr()
    solver = cached_spd_solver(M)
    assert solver.banded
    b = np.random.default_rng(n).standard_normal(n)
    x = solver.solve(b)
    ref = np.linalg.solve(M.toarray(), b)
    assert np.linalg.norm(x - ref) <= 1e-10 * np.linalg.norm(ref)
    assert np.linalg.norm(M @ x - b) <= 1e-10 * np.linalg.norm(b)


def test_spd_solver_rejects_non_spd():
    with pytest.raises(FactorizationError):
        cached_spd_solver(np.diag([1.0, -1.0]))
    with pytest.raises(FactorizationError):
        cached_spd_solver(np.array([[1.0, 2.0], [0.0, 1.0]]))
    # the singular Gram of the full difference operator (constants in the kernel)
    with pytest.raises(FactorizationError):
        cached_spd_solver(difference_matrix(50).gram())
