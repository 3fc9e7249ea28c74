import numpy as np
import pytest

from adrsplit.admm import (
    AdmmState,
    BlockProblem,
    admm_general_run,
    admm_special_run,
    block_operators,
    comonotone_moduli,
    equivalent_general_start,
    extract_kkt_from_fixed_point,
    gs_admm_run,
    kkt_residual,
    special_params,
    stopping_residual,
)
from adrsplit.errors import (
    AssumptionError,
    InvalidDimensionError,
    NotReadyError,
    ParameterError,
    ResolventFailure,
)
from adrsplit.functions import McpPenalty, QuadraticFunction
from adrsplit.linalg import LinearMap, difference_matrix
from adrsplit.splitting import certify_multi, make_params, multi_adr_run_switched, rate_flag
from oracles import affine_fixed_point, quadratic_kkt, two_block_admm


def quad_instance(seed=0, m=3, n=4, b=True):
    rng = np.random.default_rng(seed)
    dims = [3, 2, n][:m - 1] + [n]
    Ls = [rng.standard_normal((n, k)) for k in dims]
    rhos = list(rng.uniform(0.5, 2.0, m))
    ds = [rng.standard_normal(k) for k in dims]
    bb = rng.standard_normal(n) if b else np.zeros(n)
    prob = BlockProblem([QuadraticFunction(r, d) for r, d in zip(rhos, ds)], Ls, bb)
    return prob, (rhos, ds, Ls, bb)


def max_dev(tr_a, tr_b):
    worst = 0.0
    for (ua, ya), (ub, yb) in zip(tr_a, tr_b):
        worst = max(worst, np.abs(ya - yb).max(), *(np.abs(p - q).max() for p, q in zip(ua, ub)))
    return worst


# moduli

def test_moduli_examples():
    f = [QuadraticFunction(1.0, dim=2), QuadraticFunction(0.0, dim=2)]
    prob = BlockProblem(f, [2 * np.eye(2), np.eye(2)])
    assert comonotone_moduli(prob) == pytest.approx([0.25, 0.0])
    prob = BlockProblem([QuadraticFunction(1.0, dim=2), McpPenalty(1.0, 1.0, 2)],
                        [2 * np.eye(2), LinearMap.identity(2, -1.0)])
    assert comonotone_moduli(prob) == pytest.approx([0.25, -1.0])


def test_moduli_general_invertible_last_block():
    # |L^{-1}| = 2 for diag(2, 0.5)
    prob = BlockProblem([QuadraticFunction(1.0, dim=2), QuadraticFunction(1.0, dim=2)],
                        [np.eye(2), np.diag([2.0, 0.5])], rho=[1.0, -1.0])
    assert comonotone_moduli(prob)[-1] == pytest.approx(-4.0)


def test_moduli_singular_last_block():
    prob = BlockProblem([QuadraticFunction(1.0, dim=2), QuadraticFunction(1.0, dim=2)],
                        [np.eye(2), np.diag([1.0, 0.0])], rho=[1.0, -1.0])
    with pytest.raises(AssumptionError):
        comonotone_moduli(prob)


def test_problem_validation():
    q = QuadraticFunction(1.0, dim=2)
    with pytest.raises(InvalidDimensionError):
        BlockProblem([q, q], [np.eye(2), np.ones((3, 2))])
    with pytest.raises(InvalidDimensionError):
        BlockProblem([q, QuadraticFunction(1.0, dim=3)], [np.eye(2), np.eye(2)])
    with pytest.raises(InvalidDimensionError):
        BlockProblem([q], [np.eye(2)])
    with pytest.raises(AssumptionError):
        BlockProblem([q, q], [np.eye(2), np.eye(2)], rho=[-0.1, 0.0])


# Algorithm 3 and Algorithm 2

def test_special_trivial_quadratic_converges_to_origin():
    q = QuadraticFunction(1.0, dim=3)
    prob = BlockProblem([q, q], [np.eye(3), np.eye(3)])
    st = admm_special_run(prob, 1.0, 1.0, u0=[np.ones(3), -np.ones(3)], y0=np.ones(3),
                          max_iter=500, eps=1e-12)
    assert st.converged
    assert kkt_residual(prob, st.u, st.y) <= 1e-8
    np.testing.assert_allclose(st.y, 0.0, atol=1e-10)


def test_general_trivial_quadratic_converges_to_origin():
    q = QuadraticFunction(0.5, dim=3)
    prob = BlockProblem([QuadraticFunction(1.0, dim=3), q], [np.eye(3), np.eye(3)])
    p = make_params(1.0, 2.0, 0.4)
    assert certify_multi(comonotone_moduli(prob), p).valid
    st = admm_general_run(prob, p, y0=np.ones(3), s0=[np.ones(3)], max_iter=2000, eps=1e-12)
    assert st.converged
    assert kkt_residual(prob, st.u, st.y) <= 1e-8


@pytest.mark.parametrize("gamma,delta", [(0.7, 1.3), (1.0, 1.0), (2.0, 0.5)])
def test_general_matches_special(gamma, delta):
    prob, _ = quad_instance(1)
    rng = np.random.default_rng(2)
    u0 = [rng.standard_normal(k) for k in prob.dims]
    y0 = rng.standard_normal(prob.n)
    a = admm_special_run(prob, gamma, delta, u0=u0, y0=y0, max_iter=200, eps=None, record=True)
    b = admm_general_run(prob, special_params(gamma, delta), y0=y0,
                         s0=equivalent_general_start(prob, delta, u0), max_iter=200, eps=None,
                         record=True)
    assert a.iteration == b.iteration == 200
    assert max_dev(a.trajectory, b.trajectory) <= 1e-10
    # both dual-residual formulas measure the same quantity
    np.testing.assert_allclose(a.dual, b.dual, rtol=1e-8, atol=1e-12)


@pytest.mark.parametrize("gamma,delta", [(0.9, 0.9), (0.6, 1.4)])
def test_two_blocks_is_textbook_admm(gamma, delta):
    prob, (rhos, ds, Ls, b) = quad_instance(3, m=2)
    rng = np.random.default_rng(4)
    u2 = rng.standard_normal(prob.dims[1])
    y0 = rng.standard_normal(prob.n)
    st = admm_special_run(prob, gamma, delta, u0=[np.zeros(prob.dims[0]), u2], y0=y0,
                          max_iter=200, eps=None, record=True)
    ref = two_block_admm(rhos[0], ds[0], Ls[0], rhos[1], ds[1], Ls[1], b, gamma, delta, 200,
                         u2=u2, y=y0)
    assert max_dev(st.trajectory, [([u1, v2], y) for u1, v2, y in ref]) <= 1e-12


def test_special_matches_kkt_oracle():
    prob, (rhos, ds, Ls, b) = quad_instance(5)
    us, y = quadratic_kkt(rhos, ds, Ls, b)
    assert kkt_residual(prob, us, y) <= 1e-10
    st = admm_special_run(prob, 1.0, 1.5, max_iter=5000, eps=1e-10)
    assert st.converged
    for a, c in zip(st.u, us):
        np.testing.assert_allclose(a, c, atol=1e-6)
    np.testing.assert_allclose(st.y, y, atol=1e-6)


def test_special_order_independent():
    prob, _ = quad_instance(6, m=4)
    a = admm_special_run(prob, 0.8, 1.1, max_iter=50, eps=None, record=True)
    b = admm_special_run(prob, 0.8, 1.1, max_iter=50, eps=None, record=True, order=[2, 0, 1])
    assert max_dev(a.trajectory, b.trajectory) == 0.0


def test_special_rejects_bad_order():
    prob, _ = quad_instance(6)
    with pytest.raises(ParameterError):
        admm_special_run(prob, 1.0, 1.0, order=[0, 0])


def test_zero_iterations_return_init():
    prob, _ = quad_instance(7)
    rng = np.random.default_rng(8)
    u0 = [rng.standard_normal(k) for k in prob.dims]
    y0 = rng.standard_normal(prob.n)
    s0 = [rng.standard_normal(prob.n) for _ in range(prob.m - 1)]
    st = admm_general_run(prob, make_params(1.0, 2.0, 0.5), y0=y0, s0=s0, max_iter=0)
    assert st.iteration == 0 and st.primal == []
    np.testing.assert_array_equal(st.y, y0)
    for a, c in zip(st.s, s0):
        np.testing.assert_array_equal(a, c)
    for run in (lambda: admm_special_run(prob, 1.0, 1.0, u0=u0, y0=y0, max_iter=0),
                lambda: gs_admm_run(prob, 0.5, u0=u0, y0=y0, max_iter=0)):
        st = run()
        np.testing.assert_array_equal(st.y, y0)
        for a, c in zip(st.u, u0):
            np.testing.assert_array_equal(a, c)


def test_history_lengths_match_iterations():
    prob, _ = quad_instance(9)
    st = admm_special_run(prob, 1.0, 1.2, max_iter=37, eps=None, monitor=lambda u: 0.0)
    assert st.iteration == len(st.primal) == len(st.dual) == len(st.mae) == len(st.elapsed) == 37


def test_subproblem_failure_reports_block():
    q = QuadraticFunction(1.0, dim=3)
    prob = BlockProblem([q, McpPenalty(1.0, 2.0, 3)], [np.eye(3), LinearMap.identity(3, -1.0)])
    # delta/(m-1) = 1 is below the MCP concavity omega/tau = 2
    with pytest.raises(ResolventFailure, match="block 2"):
        admm_special_run(prob, 1.0, 1.0, y0=np.ones(3))


def test_feasibility_decay_rate_on_certified_instance():
    prob, _ = quad_instance(10, b=False)
    p = special_params(1.0, 1.5)
    assert certify_multi(comonotone_moduli(prob), p).valid
    st = admm_special_run(prob, 1.0, 1.5, u0=[np.ones(k) for k in prob.dims], max_iter=400,
                          eps=None)
    assert st.primal[-1] <= 1e-6
    assert rate_flag(st.primal, floor=1e-15)


# GS-ADMM

def test_gs_trivial_converges_to_origin():
    q = QuadraticFunction(1.0, dim=2)
    prob = BlockProblem([q, q], [np.eye(2), np.eye(2)])
    st = gs_admm_run(prob, 1.0, u0=[np.ones(2), np.ones(2)], max_iter=500, eps=1e-12)
    assert kkt_residual(prob, st.u, st.y) <= 1e-8


def test_gs_matches_kkt_oracle():
    prob, (rhos, ds, Ls, b) = quad_instance(11)
    us, y = quadratic_kkt(rhos, ds, Ls, b)
    st = gs_admm_run(prob, 0.5, max_iter=10000, eps=1e-10)
    for a, c in zip(st.u, us):
        np.testing.assert_allclose(a, c, atol=1e-6)


def test_gs_two_blocks_is_textbook_admm():
    prob, (rhos, ds, Ls, b) = quad_instance(12, m=2)
    st = gs_admm_run(prob, 0.8, max_iter=100, eps=None, record=True)
    ref = two_block_admm(rhos[0], ds[0], Ls[0], rhos[1], ds[1], Ls[1], b, 0.8, 0.8, 100)
    assert max_dev(st.trajectory, [([u1, v2], y) for u1, v2, y in ref]) <= 1e-12


# residuals

def test_stopping_residual_not_ready():
    prob, _ = quad_instance(13)
    st = admm_special_run(prob, 1.0, 1.0, max_iter=0)
    with pytest.raises(NotReadyError):
        stopping_residual(prob, st)
    with pytest.raises(NotReadyError):
        st.residual


def test_stopping_residual_feasibility_norm():
    q = QuadraticFunction(1.0, dim=2)
    prob = BlockProblem([q, q], [np.eye(2), np.eye(2)])
    st = AdmmState("alg3", [np.array([1.0, 1.0]), np.array([2.0, 3.0])], np.zeros(2),
                   iteration=1, aux=[np.zeros(2)])
    assert stopping_residual(prob, st) == pytest.approx(5.0)
    with pytest.raises(ParameterError):
        stopping_residual(prob, st, "gs_admm")


@pytest.mark.parametrize("algorithm", ["alg3", "gs_admm"])
def test_stopping_residual_zero_at_kkt_point(algorithm):
    prob, (rhos, ds, Ls, b) = quad_instance(14)
    us, y = quadratic_kkt(rhos, ds, Ls, b)
    if algorithm == "alg3":
        st = admm_special_run(prob, 1.3, 1.3, u0=us, y0=y, max_iter=1, eps=None)
    else:
        st = gs_admm_run(prob, 0.7, u0=us, y0=y, max_iter=1, eps=None)
    assert stopping_residual(prob, st, algorithm) <= 1e-10
    assert st.residual == stopping_residual(prob, st)


def test_stopping_residual_bounds_kkt_residual():
    prob, _ = quad_instance(15)
    C = 10 * (1 + max(Li.norm for Li in prob.L) ** 2)
    for eps in [1e-3, 1e-5, 1e-7]:
        st = admm_special_run(prob, 1.0, 1.4, max_iter=20000, eps=eps)
        assert st.converged
        assert kkt_residual(prob, st.u, st.y) <= C * eps
        # the last block is stationary by construction, so the bound is an identity
        assert kkt_residual(prob, st.u, st.y) == pytest.approx(st.residual, rel=1e-6, abs=1e-13)


def test_kkt_residual_examples():
    q = QuadraticFunction(1.0, dim=2)
    prob = BlockProblem([q, q], [np.eye(2), np.eye(2)])
    assert kkt_residual(prob, [np.zeros(2), np.zeros(2)], np.zeros(2)) == 0.0
    # saturated MCP coordinates have zero slope: only feasibility is left
    d = np.array([5.0, -7.0])
    prob = BlockProblem([QuadraticFunction(1.0, d), McpPenalty(1.0, 3.0, 2)],
                        [np.eye(2), LinearMap.identity(2, -1.0)])
    assert kkt_residual(prob, [d, np.array([5.0, -6.0])], np.zeros(2)) == pytest.approx(1.0)


# fixed point to KKT

def switched_map(prob, p):
    ops = block_operators(prob)
    return lambda X: multi_adr_run_switched(ops, p, X, max_iter=1, eps=None, force=True).x


@pytest.mark.parametrize("m,lam", [(2, 2.0), (3, 1.7), (3, 2.5)])
def test_extract_kkt_from_exact_fixed_point(m, lam):
    prob, _ = quad_instance(16 + m, m=m)
    p = make_params(0.9, lam, 0.5)
    xbar, _ = affine_fixed_point(switched_map(prob, p), (m - 1, prob.n))
    np.testing.assert_allclose(switched_map(prob, p)(xbar), xbar, atol=1e-10)
    u, y = extract_kkt_from_fixed_point(prob, xbar, p)
    assert kkt_residual(prob, u, y) <= 1e-8
    for i in range(m - 1):
        np.testing.assert_allclose(y, xbar[i] - p.delta * prob.L[i].apply(u[i]), atol=1e-8)


def test_extract_kkt_trivial():
    q = QuadraticFunction(1.0, dim=2)
    prob = BlockProblem([q, q, q], [np.eye(2)] * 3)
    u, y = extract_kkt_from_fixed_point(prob, np.zeros((2, 2)), make_params(1.0, 2.0, 0.5))
    np.testing.assert_array_equal(y, 0.0)
    for ui in u:
        np.testing.assert_array_equal(ui, 0.0)


def test_extract_kkt_matches_general_run_limit():
    # x = y - s along Algorithm 2 converges to the fixed point used by the extraction
    prob, _ = quad_instance(20)
    p = special_params(1.0, 1.3)
    st = admm_general_run(prob, p, max_iter=5000, eps=1e-12)
    xbar = np.stack([st.y - si for si in st.s])
    u, y = extract_kkt_from_fixed_point(prob, xbar, p)
    np.testing.assert_allclose(y, st.y, atol=1e-9)
    assert kkt_residual(prob, u, y) <= 1e-9


def test_extract_kkt_shape_check():
    prob, _ = quad_instance(21)
    with pytest.raises(InvalidDimensionError):
        extract_kkt_from_fixed_point(prob, np.zeros((3, prob.n)), make_params(1.0, 2.0, 0.5))


def test_denoise_style_problem_alg2_alg3_agree():
    n = 40
    rng = np.random.default_rng(22)
    D = difference_matrix(n)
    blocks = [D.columns(slice(0, 20)), D.columns(slice(20, 40))]
    phi_hat = np.repeat([0.0, 2.0], 20) + 0.1 * rng.standard_normal(n)
    tau = 40.0
    f = [QuadraticFunction(1.0, phi_hat[:20]), QuadraticFunction(1.0, phi_hat[20:]),
         McpPenalty(tau, 1.0, n - 1)]
    prob = BlockProblem(f, blocks + [LinearMap.identity(n - 1, -1.0)], rho=[0.5, 0.5, -1 / tau])
    g, d = 30.0, 30.3
    a = admm_special_run(prob, g, d, max_iter=300, eps=None, record=True)
    b = admm_general_run(prob, special_params(g, d), s0=equivalent_general_start(prob, d),
                         max_iter=300, eps=None, record=True)
    assert max_dev(a.trajectory, b.trajectory) <= 1e-10
