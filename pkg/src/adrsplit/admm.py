"""Multiblock ADMM for ``min sum_i f_i(u_i)  s.t.  sum_i L_i u_i = b``.

Three solvers share one state type:

* :func:`admm_general_run` carries auxiliary vectors ``s_i`` and runs the
  switched-order product-space aDR for any relaxation ``kappa``;
* :func:`admm_special_run` is the ``kappa = (lam-1)/lam`` specialization, which
  needs only ``(u, y)`` and updates blocks ``1..m-1`` in parallel;
* :func:`gs_admm_run` is the Gauss-Seidel multiblock ADMM baseline.

The multiplier convention is ``0 in df_i(u_i) + L_i^T y`` at a KKT point and
``y <- y + step * (sum_i L_i u_i - b)``.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import (
    AdrSplitError,
    AssumptionError,
    DivergenceError,
    InvalidDimensionError,
    NotReadyError,
    ParameterError,
    ResolventFailure,
)
from .functions import ProxFunction, as_linear_map, resolvent_from_subproblem, subproblem_solve
from .linalg import LinearMap, op_norm
from .operators import ResolventOp
from .splitting import DIVERGENCE_BOUND, ADRParams, make_params

__all__ = [
    "BlockProblem",
    "AdmmState",
    "comonotone_moduli",
    "block_operators",
    "admm_general_run",
    "admm_special_run",
    "gs_admm_run",
    "equivalent_general_start",
    "stopping_residual",
    "kkt_residual",
    "extract_kkt_from_fixed_point",
    "special_params",
]

ALGORITHMS = ("alg2", "alg3", "gs_admm")


class BlockProblem:
    """Linearly constrained separable problem.

    Parameters
    ----------
    f : sequence of ProxFunction
        Objective blocks; ``f[-1]`` is the block handled by the averaging step.
    L : sequence of LinearMap or array
        Coupling maps into a common space ``R^n``.
    b : array_like, optional
        Right-hand side, zero by default.
    rho : sequence of float, optional
        Convexity moduli; taken from ``f[i].rho`` when omitted.

    Raises
    ------
    InvalidDimensionError
        On inconsistent shapes.
    AssumptionError
        If some ``rho_i < 0`` for ``i < m``.
    """

    def __init__(self, f: Sequence[ProxFunction], L, b=None, rho=None):
        self.f = list(f)
        self.L = [as_linear_map(M) for M in L]
        self.m = len(self.f)
        if self.m < 2:
            raise InvalidDimensionError("need at least two blocks")
        if len(self.L) != self.m:
            raise InvalidDimensionError(f"{self.m} functions but {len(self.L)} maps")
        outs = {M.out_dim for M in self.L}
        if len(outs) != 1:
            raise InvalidDimensionError(f"maps have different output dimensions {sorted(outs)}")
        self.n = outs.pop()
        for i, (fi, Li) in enumerate(zip(self.f, self.L)):
            if fi.dim != Li.in_dim:
                raise InvalidDimensionError(
                    f"block {i + 1}: f has dimension {fi.dim}, L has input dimension {Li.in_dim}")
        self.b = np.zeros(self.n) if b is None else np.asarray(b, dtype=float).reshape(-1)
        if self.b.shape != (self.n,):
            raise InvalidDimensionError(f"b has length {self.b.size}, expected {self.n}")
        self.rho = [float(fi.rho) for fi in self.f] if rho is None else [float(r) for r in rho]
        if len(self.rho) != self.m:
            raise InvalidDimensionError("one modulus per block is required")
        neg = [i + 1 for i, r in enumerate(self.rho[:-1]) if r < 0]
        if neg:
            raise AssumptionError(f"blocks {neg} must be convex (rho >= 0) for i < m")

    @property
    def dims(self):
        return [M.in_dim for M in self.L]

    def constraint(self, u):
        """``sum_i L_i u_i - b``."""
        r = -self.b.copy()
        for Li, ui in zip(self.L, u):
            r += Li.apply(ui)
        return r

    def zeros(self):
        return [np.zeros(d) for d in self.dims]

    def __repr__(self):
        return f"BlockProblem(m={self.m}, n={self.n}, dims={self.dims})"


@dataclass
class AdmmState:
    """Iterates and per-iteration history of a multiblock run.

    ``primal``, ``dual`` and ``mae`` hold one entry per completed iteration;
    ``dual`` stores ``max_i |s_i|`` with the algorithm's dual-residual formula.
    For ``alg2`` the auxiliary vectors are in ``s``; ``aux`` holds the
    per-block dual-residual vectors of the last iteration.
    """

    algorithm: str
    u: list
    y: np.ndarray
    s: Optional[list] = None
    iteration: int = 0
    converged: bool = False
    primal: list = field(default_factory=list)
    dual: list = field(default_factory=list)
    mae: list = field(default_factory=list)
    elapsed: list = field(default_factory=list)
    aux: Optional[list] = None
    trajectory: Optional[list] = None
    params: dict = field(default_factory=dict)

    @property
    def residual(self):
        """Stopping residual after the last iteration."""
        if self.iteration == 0:
            raise NotReadyError("no iteration has completed")
        return max(self.primal[-1], self.dual[-1])

    @property
    def residuals(self):
        return np.maximum(np.asarray(self.primal), np.asarray(self.dual))


def comonotone_moduli(prob: BlockProblem):
    """Comonotonicity moduli of the operators ``A_i`` induced by ``(f_i, L_i)``.

    ``sigma_i = rho_i / |L_i|^2`` for ``i < m``; for the last block
    ``sigma_m = rho_m |L_m^{-1}|^2`` when ``rho_m < 0`` and ``0`` otherwise
    (a strongly convex last block is used only as a convex one).

    Raises
    ------
    AssumptionError
        If ``rho_m < 0`` and ``L_m`` is not invertible.
    """
    sig = []
    for r, Li in zip(prob.rho[:-1], prob.L[:-1]):
        nrm = Li.norm
        if nrm == 0:
            raise AssumptionError("a zero coupling map has no finite modulus")
        sig.append(r / nrm**2)
    r, Lm = prob.rho[-1], prob.L[-1]
    if r >= 0:
        sig.append(0.0)
        return sig
    if Lm.in_dim != Lm.out_dim:
        raise AssumptionError("a weakly convex last block needs a square invertible L_m")
    if Lm.identity_scale is not None:
        if Lm.identity_scale == 0:
            raise AssumptionError("L_m = 0 is not invertible")
        inv_norm = 1.0 / abs(Lm.identity_scale)
    else:
        try:
            inv_norm = op_norm(Lm.inverse())
        except np.linalg.LinAlgError as exc:
            raise AssumptionError(f"L_m is not invertible: {exc}") from exc
    sig.append(r * inv_norm**2)
    return sig


def block_operators(prob: BlockProblem, sigma=None):
    """Resolvent operators of ``A_i = (-L_i) o (df_i)^{-1} o (-L_i^T)`` (``+ b`` for the last)."""
    sigma = comonotone_moduli(prob) if sigma is None else list(sigma)
    ops = []
    for i, (fi, Li) in enumerate(zip(prob.f, prob.L)):
        shift = prob.b if i == prob.m - 1 else None
        ops.append(ResolventOp(
            dim=prob.n,
            resolve=lambda g, x, fi=fi, Li=Li, shift=shift: resolvent_from_subproblem(fi, Li, x, g, shift),
            sigma=sigma[i],
            name=f"block{i + 1}",
        ))
    return ops


def _solve(prob, i, x, step, k):
    try:
        return subproblem_solve(prob.f[i], prob.L[i], x, step)
    except (AdrSplitError, ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
        raise ResolventFailure(f"block {i + 1} subproblem failed at iteration {k}: {exc}",
                               iteration=k) from exc


def _guard(y, k):
    if not np.all(np.isfinite(y)) or np.linalg.norm(y) > DIVERGENCE_BOUND:
        raise DivergenceError(f"multiplier norm exceeded {DIVERGENCE_BOUND:g} at iteration {k}",
                              iteration=k)


def _init_u(prob, u0):
    if u0 is None:
        return prob.zeros()
    u = [np.array(ui, dtype=float).reshape(-1) for ui in u0]
    if [ui.size for ui in u] != prob.dims:
        raise InvalidDimensionError(f"initial blocks have sizes {[ui.size for ui in u]}, expected {prob.dims}")
    return u


def _init_vec(v, n, what):
    if v is None:
        return np.zeros(n)
    v = np.array(v, dtype=float).reshape(-1)
    if v.shape != (n,):
        raise InvalidDimensionError(f"{what} has length {v.size}, expected {n}")
    return v


def _record(state, prob, dual_vecs, monitor, t0, record):
    state.iteration += 1
    state.aux = dual_vecs
    state.primal.append(float(np.linalg.norm(prob.constraint(state.u))))
    state.dual.append(max(float(np.linalg.norm(s)) for s in dual_vecs))
    if monitor is not None:
        state.mae.append(float(monitor(state.u)))
    state.elapsed.append(time.perf_counter() - t0)
    if record:
        state.trajectory.append(([ui.copy() for ui in state.u], state.y.copy()))


def _done(state, eps):
    if eps is not None and max(state.primal[-1], state.dual[-1]) <= eps:
        state.converged = True
        return True
    return False


def equivalent_general_start(prob: BlockProblem, delta, u0=None):
    """Auxiliary vectors that start :func:`admm_general_run` on the same path as
    :func:`admm_special_run` from blocks ``u0``.

    ``s_i = delta/(m-1) (sum_j L_j u_j - b) - delta L_i u_i`` for ``i < m``.
    """
    u = _init_u(prob, u0)
    r = prob.constraint(u)
    d1 = delta / (prob.m - 1)
    return [d1 * r - delta * prob.L[i].apply(u[i]) for i in range(prob.m - 1)]


def admm_general_run(prob: BlockProblem, p: ADRParams, y0=None, s0=None, max_iter=10_000,
                     eps: Optional[float] = 1e-6, monitor: Optional[Callable] = None,
                     record=False) -> AdmmState:
    """Multiblock ADMM with general relaxation ``kappa``.

    With ``x = y - s`` (blockwise) each iteration is one step of the
    switched-order product-space aDR on the operators of :func:`block_operators`:

    * ``u_i = S_i(y + (mu-1) s_i; gamma)``, ``z_i = y + (mu-1) s_i + gamma L_i u_i``;
    * ``v_i = (1 - kappa lam) y + kappa lam z_i - s_i``;
    * ``u_m = S_m(sum v / (m-1) - delta b/(m-1); delta/(m-1))``;
    * ``y+ = sum v/(m-1) - delta b/(m-1) + delta/(m-1) L_m u_m``, ``s_i+ = y+ - v_i``.

    The dual residual of block ``i`` is ``L_i^T (z_i - y+)``, which is exactly
    ``dist(0, df_i(u_i) + L_i^T y+)`` for the computed ``u_i``; the last block
    is stationary by construction.

    Parameters
    ----------
    prob : BlockProblem
    p : ADRParams
    y0 : array_like, optional
        Initial multiplier, zero by default.
    s0 : sequence of arrays, optional
        Initial auxiliary vectors (``m - 1`` of them), zero by default.
    max_iter : int
    eps : float or None
        Stopping tolerance on ``max(primal, dual)``; ``None`` runs ``max_iter`` steps.
    monitor : callable, optional
        ``monitor(u) -> float``, stored in ``state.mae``.
    record : bool
        Keep ``(u, y)`` after every iteration in ``state.trajectory``.
    """
    m, n = prob.m, prob.n
    y = _init_vec(y0, n, "y0")
    if s0 is None:
        s = [np.zeros(n) for _ in range(m - 1)]
    else:
        s = [_init_vec(si, n, "s0 block") for si in s0]
        if len(s) != m - 1:
            raise InvalidDimensionError(f"need {m - 1} auxiliary vectors, got {len(s)}")
    g, d, lam, mu, kap = p.gamma, p.delta, p.lam, p.mu, p.kappa
    d1 = d / (m - 1)
    state = AdmmState("alg2", prob.zeros(), y, s, trajectory=[] if record else None,
                      params=dict(gamma=g, delta=d, lam=lam, mu=mu, kappa=kap))
    t0 = time.perf_counter()
    w = kap * lam
    for k in range(max_iter):
        y, s = state.y, state.s
        u = [None] * m
        z, v = [], []
        for i in range(m - 1):
            xi = y + (mu - 1) * s[i]
            u[i] = _solve(prob, i, xi, g, k)
            zi = xi + g * prob.L[i].apply(u[i])
            z.append(zi)
            v.append((1 - w) * y + w * zi - s[i])
        avg = sum(v) / (m - 1) - d1 * prob.b
        u[m - 1] = _solve(prob, m - 1, avg, d1, k)
        y_new = avg + d1 * prob.L[m - 1].apply(u[m - 1])
        _guard(y_new, k)
        state.u, state.y = u, y_new
        state.s = [y_new - vi for vi in v]
        dual = [prob.L[i].adjoint_apply(z[i] - y_new) for i in range(m - 1)]
        _record(state, prob, dual, monitor, t0, record)
        if _done(state, eps):
            break
    return state


def _special_dual(prob, u_old, u_new, g, d):
    # optimality of the i-th update rewritten at the new multiplier
    m = prob.m
    acc = (d - g) * prob.b
    for Lj, uo, un in zip(prob.L, u_old, u_new):
        acc = acc + Lj.apply(g * uo - d * un)
    acc /= m - 1
    out = []
    for i in range(m - 1):
        Li = prob.L[i]
        out.append(g * Li.adjoint_apply(Li.apply(u_new[i] - u_old[i])) + Li.adjoint_apply(acc))
    return out


def admm_special_run(prob: BlockProblem, gamma, delta, u0=None, y0=None, max_iter=10_000,
                     eps: Optional[float] = 1e-6, monitor: Optional[Callable] = None,
                     record=False, order: Optional[Sequence[int]] = None) -> AdmmState:
    """Multiblock ADMM with ``kappa = (lam-1)/lam`` and ``lam = 1 + delta/gamma``.

    With ``g' = gamma/(m-1)`` and ``d' = delta/(m-1)``, blocks ``i < m`` solve

    ``min f_i(w) + g'/2 |L_i w + sum_{j!=i} L_j u_j - b + y/g'|^2 + g'(m-2)/2 |L_i (w - u_i)|^2``

    using only the previous iterate, so they are independent; the two
    quadratics combine into one subproblem with weight ``gamma``.  Then

    ``u_m = S_m(d' (sum_{j<m} L_j u_j+ - b) + y; d')``,
    ``y+ = y + d' (sum_j L_j u_j+ - b)``.

    Parameters
    ----------
    order : sequence of int, optional
        Order in which blocks ``0..m-2`` are visited; it does not affect the result.

    Notes
    -----
    The dual residual of block ``i`` is
    ``gamma L_i^T L_i (u_i+ - u_i) + L_i^T/(m-1) (sum_j L_j (gamma u_j - delta u_j+) + (delta - gamma) b)``.
    """
    if not (gamma > 0 and delta > 0):
        raise ParameterError("stepsizes must be positive")
    m, n = prob.m, prob.n
    u = _init_u(prob, u0)
    y = _init_vec(y0, n, "y0")
    order = list(range(m - 1)) if order is None else list(order)
    if sorted(order) != list(range(m - 1)):
        raise ParameterError(f"order must be a permutation of 0..{m - 2}")
    g1, d1 = gamma / (m - 1), delta / (m - 1)
    lam = 1.0 + delta / gamma
    state = AdmmState("alg3", u, y, trajectory=[] if record else None,
                      params=dict(gamma=gamma, delta=delta, lam=lam, mu=lam / (lam - 1),
                                  kappa=(lam - 1) / lam))
    t0 = time.perf_counter()
    for k in range(max_iter):
        u, y = state.u, state.y
        Lu = [Li.apply(ui) for Li, ui in zip(prob.L, u)]
        total = sum(Lu) - prob.b
        new = [None] * m
        for i in order:
            # g' (c - (m-2) L_i u_i) with c = sum_{j!=i} L_j u_j - b + y/g'
            xi = y + g1 * (total - (m - 1) * Lu[i])
            new[i] = _solve(prob, i, xi, gamma, k)
        head = sum(prob.L[i].apply(new[i]) for i in range(m - 1)) - prob.b
        new[m - 1] = _solve(prob, m - 1, d1 * head + y, d1, k)
        y_new = y + d1 * (head + prob.L[m - 1].apply(new[m - 1]))
        _guard(y_new, k)
        state.u, state.y = new, y_new
        _record(state, prob, _special_dual(prob, u, new, gamma, delta), monitor, t0, record)
        if _done(state, eps):
            break
    return state


def gs_admm_run(prob: BlockProblem, gamma_prime, u0=None, y0=None, max_iter=10_000,
                eps: Optional[float] = 1e-6, monitor: Optional[Callable] = None,
                record=False) -> AdmmState:
    """Gauss-Seidel multiblock ADMM with penalty ``gamma_prime``.

    Blocks are updated in order ``1..m``, each using the already-updated
    blocks before it, followed by ``y+ = y + gamma_prime (sum_j L_j u_j+ - b)``.

    The dual residual of block ``i`` is taken as
    ``gamma L_i^T sum_{j>i} L_j (u_j - u_j+)`` with ``gamma = (m-1) gamma_prime``.
    The exact distance uses ``gamma_prime`` in place of ``gamma``, so this is
    an upper bound by the factor ``m - 1``; it matches the stopping bar of
    :func:`admm_special_run` run with the same ``gamma``.
    """
    if not gamma_prime > 0:
        raise ParameterError("gamma_prime must be positive")
    m, n = prob.m, prob.n
    u = _init_u(prob, u0)
    y = _init_vec(y0, n, "y0")
    gamma = (m - 1) * gamma_prime
    state = AdmmState("gs_admm", u, y, trajectory=[] if record else None,
                      params=dict(gamma_prime=gamma_prime, gamma=gamma))
    t0 = time.perf_counter()
    for k in range(max_iter):
        u, y = state.u, state.y
        Lu = [Li.apply(ui) for Li, ui in zip(prob.L, u)]
        total = sum(Lu) - prob.b
        new = list(u)
        Lnew = list(Lu)
        for i in range(m):
            xi = y + gamma_prime * (total - Lnew[i])
            new[i] = _solve(prob, i, xi, gamma_prime, k)
            Li_new = prob.L[i].apply(new[i])
            total = total + Li_new - Lnew[i]
            Lnew[i] = Li_new
        y_new = y + gamma_prime * total
        _guard(y_new, k)
        state.u, state.y = new, y_new
        # tail[i] = sum_{j>i} L_j (u_j - u_j+)
        diffs = [a - c for a, c in zip(Lu, Lnew)]
        tail = np.zeros(n)
        dual = [None] * (m - 1)
        for i in range(m - 1, 0, -1):
            tail = tail + diffs[i]
            dual[i - 1] = gamma * prob.L[i - 1].adjoint_apply(tail)
        _record(state, prob, dual, monitor, t0, record)
        if _done(state, eps):
            break
    return state


def stopping_residual(prob: BlockProblem, state: AdmmState, algorithm=None):
    """``max(|s_1|, ..., |s_{m-1}|, |sum_i L_i u_i - b|)`` for the last iteration.

    The ``s_i`` are the dual-residual vectors of the algorithm that produced
    ``state`` (the ``algorithm`` tag, if given, must agree with it).

    Raises
    ------
    NotReadyError
        If no iteration has completed.
    """
    if state.iteration == 0 or state.aux is None:
        raise NotReadyError("stopping residual needs at least one completed iteration")
    if algorithm is not None and algorithm != state.algorithm:
        raise ParameterError(f"state was produced by {state.algorithm!r}, not {algorithm!r}")
    dual = max((float(np.linalg.norm(s)) for s in state.aux), default=0.0)
    return max(dual, float(np.linalg.norm(prob.constraint(state.u))))


def kkt_residual(prob: BlockProblem, u, y):
    """``max(max_i dist(0, df_i(u_i) + L_i^T y), |sum_i L_i u_i - b|)``."""
    y = np.asarray(y, dtype=float)
    worst = float(np.linalg.norm(prob.constraint(u)))
    for fi, Li, ui in zip(prob.f, prob.L, u):
        worst = max(worst, fi.stationarity_residual(ui, Li.adjoint_apply(y)))
    return worst


def extract_kkt_from_fixed_point(prob: BlockProblem, xbar, p: ADRParams):
    """KKT candidate from a fixed point of the switched product-space aDR map.

    ``u_m = S_m(mean(x) - delta b/(m-1); delta/(m-1))``,
    ``y = mean(x) - delta b/(m-1) + delta/(m-1) L_m u_m`` and
    ``u_i = S_i((1 - mu) x_i + mu y; gamma)``.

    Parameters
    ----------
    xbar : array of shape ``(m - 1, n)``
    p : ADRParams

    Returns
    -------
    u : list of arrays
    y : ndarray
    """
    m = prob.m
    xbar = np.asarray(xbar, dtype=float)
    if xbar.shape != (m - 1, prob.n):
        raise InvalidDimensionError(f"expected shape {(m - 1, prob.n)}, got {xbar.shape}")
    d1 = p.delta / (m - 1)
    avg = xbar.mean(axis=0) - d1 * prob.b
    u = [None] * m
    u[m - 1] = _solve(prob, m - 1, avg, d1, 0)
    y = avg + d1 * prob.L[m - 1].apply(u[m - 1])
    for i in range(m - 1):
        u[i] = _solve(prob, i, (1 - p.mu) * xbar[i] + p.mu * y, p.gamma, 0)
    return u, y


def special_params(gamma, delta) -> ADRParams:
    """Parameters implied by ``(gamma, delta)`` with ``kappa = (lam-1)/lam``."""
    lam = 1.0 + delta / gamma
    return make_params(gamma, lam, (lam - 1) / lam)
