"""Proximable functions and the composite subproblem ``S_{f,L}(x; g)``.

``S_{f,L}(x; g) = argmin_w f(w) + g/2 |L w + x/g|^2`` is the only inner solve
needed by the ADMM updates.  Three structures are supported exactly:

* ``L = s I``: reduces to ``prox_f`` at a shifted point;
* ``f`` quadratic: one SPD solve, factored once per ``(f, L, g)``;
* ``f = 0``: normal equations of a least-squares problem.

Anything else raises :class:`UnsupportedSubproblemError` rather than running an
inexact inner solver.
"""

from __future__ import annotations

import abc
import functools

import numpy as np
import scipy.sparse as sp

from .errors import (
    InvalidDimensionError,
    NonStronglyConvexError,
    ParameterError,
    UnsupportedSubproblemError,
)
from .linalg import LinearMap, cached_spd_solver

__all__ = [
    "ProxFunction",
    "QuadraticFunction",
    "ZeroFunction",
    "McpPenalty",
    "mcp_value",
    "prox_mcp",
    "prox_mcp_scalar",
    "subproblem_solve",
    "subproblem_residual",
    "resolvent_from_subproblem",
]

# curvature must exceed the MCP concavity by this relative margin
_STRICT = 1.0 + 1e-12


class ProxFunction(abc.ABC):
    """Proper closed ``rho``-convex function on ``R^dim`` with a computable prox."""

    dim: int
    rho: float

    @abc.abstractmethod
    def __call__(self, w): ...

    @abc.abstractmethod
    def prox(self, t, a):
        """``argmin_w f(w) + |w - a|^2 / (2t)``."""

    @abc.abstractmethod
    def stationarity_residual(self, w, g):
        """Distance from 0 to ``(regular subdifferential of f at w) + g``."""

    def eval(self, w):
        return self(w)

    def _check_t(self, t):
        if t <= 0:
            raise ParameterError(f"prox parameter must be positive, got {t}")


class QuadraticFunction(ProxFunction):
    """``f(w) = rho/2 |w - center|^2``."""

    def __init__(self, rho, center=None, dim=None):
        if center is None:
            if dim is None:
                raise InvalidDimensionError("give a center or a dimension")
            center = np.zeros(dim)
        self.center = np.asarray(center, dtype=float).reshape(-1)
        self.dim = self.center.shape[0]
        self.rho = float(rho)

    def __call__(self, w):
        r = np.asarray(w, dtype=float) - self.center
        return 0.5 * self.rho * float(r @ r)

    def prox(self, t, a):
        self._check_t(t)
        if 1.0 + t * self.rho <= 0:
            raise NonStronglyConvexError(f"prox undefined: 1 + t*rho = {1 + t * self.rho:.3g}")
        return (np.asarray(a, dtype=float) + t * self.rho * self.center) / (1.0 + t * self.rho)

    def stationarity_residual(self, w, g):
        return float(np.linalg.norm(self.rho * (np.asarray(w) - self.center) + g))

    def __repr__(self):
        return f"QuadraticFunction(rho={self.rho:g}, dim={self.dim})"


class ZeroFunction(ProxFunction):
    """``f = 0``."""

    def __init__(self, dim):
        self.dim = int(dim)
        self.rho = 0.0

    def __call__(self, w):
        return 0.0

    def prox(self, t, a):
        self._check_t(t)
        return np.array(a, dtype=float)

    def stationarity_residual(self, w, g):
        return float(np.linalg.norm(g))

    def __repr__(self):
        return f"ZeroFunction(dim={self.dim})"


def mcp_value(t, tau):
    """Minimax concave penalty ``|t| - t^2/(2 tau)`` for ``|t| <= tau``, else ``tau/2``."""
    if tau <= 0:
        raise ParameterError(f"tau must be positive, got {tau}")
    a = np.abs(np.asarray(t, dtype=float))
    val = np.where(a <= tau, a - a * a / (2.0 * tau), 0.5 * tau)
    return float(val) if val.ndim == 0 else val


def prox_mcp(a, omega, c, tau):
    """Vectorized minimizer of ``omega * p_tau(t) + c/2 (t - a)^2``.

    Requires ``c > omega/tau`` so that the objective is strongly convex.
    The minimizer is 0 for ``|a| <= omega/c``, the identity for ``|a| >= tau``,
    and a linear rescaling in between.
    """
    if tau <= 0 or omega < 0 or c <= 0:
        raise ParameterError("need tau > 0, omega >= 0, c > 0")
    if c < _STRICT * omega / tau:
        raise NonStronglyConvexError(
            f"curvature {c:.6g} does not exceed omega/tau = {omega / tau:.6g}"
        )
    a = np.asarray(a, dtype=float)
    mag = np.abs(a)
    mid = (c * mag - omega) / (c - omega / tau)
    out = np.where(mag <= omega / c, 0.0, np.where(mag < tau, mid, mag))
    return np.sign(a) * out


def prox_mcp_scalar(a, omega, c, tau):
    """Scalar form of :func:`prox_mcp`."""
    return float(prox_mcp(float(a), omega, c, tau))


class McpPenalty(ProxFunction):
    """``f(w) = omega * sum_i p_tau(w_i)``; weakly convex with ``rho = -omega/tau``."""

    def __init__(self, tau, omega, dim):
        if tau <= 0 or omega <= 0:
            raise ParameterError("MCP needs tau > 0 and omega > 0")
        self.tau = float(tau)
        self.omega = float(omega)
        self.dim = int(dim)
        self.rho = -self.omega / self.tau

    def __call__(self, w):
        return self.omega * float(np.sum(mcp_value(np.asarray(w, dtype=float), self.tau)))

    def prox(self, t, a):
        self._check_t(t)
        return prox_mcp(a, self.omega, 1.0 / t, self.tau)

    def stationarity_residual(self, w, g):
        w = np.asarray(w, dtype=float)
        g = np.asarray(g, dtype=float)
        mag = np.abs(w)
        at_zero = np.maximum(np.abs(g) - self.omega, 0.0)
        inner = np.abs(self.omega * np.sign(w) * (1.0 - mag / self.tau) + g)
        r = np.where(w == 0.0, at_zero, np.where(mag < self.tau, inner, np.abs(g)))
        return float(np.linalg.norm(r))

    def __repr__(self):
        return f"McpPenalty(tau={self.tau:g}, omega={self.omega:g}, dim={self.dim})"


@functools.lru_cache(maxsize=128)
def _normal_solver(f, L, gamma):
    # factor (rho I + gamma L^T L); lru_cache is safe under concurrent readers
    G = L.gram()
    n = L.in_dim
    if sp.issparse(G):
        M = (f.rho * sp.identity(n, format="csr") + gamma * G).tocsr()
    else:
        M = f.rho * np.eye(n) + gamma * G
    return cached_spd_solver(M)


def subproblem_solve(f, L, x, gamma):
    """Evaluate ``S_{f,L}(x; gamma) = argmin_w f(w) + gamma/2 |L w + x/gamma|^2``.

    Parameters
    ----------
    f : ProxFunction
    L : LinearMap
    x : ndarray
        Point in the output space of ``L``.
    gamma : float
        Positive weight.

    Raises
    ------
    UnsupportedSubproblemError
        If ``(f, L)`` is none of the supported structures.
    NonStronglyConvexError
        If the subproblem is not strongly convex.
    FactorizationError
        If a normal-equation matrix is not positive definite.
    """
    if gamma <= 0:
        raise ParameterError(f"gamma must be positive, got {gamma}")
    if f.dim != L.in_dim:
        raise InvalidDimensionError(f"f has dimension {f.dim}, L has input dimension {L.in_dim}")
    x = np.asarray(x, dtype=float)
    if x.shape != (L.out_dim,):
        raise InvalidDimensionError(f"x has shape {x.shape}, expected ({L.out_dim},)")
    s = L.identity_scale
    if s is not None:
        if s == 0:
            raise UnsupportedSubproblemError("L = 0 gives a subproblem without coupling")
        t = 1.0 / (gamma * s * s)
        return f.prox(t, -x / (gamma * s))
    if isinstance(f, (QuadraticFunction, ZeroFunction)):
        rhs = -L.adjoint_apply(x)
        if isinstance(f, QuadraticFunction):
            rhs = rhs + f.rho * f.center
        return _normal_solver(f, L, float(gamma)).solve(rhs)
    raise UnsupportedSubproblemError(
        f"no exact solver for {type(f).__name__} composed with a general linear map"
    )


def subproblem_residual(f, L, x, gamma, w):
    """Stationarity residual of ``w`` for the subproblem defining ``S_{f,L}(x; gamma)``."""
    g = gamma * L.adjoint_apply(L.apply(w) + np.asarray(x) / gamma)
    return f.stationarity_residual(w, g)


def resolvent_from_subproblem(f, L, x, gamma, b_shift=None):
    """Resolvent of ``A = (-L) o (df)^{-1} o (-L^T)`` (shifted by ``b``) via ``S_{f,L}``.

    Returns ``x' + gamma L S_{f,L}(x'; gamma)`` with ``x' = x - gamma b``.
    """
    x = np.asarray(x, dtype=float)
    if b_shift is not None:
        x = x - gamma * np.asarray(b_shift, dtype=float)
    return x + gamma * L.apply(subproblem_solve(f, L, x, gamma))


def as_linear_map(L):
    """Coerce an array or ``LinearMap`` to ``LinearMap``."""
    return L if isinstance(L, LinearMap) else LinearMap(L)
