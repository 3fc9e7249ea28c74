"""Set-valued operators represented through their resolvents.

Every algorithm in this package touches an operator only by evaluating
``J_{gA} = (I + gA)^{-1}``, so an operator is a resolvent evaluator together
with its comonotonicity modulus ``sigma`` (``<x-y, u-v> >= sigma |u-v|^2`` on
the graph).  Negative ``sigma`` is allowed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import InvalidDimensionError, ParameterError, SingularResolventError

__all__ = [
    "ResolventOp",
    "AffineOperator",
    "zero_operator",
    "identity_operator",
    "affine_operator",
    "affine_comonotone_modulus",
    "resolvent_affine",
    "yosida",
    "resolvent_of_inverse",
    "check_comonotone",
]


@dataclass(frozen=True)
class ResolventOp:
    """Operator ``A`` on ``R^dim`` given by ``resolve(gamma, x) = J_{gamma A}(x)``.

    Parameters
    ----------
    dim : int
    resolve : callable
        ``(gamma, x) -> ndarray``.  Must be a pure function.
    sigma : float or None
        Comonotonicity modulus.  ``None`` when unknown.
    rho : float or None
        Monotonicity modulus, when known.
    valid_gamma : callable, optional
        Predicate for the stepsizes at which ``resolve`` is single-valued with
        full domain.  Defaults to ``gamma + sigma > 0``, or ``1 + gamma*rho > 0``
        when only ``rho`` is given.
    """

    dim: int
    resolve: Callable[[float, np.ndarray], np.ndarray]
    sigma: Optional[float] = None
    rho: Optional[float] = None
    valid_gamma: Optional[Callable[[float], bool]] = field(default=None, compare=False)
    name: str = ""

    def is_valid_gamma(self, gamma):
        if gamma <= 0:
            return False
        if self.valid_gamma is not None:
            return bool(self.valid_gamma(gamma))
        if self.sigma is not None:
            return gamma + self.sigma > 0
        if self.rho is not None:
            return 1 + gamma * self.rho > 0
        return True

    def __call__(self, gamma, x):
        return self.resolve(gamma, x)


@dataclass(frozen=True)
class AffineOperator:
    """``A(x) = M x + c``; used as an exactly solvable test family."""

    M: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        M = np.atleast_2d(np.asarray(self.M, dtype=float))
        c = np.asarray(self.c, dtype=float).reshape(-1)
        if M.shape[0] != M.shape[1] or M.shape[0] != c.shape[0]:
            raise InvalidDimensionError(f"incompatible shapes M{M.shape}, c{c.shape}")
        object.__setattr__(self, "M", M)
        object.__setattr__(self, "c", c)

    @property
    def dim(self):
        return self.c.shape[0]

    def __call__(self, x):
        return self.M @ x + self.c


def resolvent_affine(M, c, gamma, x, check_tol=1e-10):
    """Solve ``(I + gamma M) y = x - gamma c``.

    The residual is checked relative to ``1 + |x - gamma c|``.
    """
    if gamma <= 0:
        raise ParameterError(f"gamma must be positive, got {gamma}")
    M = np.atleast_2d(np.asarray(M, dtype=float))
    x = np.asarray(x, dtype=float)
    rhs = x - gamma * np.asarray(c, dtype=float)
    K = np.eye(M.shape[0]) + gamma * M
    if np.linalg.cond(K) > 1e13:
        raise SingularResolventError(f"I + {gamma}*M is singular")
    y = np.linalg.solve(K, rhs)
    res = np.linalg.norm(K @ y - rhs)
    if res > check_tol * (1.0 + np.linalg.norm(rhs)):
        raise SingularResolventError(f"resolvent residual {res:.3e} exceeds tolerance")
    return y


def affine_comonotone_modulus(M):
    """Largest ``sigma`` for which ``x -> M x`` is sigma-comonotone.

    Equals ``lambda_min(sym(M^{-1}))`` for invertible ``M``.  For singular
    symmetric PSD ``M`` it is ``1/lambda_max``; a singular nonsymmetric map is
    handled through the pseudo-inverse on its range, which is exact when the
    kernel and range are orthogonal.
    """
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if np.allclose(M, M.T, atol=1e-14 * max(1.0, np.abs(M).max())):
        w = np.linalg.eigvalsh(0.5 * (M + M.T))
        nz = w[np.abs(w) > 1e-12 * max(1.0, np.abs(w).max())]
        if nz.size == 0:
            return np.inf
        return float(np.min(1.0 / nz))
    P = np.linalg.pinv(M)
    sigma = float(np.linalg.eigvalsh(0.5 * (P + P.T)).min())
    # skew parts give an exactly zero modulus that rounding would make slightly negative
    return 0.0 if abs(sigma) <= 1e-12 * max(1.0, np.abs(P).max()) else sigma


def affine_operator(M, c=None, sigma=None, name="affine"):
    """Wrap ``A(x) = M x + c`` as a :class:`ResolventOp`.

    ``sigma`` defaults to :func:`affine_comonotone_modulus`.  Stepsizes are
    valid whenever ``I + gamma M`` is invertible and, if ``sigma`` is finite,
    ``gamma + sigma > 0``.
    """
    M = np.atleast_2d(np.asarray(M, dtype=float))
    c = np.zeros(M.shape[0]) if c is None else np.asarray(c, dtype=float)
    aff = AffineOperator(M, c)
    if sigma is None:
        sigma = affine_comonotone_modulus(M)
    return ResolventOp(
        dim=aff.dim,
        resolve=lambda g, x: resolvent_affine(aff.M, aff.c, g, x),
        sigma=float(sigma),
        name=name,
    )


def zero_operator(dim):
    """``A = 0``; its resolvent is the identity for every stepsize."""
    return ResolventOp(dim=dim, resolve=lambda g, x: np.array(x, dtype=float),
                       sigma=np.inf, rho=0.0, valid_gamma=lambda g: g > 0, name="zero")


def identity_operator(dim, scale=1.0):
    """``A = scale * Id``; ``J_{gA}(x) = x / (1 + g*scale)``."""
    if scale == 0:
        return zero_operator(dim)
    return ResolventOp(dim=dim, resolve=lambda g, x: np.asarray(x, dtype=float) / (1.0 + g * scale),
                       sigma=1.0 / scale, rho=float(scale), name="identity")


def yosida(A, gamma, x):
    """Yosida approximation ``(x - J_{gamma A}(x)) / gamma``."""
    x = np.asarray(x, dtype=float)
    return (x - A.resolve(gamma, x)) / gamma


def resolvent_of_inverse(A, delta, u):
    """Evaluate ``J_{delta A^{-1}}(u) = u - delta * J_{A/delta}(u/delta)``."""
    if delta <= 0:
        raise ParameterError(f"delta must be positive, got {delta}")
    u = np.asarray(u, dtype=float)
    return u - delta * A.resolve(1.0 / delta, u / delta)


def check_comonotone(pairs, sigma):
    """Smallest value of ``<x-y, u-v> - sigma |u-v|^2`` over pairs of graph points.

    Parameters
    ----------
    pairs : sequence of (x, u)
        Points ``u in A(x)`` on the graph.  At least two are required.
    sigma : float

    Returns
    -------
    float
        Nonnegative when the samples are consistent with sigma-comonotonicity.
    """
    pts = [(np.atleast_1d(np.asarray(x, dtype=float)), np.atleast_1d(np.asarray(u, dtype=float)))
           for x, u in pairs]
    if len(pts) < 2:
        raise InvalidDimensionError("need at least two graph pairs")
    worst = np.inf
    for i in range(len(pts)):
        xi, ui = pts[i]
        for j in range(i + 1, len(pts)):
            xj, uj = pts[j]
            du = ui - uj
            worst = min(worst, float((xi - xj) @ du - sigma * (du @ du)))
    return worst
