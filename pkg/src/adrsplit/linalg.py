"""Finite-dimensional linear maps, operator-norm estimation and SPD solves.

Vectors are plain 1-D ``numpy`` arrays.  A :class:`LinearMap` wraps either a
dense array, a ``scipy.sparse`` matrix (used for the banded difference
operator) or a scaled identity, and exposes application, adjoint application
and a lazily computed 2-norm.
"""

from __future__ import annotations

import functools
import warnings

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import FactorizationError, InvalidDimensionError

__all__ = [
    "LinearMap",
    "difference_matrix",
    "op_norm",
    "power_iteration",
    "cached_spd_solver",
    "SPDSolver",
    "NormEstimateWarning",
]


class NormEstimateWarning(RuntimeWarning):
    """Issued when an operator-norm estimate did not reach its tolerance."""


class LinearMap:
    """Bounded linear operator ``R^in_dim -> R^out_dim``.

    Parameters
    ----------
    matrix : ndarray or scipy.sparse matrix, optional
        Matrix representation.  Omit it when building a scaled identity
        through :meth:`identity`.
    name : str, optional
        Label used in error messages and reports.
    """

    def __init__(self, matrix=None, *, identity_scale=None, dim=None, name=None):
        if matrix is None:
            if identity_scale is None or dim is None:
                raise InvalidDimensionError("need a matrix or (identity_scale, dim)")
            if dim < 1:
                raise InvalidDimensionError(f"dimension must be positive, got {dim}")
            self._matrix = None
            self.identity_scale = float(identity_scale)
            self._shape = (int(dim), int(dim))
        else:
            if not sp.issparse(matrix):
                matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
                if matrix.ndim != 2:
                    raise InvalidDimensionError("matrix must be two-dimensional")
            else:
                matrix = sp.csr_matrix(matrix, dtype=float)
            if min(matrix.shape) < 1:
                raise InvalidDimensionError(f"empty matrix of shape {matrix.shape}")
            self._matrix = matrix
            self.identity_scale = None
            self._shape = tuple(int(s) for s in matrix.shape)
        self.name = name

    @classmethod
    def identity(cls, dim, scale=1.0, name=None):
        return cls(identity_scale=scale, dim=dim, name=name)

    @property
    def shape(self):
        return self._shape

    @property
    def out_dim(self):
        return self._shape[0]

    @property
    def in_dim(self):
        return self._shape[1]

    @property
    def is_sparse(self):
        return self._matrix is not None and sp.issparse(self._matrix)

    @property
    def matrix(self):
        """Underlying matrix (dense, sparse, or ``None`` for a scaled identity)."""
        return self._matrix

    def _check(self, x, n):
        x = np.asarray(x, dtype=float)
        if x.shape[0] != n:
            raise InvalidDimensionError(f"expected leading dimension {n}, got {x.shape}")
        return x

    def apply(self, x):
        x = self._check(x, self.in_dim)
        if self._matrix is None:
            return self.identity_scale * x
        return self._matrix @ x

    def adjoint_apply(self, y):
        y = self._check(y, self.out_dim)
        if self._matrix is None:
            return self.identity_scale * y
        return self._adjoint @ y

    @functools.cached_property
    def _adjoint(self):
        # sparse transposes come back as csc; convert once for fast matvecs
        At = self._matrix.T
        return At.tocsr() if sp.issparse(At) else At

    __call__ = apply

    def __matmul__(self, x):
        return self.apply(x)

    @property
    def T(self):
        if self._matrix is None:
            return self
        return LinearMap(self._matrix.T, name=None if self.name is None else self.name + "^T")

    def to_dense(self):
        if self._matrix is None:
            return self.identity_scale * np.eye(self.in_dim)
        if sp.issparse(self._matrix):
            return self._matrix.toarray()
        return np.array(self._matrix)

    def gram(self):
        """Return ``L^T L`` (sparse when the map is sparse)."""
        if self._matrix is None:
            return sp.identity(self.in_dim, format="csr") * self.identity_scale**2
        if sp.issparse(self._matrix):
            return (self._matrix.T @ self._matrix).tocsr()
        return self._matrix.T @ self._matrix

    def columns(self, index, name=None):
        """Column block ``L[:, index]`` as a new map."""
        if self._matrix is None:
            m = sp.identity(self.in_dim, format="csc") * self.identity_scale
            return LinearMap(m[:, index], name=name)
        if sp.issparse(self._matrix):
            return LinearMap(self._matrix.tocsc()[:, index], name=name)
        return LinearMap(self._matrix[:, index], name=name)

    @functools.cached_property
    def norm(self):
        """Operator 2-norm, computed once on first access."""
        return op_norm(self)

    def inverse(self):
        """Inverse map; raises ``numpy.linalg.LinAlgError`` when singular."""
        if self.in_dim != self.out_dim:
            raise InvalidDimensionError(f"non-square map {self.shape} has no inverse")
        if self._matrix is None:
            if self.identity_scale == 0.0:
                raise np.linalg.LinAlgError("zero multiple of the identity is singular")
            return LinearMap.identity(self.in_dim, 1.0 / self.identity_scale)
        dense = self.to_dense()
        if np.linalg.cond(dense) > 1e14:
            raise np.linalg.LinAlgError("matrix is numerically singular")
        return LinearMap(np.linalg.inv(dense))

    def __repr__(self):
        kind = "identity" if self._matrix is None else ("sparse" if self.is_sparse else "dense")
        label = f" {self.name!r}" if self.name else ""
        return f"<LinearMap{label} {self.out_dim}x{self.in_dim} {kind}>"


def difference_matrix(n):
    """First-order difference operator ``(Dx)_i = x_i - x_{i+1}``, shape ``(n-1, n)``."""
    if int(n) != n or n < 2:
        raise InvalidDimensionError(f"difference matrix needs n >= 2, got {n}")
    n = int(n)
    D = sp.diags([np.ones(n - 1), -np.ones(n - 1)], [0, 1], shape=(n - 1, n), format="csr")
    return LinearMap(D, name=f"D_{n}")


def power_iteration(L, tol=1e-10, max_iter=5000, seed=0):
    """Largest singular value of ``L`` by power iteration on ``L^T L``.

    Returns
    -------
    estimate : float
    converged : bool
        Whether successive Rayleigh quotients agreed to relative ``tol``.
    """
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(L.in_dim)
    x /= np.linalg.norm(x)
    lam_old = 0.0
    for _ in range(max_iter):
        Lx = L.apply(x)
        lam = float(Lx @ Lx)
        if lam == 0.0:
            return 0.0, True
        if abs(lam - lam_old) <= tol * lam:
            return float(np.sqrt(lam)), True
        lam_old = lam
        x = L.adjoint_apply(Lx)
        x /= np.linalg.norm(x)
    return float(np.sqrt(lam_old)), False


def op_norm(L, tol=1e-10, max_iter=5000, seed=0):
    """Estimate the operator 2-norm (largest singular value) of ``L``.

    Maps with an input dimension of at most 2 use plain power iteration.
    Sparse maps with a banded Gram matrix get the top eigenvalue from a banded
    symmetric eigensolver; other maps use a Lanczos iteration on ``L^T L``.
    Both cope with the tightly clustered top spectrum of difference operators,
    where power iteration stalls.  A :class:`NormEstimateWarning` is issued if the
    requested tolerance is not met; the best estimate is still returned.
    """
    if L.identity_scale is not None:
        return abs(L.identity_scale)
    n = L.in_dim
    if n <= 2:
        est, ok = power_iteration(L, tol=tol, max_iter=max_iter, seed=seed)
        if not ok:
            warnings.warn(f"power iteration did not converge for {L!r}", NormEstimateWarning, stacklevel=2)
        return est
    G = L.gram()
    if sp.issparse(G):
        bw = _bandwidth(G)
        if bw <= n // 8:
            # banded Gram (difference operators): exact top eigenvalue from LAPACK
            ab = np.zeros((bw + 1, n))
            for k in range(bw + 1):
                ab[k, : n - k] = G.diagonal(-k)
            top = sla.eig_banded(ab, lower=True, eigvals_only=True,
                                 select="i", select_range=(n - 1, n - 1))
            return float(np.sqrt(max(top[0], 0.0)))
    v0 = np.random.default_rng(seed).standard_normal(n)
    try:
        vals = spla.eigsh(G, k=1, which="LA", v0=v0, tol=tol, maxiter=max_iter,
                          ncv=min(n, 64), return_eigenvectors=False)
        return float(np.sqrt(max(vals[0], 0.0)))
    except spla.ArpackNoConvergence as exc:
        est, ok = power_iteration(L, tol=tol, max_iter=max_iter, seed=seed)
        if len(exc.eigenvalues):
            est = max(est, float(np.sqrt(max(exc.eigenvalues.max(), 0.0))))
        warnings.warn(f"norm estimate for {L!r} did not converge", NormEstimateWarning, stacklevel=2)
        return est


def _bandwidth(M):
    if sp.issparse(M):
        coo = M.tocoo()
        if coo.nnz == 0:
            return 0
        return int(np.max(np.abs(coo.row - coo.col)))
    rows, cols = np.nonzero(M)
    if rows.size == 0:
        return 0
    return int(np.max(np.abs(rows - cols)))


class SPDSolver:
    """Cholesky factorization of a symmetric positive-definite matrix.

    Banded matrices (bandwidth small compared with the size) are factored in
    LAPACK banded storage; everything else uses a dense factorization.  The
    handle is read-only after construction.
    """

    def __init__(self, M, sym_tol=1e-12):
        if not sp.issparse(M):
            M = np.atleast_2d(np.asarray(M, dtype=float))
        n, n2 = M.shape
        if n != n2:
            raise FactorizationError(f"matrix must be square, got {M.shape}")
        asym = abs(M - M.T)
        asym = asym.max() if sp.issparse(M) else np.max(asym)
        scale = abs(M).max() if sp.issparse(M) else np.max(np.abs(M))
        if asym > sym_tol * max(scale, 1.0):
            raise FactorizationError("matrix is not symmetric")
        self.n = n
        self.bandwidth = _bandwidth(M)
        self.banded = n >= 32 and self.bandwidth <= n // 8
        try:
            if self.banded:
                bw = self.bandwidth
                get_diag = (lambda k: M.diagonal(-k)) if sp.issparse(M) else (lambda k: np.diagonal(M, -k))
                ab = np.zeros((bw + 1, n))
                for k in range(bw + 1):
                    ab[k, : n - k] = get_diag(k)
                self._factor = sla.cholesky_banded(ab, lower=True)
            else:
                dense = M.toarray() if sp.issparse(M) else M
                self._factor = sla.cho_factor(dense, lower=True)
        except np.linalg.LinAlgError as exc:
            raise FactorizationError(f"Cholesky factorization failed: {exc}") from exc

    def solve(self, b):
        b = np.asarray(b, dtype=float)
        if b.shape[0] != self.n:
            raise InvalidDimensionError(f"right-hand side has shape {b.shape}, expected ({self.n},)")
        if self.banded:
            return sla.cho_solve_banded((self._factor, True), b)
        return sla.cho_solve(self._factor, b)

    __call__ = solve


def cached_spd_solver(M):
    """Factor the SPD matrix ``M`` once and return a reusable solver handle."""
    return SPDSolver(M)
