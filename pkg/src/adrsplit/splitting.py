"""Adaptive Douglas-Rachford (aDR) iterations and their parameter certificates.

The two-operator iteration for ``0 in A(x) + B(x)`` is::

    y = J_{gA}(x)
    z = J_{dB}((1 - lam) x + lam y)
    x <- x + kappa mu (z - y)

with ``d = g (lam - 1)`` and ``(lam - 1)(mu - 1) = 1``.  For ``m`` operators the
same iteration runs on the product space ``R^{(m-1) x n}`` with ``F`` acting
blockwise on the first ``m-1`` operators and ``G`` averaging the blocks before
resolving the last operator.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .errors import (
    AdrSplitError,
    CertificationError,
    DivergenceError,
    InfeasibleThetaError,
    OutOfTheoryError,
    ParameterError,
    ResolventFailure,
)
from .operators import ResolventOp, resolvent_of_inverse

log = logging.getLogger(__name__)

__all__ = [
    "ADRParams",
    "make_params",
    "RegimeCertificate",
    "certify_two_op",
    "certify_multi",
    "default_theta",
    "ADRTrace",
    "adr_run",
    "dual_params",
    "dual_operators",
    "primal_dual_replay",
    "build_product_ops",
    "MultiTrace",
    "multi_adr_run",
    "multi_adr_run_switched",
    "rate_flag",
]

EQ_TOL = 1e-12
DIVERGENCE_BOUND = 1e12


@dataclass(frozen=True)
class ADRParams:
    """Stepsizes ``gamma, delta``, relaxations ``lam, mu`` and averaging ``kappa``.

    Build instances with :func:`make_params`; the constructor validates the
    coupling ``(lam-1)(mu-1) = 1`` and ``delta = gamma (lam-1)``.
    """

    gamma: float
    delta: float
    lam: float
    mu: float
    kappa: float

    def __post_init__(self):
        if not (self.gamma > 0 and self.delta > 0):
            raise ParameterError("stepsizes must be positive")
        if not (self.lam > 1 and self.mu > 1):
            raise ParameterError("lam and mu must exceed 1")
        if not 0 < self.kappa <= 1:
            raise ParameterError(f"kappa must lie in (0, 1], got {self.kappa}")
        if abs((self.lam - 1) * (self.mu - 1) - 1) > EQ_TOL * max(1.0, self.lam * self.mu):
            raise ParameterError("(lam - 1)(mu - 1) must equal 1")
        if abs(self.delta - self.gamma * (self.lam - 1)) > EQ_TOL * max(1.0, self.delta):
            raise ParameterError("delta must equal gamma (lam - 1)")

    @property
    def symmetric(self):
        """``gamma = delta`` and ``lam = mu = 2``."""
        return (abs(self.gamma - self.delta) <= EQ_TOL * self.gamma
                and abs(self.lam - 2) <= EQ_TOL and abs(self.mu - 2) <= EQ_TOL)

    def as_tuple(self):
        return (self.gamma, self.delta, self.lam, self.mu, self.kappa)


def make_params(gamma, lam, kappa):
    """Complete ``(gamma, lam, kappa)`` to a valid :class:`ADRParams`."""
    if not gamma > 0:
        raise ParameterError(f"gamma must be positive, got {gamma}")
    if not lam > 1:
        raise ParameterError(f"lam must exceed 1, got {lam}")
    if not 0 < kappa <= 1:
        raise ParameterError(f"kappa must lie in (0, 1], got {kappa}")
    return ADRParams(gamma=float(gamma), delta=float(gamma * (lam - 1)), lam=float(lam),
                     mu=float(lam / (lam - 1)), kappa=float(kappa))


@dataclass
class RegimeCertificate:
    """Outcome of checking parameters against the convergence conditions.

    ``condition`` is one of ``"C1"``, ``"C2"``, ``"C3"``, ``"TwoOpEqual"``,
    ``"TwoOpStrict"`` or ``"INVALID"``.  ``branch`` keeps the matched branch
    when the certificate is invalid only because ``kappa >= kappa_star``.
    """

    condition: str
    kappa_star: float = float("nan")
    kappa_i_star: Optional[List[float]] = None
    theta: Optional[np.ndarray] = None
    strong_shadow: bool = False
    diagnostics: List[str] = field(default_factory=list)
    branch: Optional[str] = None

    @property
    def valid(self):
        return self.condition != "INVALID"

    def summary(self):
        lines = [f"condition: {self.condition}", f"kappa_star: {self.kappa_star:.10g}"]
        if self.branch and self.branch != self.condition:
            lines.append(f"matched branch: {self.branch}")
        if self.kappa_i_star is not None:
            lines.append("kappa_i_star: " + ", ".join(f"{v:.10g}" for v in self.kappa_i_star))
        if self.theta is not None:
            lines.append("theta: " + ", ".join(f"{v:.10g}" for v in self.theta))
        lines.append(f"strong_shadow: {self.strong_shadow}")
        lines.extend(f"note: {d}" for d in self.diagnostics)
        return "\n".join(lines)


def _close(a, b):
    return abs(a - b) <= EQ_TOL * max(1.0, abs(a), abs(b))


def _finish(cert, kappa):
    # shared tail: a matched branch is only valid when 0 < kappa < kappa_star
    cert.branch = cert.condition
    if not cert.kappa_star > 0:
        cert.diagnostics.append(f"kappa_star = {cert.kappa_star:.6g} is not positive")
        cert.condition = "INVALID"
    elif not kappa < cert.kappa_star:
        cert.diagnostics.append(f"kappa = {kappa:.6g} is not below kappa_star = {cert.kappa_star:.6g}")
        cert.condition = "INVALID"
    if not cert.valid:
        cert.strong_shadow = False
    return cert


def certify_two_op(alpha, beta, p):
    """Certify ``p`` for an ``alpha``-comonotone ``A`` and ``beta``-comonotone ``B``.

    Raises
    ------
    OutOfTheoryError
        If ``alpha + beta < 0``.
    """
    g, d, k = p.gamma, p.delta, p.kappa
    s = alpha + beta
    if s < -EQ_TOL * max(1.0, abs(alpha), abs(beta)):
        raise OutOfTheoryError(f"alpha + beta = {s:.6g} < 0 is outside the convergence theory")
    if abs(s) <= EQ_TOL * max(1.0, abs(alpha), abs(beta)):
        if _close(d, g + 2 * alpha):
            return _finish(RegimeCertificate("TwoOpEqual", kappa_star=1.0), k)
        return RegimeCertificate("INVALID", diagnostics=[
            f"alpha + beta = 0 requires delta = gamma + 2 alpha = {g + 2 * alpha:.6g}, got {d:.6g}"])
    num = 4 * (g + alpha) * (d + beta) - (g + d) ** 2
    kstar = num / (2 * (g + d) * s)
    if not num > 0:
        return RegimeCertificate("INVALID", kappa_star=kstar, diagnostics=[
            f"(gamma + delta)^2 < 4 (gamma + alpha)(delta + beta) fails (slack {num:.6g})"])
    cert = RegimeCertificate("TwoOpStrict", kappa_star=kstar)
    cert.strong_shadow = 0 < k < 1 and (
        (g + 2 * alpha > 0 and kstar >= 1) or (p.symmetric and kstar > k)
    )
    return _finish(cert, k)


def _split_sigma(sigma):
    sigma = [float(s) for s in sigma]
    if len(sigma) < 2:
        raise ParameterError("need at least two moduli")
    return sigma[:-1], sigma[-1]


def default_theta(sigma, m=None, strategy="uniform"):
    """A weight vector in the feasible set used by the third regime.

    ``theta`` must satisfy ``theta_i > 0``, ``sigma_i + sigma_m theta_i > 0`` and
    ``sum 1/theta_i = 1``.

    Parameters
    ----------
    sigma : sequence of float
        All ``m`` moduli, last one for the operator resolved in ``G``.
    strategy : {"uniform", "feasible"}
        ``"uniform"`` returns ``theta_i = m - 1``.  ``"feasible"`` builds an
        interior point whenever the set is nonempty.

    Raises
    ------
    InfeasibleThetaError
        If the requested construction violates a defining inequality.
    """
    head, sm = _split_sigma(sigma)
    if m is not None and m != len(head) + 1:
        raise ParameterError(f"m = {m} does not match {len(head) + 1} moduli")
    m = len(head) + 1
    if strategy == "uniform":
        theta = np.full(m - 1, float(m - 1))
    elif strategy == "feasible":
        if any(s <= 0 for s in head):
            raise InfeasibleThetaError("sigma_i > 0 fails for some i < m")
        if not sm < 0:
            raise InfeasibleThetaError("sigma_m < 0 fails")
        if not sum(1 / s for s in head) + 1 / sm < 0:
            raise InfeasibleThetaError("sum of 1/sigma_i over all m operators is not negative")
        # 1/theta_i must exceed |sigma_m|/sigma_i and sum to one; share the slack evenly
        lower = np.array([abs(sm) / s for s in head])
        slack = 1.0 - lower.sum()
        theta = 1.0 / (lower + slack / (m - 1))
    else:
        raise ParameterError(f"unknown theta strategy {strategy!r}")
    bad = [i for i, (s, t) in enumerate(zip(head, theta)) if not s + sm * t > 0]
    if bad:
        raise InfeasibleThetaError(
            f"sigma_i + sigma_m theta_i > 0 fails for blocks {[i + 1 for i in bad]}")
    return theta


def _theta_violations(head, sm, theta):
    out = []
    if len(theta) != len(head):
        return [f"theta has {len(theta)} entries, expected {len(head)}"]
    if any(t <= 0 for t in theta):
        out.append("theta_i > 0 fails")
    if any(not s + sm * t > 0 for s, t in zip(head, theta)):
        out.append("sigma_i + sigma_m theta_i > 0 fails")
    if abs(sum(1 / t for t in theta) - 1) > 1e-12 and not out:
        out.append("sum 1/theta_i = 1 fails")
    return out


def _kappa_i(head, sm, theta, g, d):
    return [
        (4 * (g + s) * (d + sm * t) - (g + d) ** 2) / (2 * (g + d) * (s + sm * t))
        for s, t in zip(head, theta)
    ]


def certify_multi(sigma, p, theta=None):
    """Certify ``p`` for ``m`` operators with comonotonicity moduli ``sigma``.

    Every regime is checked.  When several hold, the one with the largest
    ``kappa_star`` that admits ``p.kappa`` is reported (ties prefer C1, then
    C2), so the certificate is as permissive as the theory allows.  A positive
    last modulus is weakened to zero (a sigma-comonotone operator with
    ``sigma > 0`` is also 0-comonotone) and a diagnostic is recorded.
    """
    head, sm = _split_sigma(sigma)
    m = len(head) + 1
    g, d, k = p.gamma, p.delta, p.kappa
    notes = []
    if sm > 0:
        notes.append(f"sigma_m = {sm:.6g} > 0 weakened to 0")
        sm = 0.0
    slo = min(head)
    beta = (m - 1) * sm
    scale = max(1.0, abs(slo), abs(beta))
    matched = []

    if abs(slo + beta) <= EQ_TOL * scale and beta <= 0:
        if _close(d, g + 2 * slo):
            matched.append(RegimeCertificate("C1", kappa_star=1.0))
        else:
            notes.append(f"C1: needs delta = gamma + 2 min sigma_i = {g + 2 * slo:.6g}")
    elif slo + beta > 0 and beta <= 0:
        num = 4 * (g + slo) * (d + beta) - (g + d) ** 2
        if num > 0:
            matched.append(RegimeCertificate("C2", kappa_star=num / (2 * (g + d) * (slo + beta)),
                                             strong_shadow=sm == 0.0))
        else:
            notes.append("C2: (gamma + delta)^2 < 4 (gamma + min sigma_i)(delta + (m-1) sigma_m) "
                         f"fails (slack {num:.6g})")
    else:
        notes.append("C1/C2: min sigma_i >= -(m-1) sigma_m >= 0 fails")

    pre = []
    if any(s <= 0 for s in head):
        pre.append("C3: sigma_i > 0 for i < m fails")
    if not sm < 0:
        pre.append("C3: sigma_m < 0 fails")
    if not pre and sum(1 / s for s in head) + 1 / sm >= 0:
        pre.append("C3: sum of 1/sigma_i is not negative")
    if not 0 < k < 1:
        pre.append("C3: kappa in (0, 1) fails")
    best_c3 = None
    if not pre:
        if theta is not None:
            candidates = [np.asarray(theta, dtype=float)]
            bad = _theta_violations(head, sm, candidates[0])
            if bad:
                candidates = []
                notes.extend("C3: " + b for b in bad)
        else:
            candidates = []
            for strategy in ("uniform", "feasible"):
                try:
                    candidates.append(default_theta(list(head) + [sm], strategy=strategy))
                except InfeasibleThetaError:
                    pass
        for th in candidates:
            ki = _kappa_i(head, sm, th, g, d)
            if min(ki) >= 1 or (p.symmetric and min(ki) > k):
                matched.append(RegimeCertificate("C3", kappa_star=1.0, kappa_i_star=ki, theta=th,
                                                 strong_shadow=True))
                break
            if best_c3 is None or min(ki) > min(best_c3[1]):
                best_c3 = (th, ki)
        else:
            if candidates:
                notes.append("C3: neither min kappa_i* >= 1 nor the symmetric case with "
                             "min kappa_i* > kappa")
    else:
        notes.extend(pre)

    for cert in matched:
        _finish(cert, k)
    valid = [c for c in matched if c.valid]
    if valid:
        # max() keeps the first of equal keys, so list order breaks ties
        chosen = max(valid, key=lambda c: c.kappa_star)
        chosen.diagnostics = notes + [f"{c.branch} also holds (kappa_star {c.kappa_star:.6g})"
                                      for c in valid if c is not chosen]
        chosen.strong_shadow = any(c.strong_shadow for c in valid)
        return chosen
    if matched:
        chosen = matched[0]
        chosen.diagnostics = notes + chosen.diagnostics
        return chosen
    return RegimeCertificate("INVALID",
                             kappa_i_star=None if best_c3 is None else best_c3[1],
                             theta=None if best_c3 is None else best_c3[0],
                             diagnostics=notes)


@dataclass
class ADRTrace:
    """Result of a two-operator run.

    ``xs`` holds ``x^0 .. x^K`` and ``ys``/``zs`` hold ``y^0 .. y^{K-1}`` when
    recording is enabled.
    """

    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    iterations: int
    converged: bool
    step_norms: np.ndarray
    xs: Optional[list] = None
    ys: Optional[list] = None
    zs: Optional[list] = None

    @property
    def shadow(self):
        return self.y


def _resolve(op, step, arg, k):
    try:
        out = op.resolve(step, arg)
    except AdrSplitError as exc:
        raise ResolventFailure(f"resolvent failed at iteration {k}: {exc}", iteration=k) from exc
    except (ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
        raise ResolventFailure(f"resolvent failed at iteration {k}: {exc}", iteration=k) from exc
    return out


def _stop(step, x, eps):
    return eps is not None and step <= eps * (1.0 + np.linalg.norm(x))


def adr_run(A, B, p, x0, max_iter=100_000, eps=1e-10, record=False):
    """Run the two-operator aDR iteration from ``x0``.

    Stops when ``|x^{k+1} - x^k| <= eps (1 + |x^k|)`` or after ``max_iter``
    iterations.  ``eps=None`` always runs ``max_iter`` iterations.

    Raises
    ------
    ResolventFailure
        Wraps any resolvent error, with the iteration index.
    DivergenceError
        If ``|x|`` exceeds ``1e12``.
    """
    x = np.array(x0, dtype=float)
    g, d, lam, mu, kap = p.as_tuple()
    xs, ys, zs = ([x.copy()], [], []) if record else (None, None, None)
    steps = []
    y = z = x
    converged = False
    k = 0
    for k in range(max_iter):
        y = _resolve(A, g, x, k)
        z = _resolve(B, d, (1 - lam) * x + lam * y, k)
        dx = kap * mu * (z - y)
        x_new = x + dx
        step = float(np.linalg.norm(dx))
        steps.append(step)
        if record:
            xs.append(x_new.copy())
            ys.append(y)
            zs.append(z)
        if not np.all(np.isfinite(x_new)) or np.linalg.norm(x_new) > DIVERGENCE_BOUND:
            raise DivergenceError(f"iterate norm exceeded {DIVERGENCE_BOUND:g} at iteration {k}", iteration=k)
        done = _stop(step, x, eps)
        x = x_new
        if done:
            converged = True
            break
    return ADRTrace(x=x, y=y, z=z, iterations=len(steps), converged=converged,
                    step_norms=np.asarray(steps), xs=xs, ys=ys, zs=zs)


def dual_params(p):
    """Parameters of the dual iteration: ``(1/g, 1/d, lam g/d, mu d/g, kappa)``."""
    return ADRParams(gamma=1.0 / p.gamma, delta=1.0 / p.delta, lam=p.lam * p.gamma / p.delta,
                     mu=p.mu * p.delta / p.gamma, kappa=p.kappa)


def dual_operators(A, B):
    """Resolvents of ``A' = -A^{-1}(-.)`` and ``B' = B^{-1}`` from those of ``A`` and ``B``.

    Inversion exchanges monotonicity and comonotonicity moduli.
    """

    def res_a(g, u):
        u = np.asarray(u, dtype=float)
        return u + g * A.resolve(1.0 / g, -u / g)

    def res_b(d, u):
        return resolvent_of_inverse(B, d, u)

    Ad = ResolventOp(dim=A.dim, resolve=res_a, sigma=A.rho, rho=A.sigma,
                     valid_gamma=lambda g: A.is_valid_gamma(1.0 / g), name=f"dual({A.name})")
    Bd = ResolventOp(dim=B.dim, resolve=res_b, sigma=B.rho, rho=B.sigma,
                     valid_gamma=lambda d: B.is_valid_gamma(1.0 / d), name=f"dual({B.name})")
    return Ad, Bd


def primal_dual_replay(A, B, p, x0, iterations=50):
    """Largest violation of the primal/dual iterate correspondence over a run.

    Runs the primal iteration from ``x0`` and the dual iteration from
    ``u0 = -x0/gamma`` for ``iterations`` steps each and compares
    ``x = -u/g'``, ``y = (v - u)/g'`` and ``z = ((1 - lam') u + lam' v - w)/d'``.
    """
    q = dual_params(p)
    Ad, Bd = dual_operators(A, B)
    x0 = np.asarray(x0, dtype=float)
    u0 = -x0 / p.gamma
    prim = adr_run(A, B, p, x0, max_iter=iterations, eps=None, record=True)
    dual = adr_run(Ad, Bd, q, u0, max_iter=iterations, eps=None, record=True)
    gp, dp, lp = q.gamma, q.delta, q.lam
    worst = float(np.max(np.abs(x0 + u0 / gp)))
    for k in range(iterations):
        u, v, w = dual.xs[k], dual.ys[k], dual.zs[k]
        worst = max(worst,
                    float(np.max(np.abs(prim.xs[k] + u / gp))),
                    float(np.max(np.abs(prim.ys[k] - (v - u) / gp))),
                    float(np.max(np.abs(prim.zs[k] - ((1 - lp) * u + lp * v - w) / dp))))
    return worst


def build_product_ops(ops, gamma, delta, check=True):
    """Resolvents of the product-space operators ``F`` and ``G``.

    Product-space points are arrays of shape ``(m - 1, n)``.

    Returns
    -------
    res_f : callable
        Applies ``J_{gamma A_i}`` to block ``i``.
    res_g : callable
        Averages the blocks, applies ``J_{delta/(m-1) A_m}`` and replicates the
        result so all blocks are identical.
    """
    ops = list(ops)
    m = len(ops)
    if m < 2:
        raise ParameterError("need at least two operators")
    step_g = delta / (m - 1)
    if check:
        bad = [i + 1 for i, op in enumerate(ops[:-1]) if not op.is_valid_gamma(gamma)]
        if bad:
            raise ParameterError(f"gamma = {gamma:.6g} outside the single-valued region of blocks {bad}")
        if not ops[-1].is_valid_gamma(step_g):
            raise ParameterError(f"delta/(m-1) = {step_g:.6g} outside the single-valued region of the last operator")

    def res_f(X, step=gamma):
        return np.stack([op.resolve(step, X[i]) for i, op in enumerate(ops[:-1])])

    def res_g(X, step=delta):
        u = ops[-1].resolve(step / (m - 1), X.mean(axis=0))
        return np.broadcast_to(u, X.shape).copy()

    return res_f, res_g


@dataclass
class MultiTrace:
    """Result of a product-space run.

    ``shadow`` is the resolvent output whose common value solves the inclusion:
    the mean of the ``F`` blocks for the standard order and the ``G`` output for
    the switched order.
    """

    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    iterations: int
    converged: bool
    step_norms: np.ndarray
    wall_time: np.ndarray
    certificate: Optional[RegimeCertificate]
    shadow: np.ndarray
    xs: Optional[list] = None
    ys: Optional[list] = None
    zs: Optional[list] = None


def _certify_ops(ops, p, theta, force):
    sig = [op.sigma for op in ops]
    if any(s is None for s in sig):
        if not force:
            raise CertificationError("comonotonicity moduli unknown; pass force=True to run anyway")
        return None
    cert = certify_multi(sig, p, theta)
    if not cert.valid:
        if not force:
            raise CertificationError("parameters not certified:\n" + cert.summary(), certificate=cert)
        log.warning("running outside certified regime:\n%s", cert.summary())
    return cert


def _multi_loop(first, second, w1, step_weight, x0, max_iter, eps, record):
    x = np.array(x0, dtype=float)
    if x.ndim != 2:
        raise ParameterError(f"product-space start must have shape (m-1, n), got {x.shape}")
    steps, times = [], []
    xs, ys, zs = ([x.copy()], [], []) if record else (None, None, None)
    y = z = x
    converged = False
    t0 = time.perf_counter()
    for k in range(max_iter):
        try:
            y = first(x)
            z = second((1 - w1) * x + w1 * y)
        except (AdrSplitError, ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
            raise ResolventFailure(f"resolvent failed at iteration {k}: {exc}", iteration=k) from exc
        dx = step_weight * (z - y)
        x_new = x + dx
        step = float(np.linalg.norm(dx))
        steps.append(step)
        times.append(time.perf_counter() - t0)
        if record:
            xs.append(x_new.copy())
            ys.append(y)
            zs.append(z)
        if not np.all(np.isfinite(x_new)) or np.linalg.norm(x_new) > DIVERGENCE_BOUND:
            raise DivergenceError(f"iterate norm exceeded {DIVERGENCE_BOUND:g} at iteration {k}", iteration=k)
        done = _stop(step, x, eps)
        x = x_new
        if done:
            converged = True
            break
    return x, y, z, steps, times, converged, xs, ys, zs


def multi_adr_run(ops, p, x0, max_iter=100_000, eps=1e-10, force=False, theta=None, record=False):
    """Product-space aDR for ``0 in A_1(x) + ... + A_m(x)``.

    Per iteration: ``y_i = J_{gA_i}(x_i)``, ``z = J_{d/(m-1) A_m}(mean((1-lam) x + lam y))``
    and ``x_i <- x_i + kappa mu (z - y_i)``.

    Parameters
    ----------
    ops : sequence of ResolventOp
        ``A_1 .. A_m``; the last one is resolved inside ``G``.
    x0 : ndarray, shape (m - 1, n)
    force : bool
        Run even when the parameters are not certified (the certificate is logged).

    Raises
    ------
    CertificationError, ResolventFailure, DivergenceError
    """
    cert = _certify_ops(ops, p, theta, force)
    res_f, res_g = build_product_ops(ops, p.gamma, p.delta, check=not force)
    x, y, z, steps, times, conv, xs, ys, zs = _multi_loop(
        res_f, res_g, p.lam, p.kappa * p.mu, x0, max_iter, eps, record)
    return MultiTrace(x=x, y=y, z=z, iterations=len(steps), converged=conv,
                      step_norms=np.asarray(steps), wall_time=np.asarray(times),
                      certificate=cert, shadow=y.mean(axis=0), xs=xs, ys=ys, zs=zs)


def multi_adr_run_switched(ops, p, x0, max_iter=100_000, eps=1e-10, force=False, theta=None,
                           record=False):
    """Product-space aDR with ``G`` resolved first.

    Per iteration: ``y = J_{dG}(x)``, ``z = J_{gF}((1-mu) x + mu y)`` and
    ``x <- x + kappa lam (z - y)``.  Certified under the same conditions as
    :func:`multi_adr_run`.
    """
    cert = _certify_ops(ops, p, theta, force)
    res_f, res_g = build_product_ops(ops, p.gamma, p.delta, check=not force)
    x, y, z, steps, times, conv, xs, ys, zs = _multi_loop(
        res_g, res_f, p.mu, p.kappa * p.lam, x0, max_iter, eps, record)
    return MultiTrace(x=x, y=y, z=z, iterations=len(steps), converged=conv,
                      step_norms=np.asarray(steps), wall_time=np.asarray(times),
                      certificate=cert, shadow=y[0].copy(), xs=xs, ys=ys, zs=zs)


def rate_flag(step_norms, windows=8, slack=0.10, floor=1e-13):
    """Empirical check of the ``o(1/sqrt(k))`` step-size decay.

    Scales the tail ``k in [K/2, K]`` of ``|x^{k+1} - x^k|`` by ``sqrt(k)``,
    cuts it into ``windows`` consecutive windows and requires the maximum of
    every later window to stay within ``1 + slack`` of the first window's.
    Values below ``floor * max(1, first step) * sqrt(K)`` count as rounding noise.
    """
    s = np.asarray(step_norms, dtype=float)
    K = s.size
    if K < 2 * windows:
        return True
    ks = np.arange(K // 2, K)
    seq = np.sqrt(np.maximum(ks, 1)) * s[K // 2:]
    noise = floor * max(1.0, float(s[0])) * math.sqrt(K)
    maxima = [float(w.max()) for w in np.array_split(seq, windows)]
    return max(maxima[1:]) <= (1 + slack) * maxima[0] + noise
