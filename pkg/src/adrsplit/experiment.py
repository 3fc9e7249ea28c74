"""Total-variation denoising with a minimax concave penalty.

Builds the multiblock problem

    min  sum_i c/2 |u_i - phi_i|^2 + omega * P_tau(w)   s.t.  sum_i D_i u_i - w = 0,

where ``D = [D_1 ... D_N]`` is the first-order difference matrix split into
contiguous column blocks, and runs the multiblock ADMM solvers on it.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .admm import (
    BlockProblem,
    admm_general_run,
    admm_special_run,
    comonotone_moduli,
    equivalent_general_start,
    gs_admm_run,
    special_params,
)
from .errors import AdrSplitError, CertificationError, ConfigError, ParameterError
from .functions import McpPenalty, QuadraticFunction
from .linalg import LinearMap, difference_matrix
from .splitting import certify_multi

log = logging.getLogger(__name__)

__all__ = [
    "STEP_POSITIONS",
    "STEP_HEIGHTS",
    "SAMPLER",
    "ExperimentConfig",
    "RunReport",
    "DenoiseSetup",
    "gen_signal",
    "split_columns",
    "build_denoise_problem",
    "block_alpha",
    "mcp_threshold",
    "denoise_stepsizes",
    "denoise_setup",
    "mae",
    "run_single",
    "run_experiment",
    "summarize",
    "write_reports",
    "load_config",
]

STEP_POSITIONS = (0.1, 0.13, 0.15, 0.23, 0.25, 0.4, 0.44, 0.65, 0.76, 0.78)
STEP_HEIGHTS = (4.0, -5.0, 3.0, -4.0, 5.0, -4.0, 4.0, -2.0, 4.0, -5.0)
SAMPLER = "numpy.random.default_rng(seed).standard_normal (PCG64)"
CSV_HEADER = ("iter", "primal_residual", "dual_residual", "mae", "elapsed_ms")
ALGORITHMS = ("alg3", "gs_admm", "alg2")
DATA_FITS = ("block", "objective")


@dataclass
class ExperimentConfig:
    """Settings of a denoising experiment.

    ``data_fit`` selects the weight of each data-fit block: ``"block"`` uses
    ``1/2 |u_i - phi_i|^2`` and ``"objective"`` uses ``1/(2N) |u_i - phi_i|^2``.
    Both declare the modulus ``1/N`` for the stepsize formulas.
    ``fixed_iterations`` ignores ``eps`` and always runs ``max_iter`` steps.
    ``timing`` fills the ``elapsed_ms`` column; without it the CSV files are
    reproducible byte for byte.
    """

    n: int = 3000
    N: int = 2
    omega: float = 4.0
    noise_sigma: float = 0.5
    seeds: Sequence[int] = tuple(range(10))
    stepsize_mode: str = "unequal"
    eta: float = 1.01
    eps: float = 1e-4
    max_iter: int = 20_000
    algorithms: Sequence[str] = ("alg3",)
    output: Optional[str] = None
    data_fit: str = "block"
    fixed_iterations: bool = False
    timing: bool = False
    workers: int = 1

    def __post_init__(self):
        self.seeds = tuple(int(s) for s in self.seeds)
        self.algorithms = tuple(self.algorithms)
        self.validate()

    def validate(self):
        if self.N < 1:
            raise ConfigError(f"N must be at least 1, got {self.N}")
        if self.n < self.N + 1:
            raise ConfigError(f"n must be at least N + 1 = {self.N + 1}, got {self.n}")
        if not self.omega > 0:
            raise ConfigError(f"omega must be positive, got {self.omega}")
        if not self.eps > 0:
            raise ConfigError(f"eps must be positive, got {self.eps}")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be non-negative")
        if self.max_iter < 0:
            raise ConfigError("max_iter must be non-negative")
        if self.stepsize_mode not in ("equal", "unequal"):
            raise ConfigError(f"stepsize_mode must be 'equal' or 'unequal', got {self.stepsize_mode!r}")
        if self.stepsize_mode == "unequal" and not self.eta > 1:
            raise ConfigError(f"eta must exceed 1, got {self.eta}")
        bad = [a for a in self.algorithms if a not in ALGORITHMS]
        if bad or not self.algorithms:
            raise ConfigError(f"algorithms must be a non-empty subset of {ALGORITHMS}, got {bad or '[]'}")
        if self.data_fit not in DATA_FITS:
            raise ConfigError(f"data_fit must be one of {DATA_FITS}, got {self.data_fit!r}")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if self.workers < 1:
            raise ConfigError("workers must be positive")

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


@dataclass
class RunReport:
    """Per-iteration rows and summary of one ``(algorithm, seed)`` run."""

    algorithm: str
    seed: int
    stepsize_mode: str
    rows: list = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    final_residual: float = float("nan")
    final_mae: float = float("nan")
    wall_time: float = 0.0
    error: Optional[str] = None
    meta: dict = field(default_factory=dict)

    @property
    def ok(self):
        return self.error is None

    def residual_at(self, k):
        """Stopping residual after iteration ``k`` (1-based)."""
        row = self.rows[k - 1]
        return max(row[1], row[2])

    def to_csv(self):
        buf = io.StringIO()
        for key, val in self.meta.items():
            buf.write(f"# {key}: {val}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for it, pr, du, er, ms in self.rows:
            w.writerow([it, repr(pr), repr(du), repr(er), repr(ms)])
        return buf.getvalue()


def gen_signal(n, seed, noise_sigma):
    """Piecewise constant test signal and a noisy observation.

    Returns
    -------
    phi : ndarray
        Sum of the steps ``height * (x >= position)`` on ``x = linspace(0, 1, n)``.
    phi_hat : ndarray
        ``phi + noise_sigma * xi`` with standard normal ``xi`` from ``default_rng(seed)``.
    """
    if n < 2:
        raise ParameterError(f"n must be at least 2, got {n}")
    x = np.linspace(0.0, 1.0, n)
    phi = np.zeros(n)
    for pos, h in zip(STEP_POSITIONS, STEP_HEIGHTS):
        phi += (x >= pos) * h
    if noise_sigma == 0:
        return phi, phi.copy()
    xi = np.random.default_rng(seed).standard_normal(n)
    return phi, phi + noise_sigma * xi


def split_columns(n, N):
    """Contiguous near-equal index groups covering ``0..n-1``."""
    return [slice(int(g[0]), int(g[-1]) + 1) for g in np.array_split(np.arange(n), N)]


def build_denoise_problem(phi_hat, N, omega, tau, data_fit="block"):
    """Multiblock problem with ``m = N + 1`` blocks and ``b = 0``.

    Block ``i <= N`` is a data fit on the ``i``-th contiguous coordinate group
    with ``L_i = D_i``; the last block is ``omega * P_tau`` with ``L = -I``.
    The declared moduli are ``1/N`` for the data fits and ``-omega/tau``.
    """
    phi_hat = np.asarray(phi_hat, dtype=float)
    n = phi_hat.size
    if not tau > 0:
        raise ParameterError(f"tau must be positive, got {tau}")
    if n < N + 1:
        raise ParameterError(f"signal length {n} too short for {N} blocks")
    weight = {"block": 1.0, "objective": 1.0 / N}[data_fit]
    D = difference_matrix(n)
    groups = split_columns(n, N)
    f = [QuadraticFunction(weight, phi_hat[g]) for g in groups]
    L = [D.columns(g, name=f"D{i + 1}") for i, g in enumerate(groups)]
    f.append(McpPenalty(tau, omega, n - 1))
    L.append(LinearMap.identity(n - 1, -1.0, name="-I"))
    rho = [1.0 / N] * N + [-omega / tau]
    prob = BlockProblem(f, L, rho=rho)
    prob.groups = groups
    return prob


def block_alpha(D_blocks):
    """``alpha = (1/N) min_i |D_i|^{-2}``."""
    N = len(D_blocks)
    norms = [Di.norm for Di in D_blocks]
    if min(norms) == 0:
        raise ParameterError("difference blocks must be nonzero")
    return min(1.0 / (N * nr**2) for nr in norms)


def mcp_threshold(N, omega, D_blocks):
    """``tau = 1.01 N omega / alpha``; makes ``theta = (N, ..., N)`` feasible."""
    return 1.01 * N * omega / block_alpha(D_blocks)


def denoise_stepsizes(alpha, beta, mode="unequal", eta=1.01, sigma=None, theta=None):
    """Stepsizes ``(gamma, delta)`` for the denoising experiment.

    ``unequal``: ``gamma = (alpha - beta)/(eta - 1)`` and ``delta = eta gamma``.
    ``equal``: ``gamma = delta = 1.01 * 2 alpha |beta| / (alpha + beta)``.

    If ``sigma`` is given, the resulting parameters (with
    ``kappa = (lam-1)/lam``) are certified against it.

    Raises
    ------
    ParameterError
        If the moduli do not satisfy ``alpha > 0 > beta`` and ``alpha + beta > 0``.
    CertificationError
        If certification against ``sigma`` fails.
    """
    if not (alpha > 0 > beta and alpha + beta > 0):
        raise ParameterError(f"need alpha > 0 > beta and alpha + beta > 0, got {alpha}, {beta}")
    if mode == "unequal":
        if not eta > 1:
            raise ParameterError(f"eta must exceed 1, got {eta}")
        gamma = (alpha - beta) / (eta - 1)
        delta = eta * gamma
    elif mode == "equal":
        gamma = delta = 1.01 * 2 * alpha * abs(beta) / (alpha + beta)
    else:
        raise ParameterError(f"unknown stepsize mode {mode!r}")
    if sigma is not None:
        cert = certify_multi(sigma, special_params(gamma, delta), theta)
        if not cert.valid:
            raise CertificationError("stepsizes not certified:\n" + cert.summary(), certificate=cert)
    return gamma, delta


@dataclass
class DenoiseSetup:
    phi: np.ndarray
    phi_hat: np.ndarray
    problem: BlockProblem
    alpha: float
    beta: float
    tau: float
    gamma: float
    delta: float
    sigma: list
    certificate: object


def denoise_setup(cfg: ExperimentConfig, seed) -> DenoiseSetup:
    """Signal, problem, moduli, stepsizes and certificate for one seed."""
    phi, phi_hat = gen_signal(cfg.n, seed, cfg.noise_sigma)
    D = difference_matrix(cfg.n)
    blocks = [D.columns(g) for g in split_columns(cfg.n, cfg.N)]
    tau = mcp_threshold(cfg.N, cfg.omega, blocks)
    prob = build_denoise_problem(phi_hat, cfg.N, cfg.omega, tau, cfg.data_fit)
    alpha = block_alpha(prob.L[:-1])
    beta = -cfg.N * cfg.omega / tau
    sigma = comonotone_moduli(prob)
    theta = [float(cfg.N)] * cfg.N
    gamma, delta = denoise_stepsizes(alpha, beta, cfg.stepsize_mode, cfg.eta)
    cert = certify_multi(sigma, special_params(gamma, delta), theta if cfg.N > 1 else None)
    return DenoiseSetup(phi, phi_hat, prob, alpha, beta, tau, gamma, delta, sigma, cert)


def mae(x, phi):
    """Mean absolute error ``(1/n) sum |x_i - phi_i|``."""
    x = np.asarray(x, dtype=float)
    phi = np.asarray(phi, dtype=float)
    if x.shape != phi.shape:
        raise ParameterError(f"length mismatch: {x.shape} vs {phi.shape}")
    return float(np.mean(np.abs(x - phi)))


def reconstruct(prob, u):
    """Concatenate the data-fit blocks into a signal of length ``n``."""
    return np.concatenate(u[:len(prob.groups)])


def run_single(cfg: ExperimentConfig, algorithm, seed) -> RunReport:
    """Run one algorithm on one seed; errors are captured in the report."""
    rep = RunReport(algorithm, int(seed), cfg.stepsize_mode)
    t0 = time.perf_counter()
    try:
        st = denoise_setup(cfg, seed)
        prob = st.problem
        rep.meta = {
            "algorithm": algorithm, "seed": seed, "sampler": SAMPLER, "n": cfg.n, "N": cfg.N,
            "omega": cfg.omega, "noise_sigma": cfg.noise_sigma, "data_fit": cfg.data_fit,
            "stepsize_mode": cfg.stepsize_mode, "eta": cfg.eta, "eps": cfg.eps,
            "tau": repr(st.tau), "gamma": repr(st.gamma), "delta": repr(st.delta),
            "certificate": st.certificate.condition,
        }
        if algorithm != "gs_admm" and not st.certificate.valid:
            raise CertificationError("stepsizes not certified:\n" + st.certificate.summary(),
                                     certificate=st.certificate)
        phi = st.phi
        monitor = lambda u: mae(reconstruct(prob, u), phi)  # noqa: E731
        eps = None if cfg.fixed_iterations else cfg.eps
        kw = dict(max_iter=cfg.max_iter, eps=eps, monitor=monitor)
        if algorithm == "alg3":
            state = admm_special_run(prob, st.gamma, st.delta, **kw)
        elif algorithm == "alg2":
            p = special_params(st.gamma, st.delta)
            state = admm_general_run(prob, p, s0=equivalent_general_start(prob, st.delta), **kw)
        else:
            state = gs_admm_run(prob, st.gamma / (prob.m - 1), **kw)
        ms = np.asarray(state.elapsed) * 1e3 if cfg.timing else np.zeros(state.iteration)
        rep.rows = [(k + 1, state.primal[k], state.dual[k], state.mae[k], float(ms[k]))
                    for k in range(state.iteration)]
        rep.iterations = state.iteration
        rep.converged = state.converged
        if state.iteration:
            rep.final_residual = state.residual
            rep.final_mae = state.mae[-1]
        rep.state = state
    except (AdrSplitError, ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
        rep.error = f"{type(exc).__name__}: {exc}"
        rep.exception = exc
        log.error("%s seed %s failed: %s", algorithm, seed, rep.error)
    rep.wall_time = time.perf_counter() - t0
    return rep


def run_experiment(cfg: ExperimentConfig):
    """Run every ``(algorithm, seed)`` cell and write CSV files if ``cfg.output`` is set.

    Returns
    -------
    list of RunReport
        Ordered by algorithm (as listed in the config), then seed.
    """
    jobs = [(a, s) for a in cfg.algorithms for s in cfg.seeds]
    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            reports = list(pool.map(lambda job: run_single(cfg, *job), jobs))
    else:
        reports = [run_single(cfg, a, s) for a, s in jobs]
    if cfg.output:
        write_reports(reports, cfg.output)
    return reports


def summarize(reports):
    """Mean and spread per algorithm over the successful runs."""
    out = {}
    for alg in dict.fromkeys(r.algorithm for r in reports):
        rs = [r for r in reports if r.algorithm == alg]
        good = [r for r in rs if r.ok]
        its = np.array([r.iterations for r in good], dtype=float)
        res = np.array([r.final_residual for r in good])
        err = np.array([r.final_mae for r in good])
        nan = float("nan")
        out[alg] = {
            "algorithm": alg,
            "stepsize_mode": rs[0].stepsize_mode,
            "runs": len(rs),
            "failures": len(rs) - len(good),
            "converged": sum(r.converged for r in good),
            "mean_iter": float(its.mean()) if good else nan,
            "std_iter": float(its.std()) if good else nan,
            "mean_residual": float(res.mean()) if good else nan,
            "mean_mae": float(err.mean()) if good else nan,
            "std_mae": float(err.std()) if good else nan,
        }
    return out


def write_reports(reports, directory):
    """One CSV per ``(algorithm, seed)`` plus ``summary.csv``."""
    os.makedirs(directory, exist_ok=True)
    for r in reports:
        name = f"{r.algorithm}_{r.stepsize_mode}_seed{r.seed}.csv"
        with open(os.path.join(directory, name), "w", newline="") as fh:
            if r.error:
                fh.write(f"# error: {r.error}\n")
            fh.write(r.to_csv())
    rows = list(summarize(reports).values())
    with open(os.path.join(directory, "summary.csv"), "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(ExperimentConfig)}


def _parse_value(key, raw):
    raw = raw.strip()
    kind = _FIELD_TYPES[key]
    try:
        if key in ("seeds", "algorithms"):
            parts = [p.strip() for p in raw.replace(",", " ").split() if p.strip()]
            if key == "seeds":
                seeds = []
                for p in parts:
                    if ".." in p:
                        lo, hi = p.split("..")
                        seeds.extend(range(int(lo), int(hi) + 1))
                    else:
                        seeds.append(int(p))
                return seeds
            return parts
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "bool":
            low = raw.lower()
            if low not in ("true", "false", "yes", "no", "1", "0"):
                raise ValueError(raw)
            return low in ("true", "yes", "1")
        if key == "output":
            return raw or None
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for {key!r}: {raw!r}") from exc


def parse_config(text, **overrides):
    """Parse ``key = value`` lines (``#`` starts a comment) into a config."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in _FIELD_TYPES:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = _parse_value(key, raw)
    values.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig(**values)


def load_config(path, **overrides):
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, **overrides)
