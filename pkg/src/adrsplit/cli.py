"""Command-line front end.

Exit codes: 0 success, 2 certification failure, 3 divergence or resolvent
failure, 4 configuration or input error.
"""

from __future__ import annotations

import argparse
import logging
import sys

import numpy as np

from .errors import (
    AdrSplitError,
    CertificationError,
    ConfigError,
    DivergenceError,
    ResolventFailure,
)
from .experiment import ExperimentConfig, load_config, run_experiment, summarize
from .operators import affine_operator
from .splitting import certify_multi, make_params, multi_adr_run, multi_adr_run_switched

EXIT_OK, EXIT_CERT, EXIT_DIVERGED, EXIT_CONFIG = 0, 2, 3, 4


def _floats(text):
    try:
        return [float(v) for v in text.replace(",", " ").split()]
    except ValueError as exc:
        raise ConfigError(f"expected a comma-separated list of numbers, got {text!r}") from exc


def parse_affine_instance(text):
    """Parse an affine inclusion instance.

    Grammar (one token group per line, ``#`` starts a comment)::

        operator [name]          start a new operator A(x) = M x + c
        matrix <rows> <cols>     followed by <rows> lines of <cols> numbers
        vector <k>               followed by one line of k numbers (the shift c)
        sigma <value>            optional comonotonicity modulus override

    Returns a list of ``(M, c, sigma)`` with ``c`` zero and ``sigma`` ``None``
    when omitted.
    """
    lines = [ln.split("#", 1)[0].strip() for ln in text.splitlines()]
    lines = [ln for ln in lines if ln]
    ops, cur = [], None
    i = 0

    def read_row(k, what):
        nonlocal i
        if i >= len(lines):
            raise ConfigError(f"unexpected end of file while reading {what}")
        vals = _floats(lines[i])
        if len(vals) != k:
            raise ConfigError(f"{what}: expected {k} numbers, got {len(vals)}")
        i += 1
        return vals

    while i < len(lines):
        head = lines[i].split()
        i += 1
        key = head[0].lower()
        if key == "operator":
            cur = {"M": None, "c": None, "sigma": None}
            ops.append(cur)
            continue
        if cur is None:
            raise ConfigError(f"{head[0]!r} before the first 'operator' line")
        try:
            if key == "matrix":
                r, c = int(head[1]), int(head[2])
                cur["M"] = np.array([read_row(c, f"matrix row {j + 1}") for j in range(r)])
            elif key == "vector":
                cur["c"] = np.array(read_row(int(head[1]), "vector"))
            elif key == "sigma":
                cur["sigma"] = float(head[1])
            else:
                raise ConfigError(f"unknown keyword {head[0]!r}")
        except (IndexError, ValueError) as exc:
            raise ConfigError(f"malformed line {' '.join(head)!r}") from exc
    if len(ops) < 2:
        raise ConfigError("an instance needs at least two operators")
    out = []
    for k, op in enumerate(ops):
        if op["M"] is None:
            raise ConfigError(f"operator {k + 1} has no matrix")
        n = op["M"].shape[0]
        if op["M"].shape != (n, n):
            raise ConfigError(f"operator {k + 1}: matrix must be square")
        c = np.zeros(n) if op["c"] is None else op["c"]
        if c.shape != (n,):
            raise ConfigError(f"operator {k + 1}: vector length {c.size} does not match {n}")
        out.append((op["M"], c, op["sigma"]))
    if len({M.shape[0] for M, _, _ in out}) != 1:
        raise ConfigError("all operators must act on the same space")
    return out


def _config_from_args(args):
    overrides = {
        "output": args.output,
        "stepsize_mode": args.mode,
        "seeds": None if args.seeds is None else [int(v) for v in _floats(args.seeds)],
        "n": args.n,
        "max_iter": args.max_iter,
        "eps": args.eps,
        "data_fit": args.data_fit,
        "workers": args.workers,
    }
    if getattr(args, "timing", False):
        overrides["timing"] = True
    if args.config:
        return load_config(args.config, **overrides)
    return ExperimentConfig(**{k: v for k, v in overrides.items() if v is not None})


def _exit_for_reports(reports):
    codes = [EXIT_OK]
    for r in reports:
        exc = getattr(r, "exception", None)
        if isinstance(exc, CertificationError):
            codes.append(EXIT_CERT)
        elif isinstance(exc, (DivergenceError, ResolventFailure)):
            codes.append(EXIT_DIVERGED)
        elif exc is not None:
            codes.append(EXIT_CONFIG)
    return max(codes)


def _print_summary(reports, out):
    out.write(f"{'algorithm':<10}{'mode':<9}{'runs':>5}{'fail':>5}{'iter':>10}"
              f"{'residual':>12}{'MAE':>10}{'MAE std':>10}\n")
    for s in summarize(reports).values():
        out.write(f"{s['algorithm']:<10}{s['stepsize_mode']:<9}{s['runs']:>5}{s['failures']:>5}"
                  f"{s['mean_iter']:>10.1f}{s['mean_residual']:>12.3e}{s['mean_mae']:>10.4f}"
                  f"{s['std_mae']:>10.5f}\n")
    for r in reports:
        if r.error:
            out.write(f"# {r.algorithm} seed {r.seed}: {r.error}\n")


def cmd_denoise(args, out):
    cfg = _config_from_args(args)
    if args.algorithms:
        cfg = cfg.replace(algorithms=tuple(args.algorithms.replace(",", " ").split()))
    reports = run_experiment(cfg)
    _print_summary(reports, out)
    return _exit_for_reports(reports)


def cmd_compare(args, out):
    cfg = _config_from_args(args)
    iters = args.iterations
    cfg = cfg.replace(algorithms=("alg3", "gs_admm"), fixed_iterations=True, max_iter=iters)
    reports = run_experiment(cfg)
    by = {(r.algorithm, r.seed): r for r in reports}
    out.write(f"{'seed':>5}{'alg3 residual':>16}{'gs residual':>16}{'alg3 MAE':>11}{'gs MAE':>11}\n")
    wins = total = 0
    for seed in cfg.seeds:
        a, g = by[("alg3", seed)], by[("gs_admm", seed)]
        if not (a.ok and g.ok):
            out.write(f"{seed:>5}  failed\n")
            continue
        ra, rg = a.residual_at(iters), g.residual_at(iters)
        total += 1
        wins += ra <= rg
        out.write(f"{seed:>5}{ra:>16.4e}{rg:>16.4e}{a.final_mae:>11.5f}{g.final_mae:>11.5f}\n")
    out.write(f"alg3 residual <= gs_admm residual at iteration {iters}: {wins}/{total} seeds\n")
    for r in reports:
        if r.error:
            out.write(f"# {r.algorithm} seed {r.seed}: {r.error}\n")
    return _exit_for_reports(reports)


def cmd_validate(args, out):
    sigma = _floats(args.sigma)
    if args.delta is not None and args.lam is not None:
        raise ConfigError("give either --delta or --lam, not both")
    if args.delta is not None:
        lam = 1.0 + args.delta / args.gamma
    elif args.lam is not None:
        lam = args.lam
    else:
        raise ConfigError("one of --delta or --lam is required")
    kappa = args.kappa if args.kappa is not None else (lam - 1) / lam
    p = make_params(args.gamma, lam, kappa)
    theta = _floats(args.theta) if args.theta else None
    cert = certify_multi(sigma, p, theta)
    out.write(f"gamma={p.gamma:.10g} delta={p.delta:.10g} lam={p.lam:.10g} "
              f"mu={p.mu:.10g} kappa={p.kappa:.10g}\n")
    out.write(cert.summary() + "\n")
    return EXIT_OK if cert.valid else EXIT_CERT


def cmd_inclusion(args, out):
    try:
        with open(args.instance) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read {args.instance}: {exc}") from exc
    spec = parse_affine_instance(text)
    ops = [affine_operator(M, c, sigma=s, name=f"A{k + 1}") for k, (M, c, s) in enumerate(spec)]
    n = spec[0][0].shape[0]
    kappa = args.kappa if args.kappa is not None else (args.lam - 1) / args.lam
    p = make_params(args.gamma, args.lam, kappa)
    x0 = np.zeros((len(ops) - 1, n))
    run = multi_adr_run_switched if args.switched else multi_adr_run
    tr = run(ops, p, x0, max_iter=args.max_iter, eps=args.eps, force=args.force)
    x = tr.shadow
    resid = sum(M @ x + c for M, c, _ in spec)
    if tr.certificate is not None:
        out.write(tr.certificate.summary() + "\n")
    out.write(f"iterations: {tr.iterations}\nconverged: {tr.converged}\n")
    out.write("solution: " + " ".join(f"{v:.12g}" for v in x) + "\n")
    out.write(f"inclusion residual: {np.linalg.norm(resid):.3e}\n")
    return EXIT_OK


def build_parser():
    ap = argparse.ArgumentParser(prog="adrsplit", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def experiment_args(p):
        p.add_argument("--config", help="key = value config file")
        p.add_argument("--output", help="directory for CSV output")
        p.add_argument("--mode", choices=["equal", "unequal"], help="stepsize mode")
        p.add_argument("--seeds", help="comma-separated seeds")
        p.add_argument("--n", type=int, help="signal length")
        p.add_argument("--max-iter", type=int, dest="max_iter")
        p.add_argument("--eps", type=float)
        p.add_argument("--data-fit", choices=["block", "objective"], dest="data_fit")
        p.add_argument("--workers", type=int)

    p = sub.add_parser("denoise", help="run the denoising experiment")
    experiment_args(p)
    p.add_argument("--algorithms", help="subset of alg3, gs_admm, alg2")
    p.add_argument("--timing", action="store_true", help="record elapsed time per iteration")
    p.set_defaults(func=cmd_denoise)

    p = sub.add_parser("compare", help="Algorithm 3 against GS-ADMM after a fixed number of iterations")
    experiment_args(p)
    p.add_argument("--iterations", type=int, default=2000)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("validate-params", help="certify aDR parameters for given moduli")
    p.add_argument("--sigma", required=True, help="moduli sigma_1..sigma_m")
    p.add_argument("--gamma", type=float, required=True)
    p.add_argument("--delta", type=float)
    p.add_argument("--lam", type=float)
    p.add_argument("--kappa", type=float, help="default (lam-1)/lam")
    p.add_argument("--theta", help="weights theta_1..theta_{m-1}")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("run-inclusion", help="product-space aDR on an affine instance file")
    p.add_argument("instance")
    p.add_argument("--gamma", type=float, required=True)
    p.add_argument("--lam", type=float, default=2.0)
    p.add_argument("--kappa", type=float, help="default (lam-1)/lam")
    p.add_argument("--max-iter", type=int, default=100_000, dest="max_iter")
    p.add_argument("--eps", type=float, default=1e-10)
    p.add_argument("--switched", action="store_true", help="resolve the averaging operator first")
    p.add_argument("--force", action="store_true", help="run even if not certified")
    p.set_defaults(func=cmd_inclusion)
    return ap


def main(argv=None, out=None):
    out = sys.stdout if out is None else out
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args, out)
    except CertificationError as exc:
        out.write(f"certification failed: {exc}\n")
        return EXIT_CERT
    except (DivergenceError, ResolventFailure) as exc:
        out.write(f"run failed: {exc}\n")
        return EXIT_DIVERGED
    except (ConfigError, AdrSplitError, ValueError) as exc:
        out.write(f"error: {exc}\n")
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
