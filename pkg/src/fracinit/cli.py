"""Command-line surface: compute kernels/variances/statistics, run
verification suites, and emit machine-readable tables.

Commands: sigma, kernel, lyapunov, simulate, verify, dominance.
JSON goes to stdout; simulation data goes to CSV files next to a
manifest.json whose digests make reruns checkable byte for byte.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import secrets
import sys
import time
from dataclasses import asdict

import numpy as np

from . import __version__, kernels, lyapunov, simulate
from .kernels import MomentQuery, ParamReLU, RandomizedLeaky
from .specfn import BudgetExceeded, EvalBudget
from .simulate import ForwardConfig, ResourceLimit

EXIT_FAIL = 1
EXIT_USAGE = 2
EXIT_RESOURCE = 3

FLOAT_FMT = "%.17g"


def parse_activation(text: str):
    t = text.strip().lower()
    if t == "relu":
        return ParamReLU(0.0)
    if t == "linear":
        return ParamReLU(1.0)
    if t == "leaky":
        return ParamReLU(0.01)
    if t.startswith("prelu:"):
        return ParamReLU(float(t.split(":", 1)[1]))
    if t == "rleaky":
        return RandomizedLeaky()
    if t.startswith("rleaky:"):
        lo, hi = (float(v) for v in t.split(":", 1)[1].split(","))
        return RandomizedLeaky(lo, hi)
    raise argparse.ArgumentTypeError(
        f"unknown activation {text!r}; use relu|prelu:<a>|leaky|linear|rleaky[:<lo>,<hi>]"
    )


def _budget(args) -> EvalBudget:
    return EvalBudget(rel_tol=args.rel_tol, max_terms=args.max_terms)


def _add_budget_flags(p):
    p.add_argument("--rel-tol", type=float, default=1e-10, help="series tolerance")
    p.add_argument("--max-terms", type=int, default=1_000_000, help="series term cap")


def _emit(obj) -> None:
    json.dump(obj, sys.stdout, indent=2)
    sys.stdout.write("\n")


def _resolve_seed(seed: int | None) -> int:
    if seed is None:
        seed = secrets.randbits(63)
        print(f"generated seed: {seed}", file=sys.stderr)
    return seed


# ---------------------------------------------------------------------------

def cmd_sigma(args) -> int:
    act = args.activation
    if args.asymptotic:
        if not isinstance(act, ParamReLU):
            print("asymptotic formulas need a fixed slope", file=sys.stderr)
            return EXIT_USAGE
        sigma_sq = kernels.asymptotic_sigma_sq(args.s, args.d, act.a, args.q)
        _emit({
            "sigma": math.sqrt(sigma_sq),
            "sigma_sq": sigma_sq,
            "log_I": None,
            "method": "asymptotic",
            "tail_bound": 0.0,
            "d": args.d, "s": args.s, "q": args.q, "activation": args.activation_text,
        })
        return 0
    query = MomentQuery(d=args.d, s=args.s, activation=act, q=args.q, budget=_budget(args))
    kv = kernels.kernel(query)
    sigma, sigma_sq = kernels.critical_sigma(query)
    _emit({
        "sigma": sigma,
        "sigma_sq": sigma_sq,
        "log_I": kv.log_I,
        "method": "exact",
        "tail_bound": kv.tail_bound,
        "terms_used": kv.terms_used,
        "d": args.d, "s": args.s, "q": args.q, "activation": args.activation_text,
    })
    return 0


def cmd_kernel(args) -> int:
    query = MomentQuery(d=args.d, s=args.s, activation=args.activation, q=args.q, budget=_budget(args))
    kv = kernels.kernel(query)
    _emit({
        "log_I": kv.log_I,
        "I": kv.I if math.isfinite(kv.I) else None,
        "terms_used": kv.terms_used,
        "tail_bound": kv.tail_bound,
        "d": args.d, "s": args.s, "q": args.q, "activation": args.activation_text,
    })
    return 0


def cmd_lyapunov(args) -> int:
    act = args.activation
    if not isinstance(act, ParamReLU):
        print("log-norm statistics need a fixed slope", file=sys.stderr)
        return EXIT_USAGE
    if args.q != 1.0:
        print("log-norm statistics are derived for full keep (q = 1)", file=sys.stderr)
        return EXIT_USAGE
    budget = _budget(args)
    if args.sigma is None and args.s is None:
        print("one of --sigma / --s is required", file=sys.stderr)
        return EXIT_USAGE
    if args.sigma is not None:
        sigma = args.sigma
    else:
        sigma, _ = kernels.critical_sigma(MomentQuery(d=args.d, s=args.s, activation=act, budget=budget))
    if act.a == 0.0:
        stats = lyapunov.relu_log_stats(sigma, args.d)
    else:
        stats = lyapunov.prelu_log_stats(sigma, args.d, act.a, budget)
    verdict = lyapunov.as_limit(sigma, args.d, act, 1.0, budget)
    _emit({
        "sigma": sigma,
        "mu": stats.mu,
        "s2": stats.s2,
        "conditional_on_nonzero": stats.conditional_on_nonzero,
        "limit": verdict.kind,
        "s_star": verdict.s_star,
        "note": verdict.note,
        "d": args.d, "activation": args.activation_text,
    })
    return 0


# ---------------------------------------------------------------------------

def _write_csv(path, header, rows) -> str:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([FLOAT_FMT % v if isinstance(v, float) else v for v in row])
    return _digest(path)


def _digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        h.update(fh.read())
    return h.hexdigest()


def _config_dict(config: ForwardConfig) -> dict:
    d = asdict(config)
    d["activation"] = repr(config.activation)
    return d


def cmd_simulate(args) -> int:
    budget = _budget(args)
    act = args.activation
    if args.d is None and not args.widths:
        print("one of --d / --widths is required", file=sys.stderr)
        return EXIT_USAGE
    if (args.sigma is None) == (args.s is None):
        print("exactly one of --sigma / --s is required", file=sys.stderr)
        return EXIT_USAGE
    seed = _resolve_seed(args.seed)
    if args.sigma is not None:
        sigma = args.sigma
        s_used = None
    else:
        d0 = args.widths[0] if args.widths else args.d
        sigma, _ = kernels.critical_sigma(MomentQuery(d=d0, s=args.s, activation=act, q=args.q, budget=budget))
        s_used = args.s
    widths = tuple(args.widths) if args.widths else (args.d,) * args.layers
    checkpoints = tuple(args.checkpoints) if args.checkpoints else (len(widths),)
    config = ForwardConfig(
        widths=widths, activation=act, sigma=sigma, q=args.q, noise_std=args.noise_std,
        trials=args.trials, seed=seed, checkpoints=checkpoints,
    )
    t0 = time.time()
    stats = simulate.run_ensemble(config)
    wall = time.time() - t0

    os.makedirs(args.out, exist_ok=True)
    outputs = {}

    rows = []
    for j, cp in enumerate(stats.checkpoints):
        for t in range(config.trials):
            rows.append((t, cp, float(stats.logratio[t, j]), int(stats.is_zero[t, j])))
    outputs["lognorm_samples.csv"] = _write_csv(
        os.path.join(args.out, "lognorm_samples.csv"),
        ["trial", "checkpoint", "logratio", "is_zero"], rows)

    probe_orders = sorted({1.0, 2.0} | ({s_used} if s_used else set()))
    relu_zero_law = isinstance(act, ParamReLU) and act.a == 0.0 and args.q == 1.0
    rows = []
    for j, cp in enumerate(stats.checkpoints):
        zf, zse = simulate.empirical_zero_fraction(stats, cp)
        zpred = lyapunov.zero_output_probability(widths[0], cp) if relu_zero_law else float("nan")
        for p in probe_orders:
            est, se = simulate.estimate_moment(stats, p, cp)
            pred = simulate_prediction(widths[:cp], p, sigma, act, args.q, budget)
            rows.append((cp, p, est, se, pred, zf, zse, zpred))
    outputs["summary.csv"] = _write_csv(
        os.path.join(args.out, "summary.csv"),
        ["checkpoint", "order", "estimate", "stderr", "predicted",
         "zero_fraction", "zero_stderr", "zero_predicted"], rows)

    rows = []
    for cp in stats.checkpoints:
        c = stats.cdf(cp)
        for x, F in zip(c.grid, c.values):
            rows.append((cp, float(x), float(F), c.n_samples))
    outputs["cdf.csv"] = _write_csv(
        os.path.join(args.out, "cdf.csv"), ["checkpoint", "x", "F", "n_samples"], rows)

    manifest = {
        "command": "simulate",
        "version": __version__,
        "seed": seed,
        "config": _config_dict(config),
        "wall_clock_s": wall,
        "outputs": outputs,
    }
    with open(os.path.join(args.out, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2)
    _emit({"out": args.out, "seed": seed, "sigma": sigma, "outputs": outputs})
    return 0


def simulate_prediction(widths, s, sigma, activation, q, budget) -> float:
    try:
        return kernels.moment_trajectory(list(widths), s, sigma, activation, q, budget)[-1]
    except (BudgetExceeded, kernels.Unsupported):
        return float("nan")


def cmd_dominance(args) -> int:
    def load(path):
        by_cp: dict[int, list[tuple[float, float, int]]] = {}
        with open(path) as fh:
            for row in csv.DictReader(fh):
                by_cp.setdefault(int(row["checkpoint"]), []).append(
                    (float(row["x"]), float(row["F"]), int(row["n_samples"])))
        cp = args.checkpoint if args.checkpoint is not None else max(by_cp)
        pts = by_cp[cp]
        grid = np.array([p[0] for p in pts])
        vals = np.array([p[1] for p in pts])
        return simulate.CdfOnGrid(grid=grid, values=vals, n_samples=pts[0][2]), cp

    cdf_a, cp_a = load(args.a)
    cdf_b, cp_b = load(args.b)
    frac, viol, band = simulate.dominance_check(cdf_a, cdf_b)
    _emit({
        "dominant_fraction": frac,
        "max_violation": viol,
        "band": band,
        "checkpoint_a": cp_a,
        "checkpoint_b": cp_b,
        "dominates": bool(frac >= 0.99),
    })
    return 0


# ---------------------------------------------------------------------------

def cmd_verify(args) -> int:
    from . import verify as verify_mod

    seed = _resolve_seed(args.seed)
    suites = ["kernels", "lyapunov", "simulate"] if args.suite == "all" else [args.suite]
    rows = []
    for suite in suites:
        rows.extend(getattr(verify_mod, f"{suite}_suite")(trials=args.trials, seed=seed))
    n_fail = sum(0 if r.passed else 1 for r in rows)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        _write_csv(
            os.path.join(args.out, "verify.csv"),
            ["name", "predicted", "observed", "tolerance", "pass"],
            [(r.name, r.predicted, r.observed, r.tolerance, int(r.passed)) for r in rows],
        )
    for r in rows:
        status = "PASS" if r.passed else "FAIL"
        print(f"[{status}] {r.name}: predicted={r.predicted:.6g} observed={r.observed:.6g} tol={r.tolerance:.2g}")
    print(f"{len(rows) - n_fail}/{len(rows)} checks passed (seed={seed})")
    return 0 if n_fail == 0 else EXIT_FAIL


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fracinit", description=__doc__)
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    def add_common(p, with_q=True):
        p.add_argument("--d", type=int, default=None, help="layer width")
        p.add_argument("--s", type=float, default=None, help="moment order")
        p.add_argument("--activation", type=parse_activation, default=ParamReLU(0.0))
        if with_q:
            p.add_argument("--q", type=float, default=1.0, help="dropout keep probability")
        _add_budget_flags(p)

    p = sub.add_parser("sigma", help="critical initialization std dev / variance")
    add_common(p)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--exact", action="store_true", default=True)
    g.add_argument("--asymptotic", action="store_true", default=False)
    p.set_defaults(func=cmd_sigma, need=("d", "s"))

    p = sub.add_parser("kernel", help="per-layer moment kernel I(s, d)")
    add_common(p)
    p.set_defaults(func=cmd_kernel, need=("d", "s"))

    p = sub.add_parser("lyapunov", help="log-norm drift, CLT variance and limit verdict")
    add_common(p)
    p.add_argument("--sigma", type=float, default=None, help="weight std dev (else resolved from --s)")
    p.set_defaults(func=cmd_lyapunov, need=("d",))

    p = sub.add_parser("simulate", help="Monte Carlo forward propagation to CSV")
    add_common(p)
    p.add_argument("--widths", type=lambda t: [int(v) for v in t.split(",")], default=None)
    p.add_argument("--layers", type=int, default=100)
    p.add_argument("--sigma", type=float, default=None)
    p.add_argument("--noise-std", type=float, default=0.0)
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--checkpoints", type=lambda t: [int(v) for v in t.split(",")], default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate, need=())

    p = sub.add_parser("verify", help="run a property/oracle suite")
    p.add_argument("--suite", choices=["kernels", "lyapunov", "simulate", "all"], default="all")
    p.add_argument("--trials", type=int, default=2000)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_verify, need=())

    p = sub.add_parser("dominance", help="first-order stochastic dominance of two cdf.csv files")
    p.add_argument("--a", required=True, help="cdf.csv of the candidate dominator")
    p.add_argument("--b", required=True, help="cdf.csv of the baseline")
    p.add_argument("--checkpoint", type=int, default=None)
    p.set_defaults(func=cmd_dominance, need=())
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    args.activation_text = None
    if hasattr(args, "activation"):
        args.activation_text = repr(args.activation)
    for flag in getattr(args, "need", ()):
        if getattr(args, flag, None) is None:
            print(f"--{flag} is required for {args.command}", file=sys.stderr)
            return EXIT_USAGE
    if getattr(args, "d", None) is None and getattr(args, "widths", None):
        args.d = args.widths[0]
    try:
        return args.func(args)
    except BudgetExceeded as exc:
        print(f"budget exceeded: {exc}", file=sys.stderr)
        return EXIT_RESOURCE
    except ResourceLimit as exc:
        print(f"resource limit: {exc}", file=sys.stderr)
        return EXIT_RESOURCE
    except (ValueError, kernels.Unsupported) as exc:
        print(f"invalid request: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
