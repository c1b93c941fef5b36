"""Property/oracle suites behind the `fracinit verify` command.

Each check compares a predicted and an observed quantity at a stated
tolerance; suites return CheckRow lists so the CLI can print and persist
them uniformly.  These are the fast, CLI-facing versions; the full
acceptance matrix lives in the test suite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special as sp

from . import kernels, lyapunov, simulate
from .kernels import LINEAR, RELU, MomentQuery, ParamReLU, RandomizedLeaky
from .specfn import EvalBudget
from . import series

BUDGET = EvalBudget(rel_tol=1e-10, max_terms=2_000_000)


@dataclass(frozen=True)
class CheckRow:
    name: str
    predicted: float
    observed: float
    tolerance: float
    passed: bool


def _check(name, predicted, observed, tolerance) -> CheckRow:
    return CheckRow(name, float(predicted), float(observed),
                    float(tolerance), bool(abs(observed - predicted) <= tolerance))


def kernels_suite(trials: int = 0, seed: int = 0) -> list[CheckRow]:
    rows = []
    for d in (1, 7, 64, 512):
        _, s2 = kernels.critical_sigma(MomentQuery(d=d, s=2.0))
        rows.append(_check(f"kaiming_variance_d{d}", 2.0 / d, s2, 1e-12 * 2 / d))
        _, s2 = kernels.critical_sigma(MomentQuery(d=d, s=2.0, activation=LINEAR))
        rows.append(_check(f"lecun_variance_d{d}", 1.0 / d, s2, 1e-12 / d))
    for a in (0.2, 0.9):
        for d in (2, 32):
            kv = kernels.prelu_kernel(MomentQuery(d=d, s=2 - 1e-9, activation=ParamReLU(a), budget=BUDGET))
            exact = (1 + a * a) * d / 2
            rows.append(_check(f"closed_form_s2_a{a}_d{d}", 1.0, kv.I / exact, 1e-6))
    # monotonicity of the critical std dev in each argument
    grid_a = [0.0, 0.01, 0.2, 1.0]
    sig = [kernels.critical_sigma(MomentQuery(d=16, s=1.0, activation=ParamReLU(a), budget=BUDGET))[0]
           for a in grid_a]
    rows.append(_check("sigma_decreasing_in_slope", 1.0, float(np.all(np.diff(sig) < 0)), 0.0))
    sig = [kernels.critical_sigma(MomentQuery(d=16, s=s, budget=BUDGET))[0] for s in (0.5, 1.0, 1.5, 2.0)]
    rows.append(_check("sigma_decreasing_in_order", 1.0, float(np.all(np.diff(sig) < 0)), 0.0))
    sig = [kernels.critical_sigma(MomentQuery(d=d, s=1.0, budget=BUDGET))[0] for d in (2, 8, 32, 128)]
    rows.append(_check("sigma_decreasing_in_width", 1.0, float(np.all(np.diff(sig) < 0)), 0.0))
    # dropout reductions at q = 1 are bit-identical
    for name, fn in (("relu", kernels.dropout_relu_kernel), ("prelu", kernels.dropout_prelu_kernel)):
        a = 0.0 if name == "relu" else 0.3
        qv = fn(MomentQuery(d=12, s=1.2, activation=ParamReLU(a), q=1.0, budget=BUDGET))
        pv = kernels.kernel(MomentQuery(d=12, s=1.2, activation=ParamReLU(a), budget=BUDGET))
        rows.append(_check(f"dropout_q1_identity_{name}", 0.0, abs(qv.log_I - pv.log_I), 0.0))
    # asymptotics close in on the exact variance at rate 1/d^2
    for label, act, q in (("relu", RELU, 1.0), ("linear", LINEAR, 1.0),
                          ("relu_dropout", RELU, 0.8), ("linear_dropout", LINEAR, 0.8)):
        errs = []
        for d in (256, 512):
            _, s2 = kernels.critical_sigma(MomentQuery(d=d, s=1.0, activation=act, q=q, budget=BUDGET))
            errs.append(abs(s2 - kernels.asymptotic_sigma_sq(1.0, d, act.a, q)) * d * d)
        rows.append(_check(f"asymptotic_err_decreasing_{label}", 1.0, float(errs[1] < errs[0]), 0.0))
    # randomized leaky collapses to the fixed slope on a point-mass interval
    kv1 = kernels.randomized_leaky_kernel(
        MomentQuery(d=16, s=1.0, activation=RandomizedLeaky(0.2 - 5e-10, 0.2 + 5e-10), budget=BUDGET))
    kv2 = kernels.prelu_kernel(MomentQuery(d=16, s=1.0, activation=ParamReLU(0.2), budget=BUDGET))
    rows.append(_check("rleaky_point_mass", 1.0, math.exp(kv1.log_I - kv2.log_I), 1e-6))
    return rows


def lyapunov_suite(trials: int = 0, seed: int = 0) -> list[CheckRow]:
    rows = []
    for d in (8, 32):
        for a in (0.01, 0.2, 0.9):
            worst = 0.0
            for n in range(1, d + 1):
                val, _, _ = series.weight_normalization(n, d - n, a, BUDGET)
                worst = max(worst, abs(val - 1.0))
            rows.append(_check(f"weight_normalization_d{d}_a{a}", 0.0, worst, 1e-9))
    for d in (4, 16):
        st = lyapunov.prelu_log_stats(1.0, d, 1.0)
        rows.append(_check(f"linear_drift_closed_form_d{d}",
                           math.log(2) / 2 + float(sp.digamma(d / 2)) / 2, st.mu, 1e-12))
        rows.append(_check(f"linear_clt_var_closed_form_d{d}",
                           float(sp.polygamma(1, d / 2)) / 4, st.s2, 1e-12))
    # preserving sigma has negative drift; threshold equivalence
    for (a, s, d) in ((0.01, 1.0, 16), (1.0, 1.5, 32), (0.5, 0.5, 8)):
        sig, _ = kernels.critical_sigma(MomentQuery(d=d, s=s, activation=ParamReLU(a), budget=BUDGET))
        mu = lyapunov.prelu_log_stats(sig, d, a, BUDGET).mu
        rows.append(_check(f"drift_negative_a{a}_s{s}_d{d}", 1.0, float(mu < 0), 0.0))
        s_star = kernels.solve_preserved_order(sig, d, ParamReLU(a), budget=BUDGET)
        rows.append(_check(f"preserved_order_roundtrip_a{a}_s{s}_d{d}", s,
                           s_star if s_star is not None else math.nan, 1e-6 * s))
    rows.append(_check("mixture_variance_identity", 2.0,
                       lyapunov.mixture_variance([0.5, 0.5], [0.0, 2.0], [1.0, 1.0]), 1e-15))
    rows.append(_check("zero_output_prob_d4_k10", 1 - (15 / 16) ** 10,
                       lyapunov.zero_output_probability(4, 10), 1e-15))
    return rows


def simulate_suite(trials: int = 2000, seed: int = 0) -> list[CheckRow]:
    rows = []
    trials = max(int(trials), 500)
    for label, act in (("relu", RELU), ("linear", LINEAR), ("leaky", ParamReLU(0.01))):
        sig, _ = kernels.critical_sigma(MomentQuery(d=32, s=1.0, activation=act, budget=BUDGET))
        cfg = simulate.ForwardConfig.constant(
            32, 50, activation=act, sigma=sig, trials=trials, seed=seed, checkpoints=(25, 50))
        stats = simulate.run_ensemble(cfg)
        for cp in (25, 50):
            est, se = simulate.estimate_moment(stats, 1.0, cp)
            rows.append(_check(f"moment_preserved_{label}_k{cp}", 1.0, est, 3 * se))
    cfg = simulate.ForwardConfig.constant(
        4, 10, activation=RELU, sigma=0.7, trials=max(trials, 5000), seed=seed + 1,
        checkpoints=(1, 5, 10))
    stats = simulate.run_ensemble(cfg)
    for cp in (1, 5, 10):
        frac, se = simulate.empirical_zero_fraction(stats, cp)
        rows.append(_check(f"zero_law_d4_k{cp}", lyapunov.zero_output_probability(4, cp),
                           frac, 3 * se + 1e-12))
    # chunked runs concatenate to the monolithic run bit for bit
    cfg = simulate.ForwardConfig.constant(8, 10, activation=RELU, sigma=0.5, trials=64,
                                          seed=seed + 2, checkpoints=(10,))
    whole = simulate.run_ensemble(cfg)
    lo = simulate.run_ensemble(simulate.ForwardConfig.constant(
        8, 10, activation=RELU, sigma=0.5, trials=40, seed=seed + 2, checkpoints=(10,)))
    hi = simulate.run_ensemble(simulate.ForwardConfig.constant(
        8, 10, activation=RELU, sigma=0.5, trials=24, seed=seed + 2, checkpoints=(10,)), trial_offset=40)
    glued = np.concatenate([lo.logratio, hi.logratio])
    same = np.array_equal(glued, whole.logratio, equal_nan=True) or bool(
        np.all((glued == whole.logratio) | (np.isinf(glued) & np.isinf(whole.logratio))))
    rows.append(_check("chunking_determinism", 1.0, float(same), 0.0))
    return rows
