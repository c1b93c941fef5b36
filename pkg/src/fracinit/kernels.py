"""Moment kernels, critical variances, asymptotics and regime analysis.

The per-layer moment kernel I(s, d) is the expected s-th power of the norm
of the activated image of a standard Gaussian vector; the s-th moment of
the layer-k output evolves as (sigma^s I)^k.  The critical standard
deviation sigma_bar = I^(-1/s) makes that factor exactly one.

Kernel families:

  * ReLU (slope 0):   finite binomial/chi-square sum, any s > 0.
  * slope a in (0,1): Beta-function series over chi-square mixtures
    (series.py) for s in (0,2), closed form at s=2, quadrature for s > 2.
  * linear (slope 1): closed Gamma-ratio form, any s > 0.
  * randomized leaky: slope-averaged series weights, a ~ Uniform[lo, hi].
  * dropout variants: binomial mixing probabilities are tilted by the keep
    probability q (binomial over kept coordinates for ReLU/linear, a
    trinomial over kept positive/negative coordinates for slopes in (0,1)),
    with a q^-s prefactor from the 1/q rescaling of survivors.

Everything is assembled in log space; exact-zero mixture cells (no
coordinate survives, or the all-negative orthant under ReLU) carry no mass.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special as sp

from .specfn import (
    DEFAULT_BUDGET,
    BudgetExceeded,
    EvalBudget,
    log_binomial_pmf,
    log_trinomial_pmf,
)
from . import series


class Unsupported(ValueError):
    """No formula applies to the requested parameter combination."""


class NoConvergence(RuntimeError):
    """Root bracketing or bisection failed within its budget."""


# ---------------------------------------------------------------------------
# domain types

@dataclass(frozen=True)
class ParamReLU:
    """Piecewise-linear activation with negative-side slope a in [0, 1]."""

    a: float

    def __post_init__(self):
        if not (0.0 <= self.a <= 1.0):
            raise ValueError(f"slope must lie in [0, 1], got {self.a}")


@dataclass(frozen=True)
class RandomizedLeaky:
    """Negative-side slope drawn uniformly from [lo, hi] per layer draw."""

    lo: float = 0.125
    hi: float = 1.0 / 3.0

    def __post_init__(self):
        if not (0.0 <= self.lo < self.hi <= 1.0):
            raise ValueError(f"need 0 <= lo < hi <= 1, got ({self.lo}, {self.hi})")


Activation = ParamReLU | RandomizedLeaky

RELU = ParamReLU(0.0)
LINEAR = ParamReLU(1.0)
LEAKY = ParamReLU(0.01)


@dataclass(frozen=True)
class MomentQuery:
    """One kernel evaluation: width, moment order, activation, keep prob."""

    d: int
    s: float
    activation: Activation = RELU
    q: float = 1.0
    budget: EvalBudget = DEFAULT_BUDGET

    def __post_init__(self):
        if self.d < 1:
            raise ValueError(f"width must be >= 1, got {self.d}")
        if not (0.0 < self.s <= 8.0):
            raise ValueError(f"moment order must be in (0, 8], got {self.s}")
        if not (0.0 < self.q <= 1.0):
            raise ValueError(f"keep probability must be in (0, 1], got {self.q}")


@dataclass(frozen=True)
class KernelValue:
    log_I: float
    terms_used: int
    tail_bound: float

    @property
    def I(self) -> float:
        return math.exp(self.log_I) if self.log_I < 709.0 else math.inf


@dataclass(frozen=True)
class RegimeVerdict:
    """Behavior of the probed moment plus the preserved order, if any."""

    regime: str           # "preserving" | "contracting" | "exploding"
    s_probe: float
    ratio: float          # sigma^s I(s, d)
    s_star: float | None  # order whose moment this sigma preserves
    mu: float | None      # log-norm drift per layer (None when no formula)


# ---------------------------------------------------------------------------
# kernels

def _relu_sum_log(d: int, s: float, log_weights: np.ndarray, n: np.ndarray) -> float:
    """log sum_n weight_n 2^(s/2) Gamma(n/2+s/2)/Gamma(n/2) over n >= 1."""
    lg = (s / 2) * math.log(2) + sp.gammaln(n / 2 + s / 2) - sp.gammaln(n / 2)
    return float(sp.logsumexp(log_weights + lg))


def relu_kernel(query: MomentQuery) -> KernelValue:
    """Kernel for ReLU without dropout: binomial mixture of chi-square moments.

    The all-negative orthant (n = 0) maps to the zero vector and carries no
    mass.  Finite sum; valid for any s in (0, 8].
    """
    act = query.activation
    if not isinstance(act, ParamReLU) or act.a != 0.0 or query.q != 1.0:
        raise ValueError("relu_kernel needs ParamReLU(0) and q = 1")
    d, s = query.d, query.s
    if s == 2.0:
        return KernelValue(log_I=math.log(d / 2), terms_used=d, tail_bound=0.0)
    n = np.arange(1, d + 1, dtype=float)
    lw = log_binomial_pmf(d, n, 0.5)
    return KernelValue(log_I=_relu_sum_log(d, s, lw, n), terms_used=d, tail_bound=0.0)


def dropout_relu_kernel(query: MomentQuery) -> KernelValue:
    """ReLU kernel with dropout: kept-positive coordinates are Binomial(d, q/2).

    Reduces bit-for-bit to relu_kernel at q = 1.
    """
    act = query.activation
    if not isinstance(act, ParamReLU) or act.a != 0.0:
        raise ValueError("dropout_relu_kernel needs ParamReLU(0)")
    d, s, q = query.d, query.s, query.q
    if s == 2.0:
        return KernelValue(log_I=math.log(d / (2 * q)), terms_used=d, tail_bound=0.0)
    n = np.arange(1, d + 1, dtype=float)
    lw = log_binomial_pmf(d, n, q / 2)
    return KernelValue(log_I=_relu_sum_log(d, s, lw, n) - s * math.log(q), terms_used=d, tail_bound=0.0)


def linear_kernel(s: float, d: int) -> KernelValue:
    """Closed-form kernel for the linear activation: 2^(s/2) Gamma-ratio."""
    if s <= 0 or d < 1:
        raise ValueError(f"need s > 0 and d >= 1, got s={s}, d={d}")
    if s == 2.0:
        return KernelValue(log_I=math.log(float(d)), terms_used=1, tail_bound=0.0)
    log_i = (s / 2) * math.log(2) + sp.gammaln(d / 2 + s / 2) - sp.gammaln(d / 2)
    return KernelValue(log_I=float(log_i), terms_used=1, tail_bound=0.0)


def _dropout_linear_kernel(query: MomentQuery) -> KernelValue:
    """Linear activation with dropout: binomial over the kept-coordinate count."""
    d, s, q = query.d, query.s, query.q
    if q == 1.0:
        return linear_kernel(s, d)
    if s == 2.0:
        return KernelValue(log_I=math.log(d / q), terms_used=d, tail_bound=0.0)
    t = np.arange(1, d + 1, dtype=float)
    lw = log_binomial_pmf(d, t, q)
    lg = (s / 2) * math.log(2) + sp.gammaln(t / 2 + s / 2) - sp.gammaln(t / 2)
    return KernelValue(
        log_I=float(sp.logsumexp(lw + lg)) - s * math.log(q), terms_used=d, tail_bound=0.0
    )


def _assemble(d: int, row, log_weights: np.ndarray) -> KernelValue:
    """Mix per-orthant moment rows; aggregates terms and the certified tail."""
    logs = np.empty(d + 1)
    abs_tails = np.full(d + 1, -np.inf)
    terms = 0
    for i in range(d + 1):
        lm, t, tr = row(i, float(log_weights[i]))
        logs[i] = log_weights[i] + lm
        if tr > 0:
            abs_tails[i] = logs[i] + math.log(tr)
        terms += t
    log_i = float(sp.logsumexp(logs))
    tail = float(math.exp(min(sp.logsumexp(abs_tails) - log_i, 700.0)))
    return KernelValue(log_I=log_i, terms_used=terms, tail_bound=tail)


def prelu_kernel(query: MomentQuery) -> KernelValue:
    """Kernel for slope a in (0, 1) without dropout.

    Series representation for s in (0, 2); exact (1+a^2) d/2 at s = 2;
    Beta-mixture quadrature for s in (2, 8] where the series does not apply.
    """
    act = query.activation
    if not isinstance(act, ParamReLU) or not (0.0 < act.a < 1.0) or query.q != 1.0:
        raise ValueError("prelu_kernel needs ParamReLU(a) with a in (0,1) and q = 1")
    d, s, a = query.d, query.s, act.a
    if s == 2.0:
        return KernelValue(log_I=math.log((1 + a * a) * d / 2), terms_used=d, tail_bound=0.0)
    if s > 2.0:
        n = np.arange(0, d + 1)
        lw = log_binomial_pmf(d, n.astype(float), 0.5)
        logs = [lw[i] + series.chi2_mixture_log_moment_quad(int(ni), d - int(ni), a, s)
                for i, ni in enumerate(n)]
        return KernelValue(log_I=float(sp.logsumexp(np.asarray(logs))), terms_used=0, tail_bound=0.0)
    # I_a >= I_0, so rel_tol/2 * I_0 is a safe absolute tail allowance to
    # spread over the orthant cells (negligible-mass cells then converge
    # immediately); the cells' own relative certificates cover the rest.
    floor_total = math.log(query.budget.rel_tol / 2) + relu_kernel(
        MomentQuery(d=d, s=s, budget=query.budget)
    ).log_I - math.log(d + 1)
    row_budget = EvalBudget(rel_tol=query.budget.rel_tol / 2, max_terms=query.budget.max_terms)

    def row(i: int, lw_i: float):
        return series.chi2_mixture_log_moment(i, d - i, a, s, row_budget,
                                              tail_floor_log=floor_total - lw_i)

    return _assemble(d, row, log_binomial_pmf(d, np.arange(d + 1, dtype=float), 0.5))


def randomized_leaky_kernel(query: MomentQuery) -> KernelValue:
    """Kernel for the randomized slope a ~ Uniform[lo, hi] (no dropout).

    The slope only enters the series weights linearly, so replacing the
    weights by their slope expectation gives the exact layer kernel.
    """
    act = query.activation
    if not isinstance(act, RandomizedLeaky) or query.q != 1.0:
        raise ValueError("randomized_leaky_kernel needs RandomizedLeaky and q = 1")
    d, s, lo, hi = query.d, query.s, act.lo, act.hi
    if s == 2.0:
        ea2 = (hi**3 - lo**3) / (3 * (hi - lo))
        return KernelValue(log_I=math.log((1 + ea2) * d / 2), terms_used=d, tail_bound=0.0)
    lw = log_binomial_pmf(d, np.arange(d + 1, dtype=float), 0.5)
    if s > 2.0:
        logs = [lw[i] + series.chi2_mixture_log_moment_uniform_slope_quad(i, d - i, lo, hi, s)
                for i in range(d + 1)]
        return KernelValue(log_I=float(sp.logsumexp(np.asarray(logs))), terms_used=0, tail_bound=0.0)
    floor_total = math.log(query.budget.rel_tol / 2) + relu_kernel(
        MomentQuery(d=d, s=s, budget=query.budget)
    ).log_I - math.log(d + 1)
    row_budget = EvalBudget(rel_tol=query.budget.rel_tol / 2, max_terms=query.budget.max_terms)

    def row(i: int, lw_i: float):
        return series.chi2_mixture_log_moment_uniform_slope(
            i, d - i, lo, hi, s, row_budget, tail_floor_log=floor_total - lw_i
        )

    return _assemble(d, row, lw)


def dropout_prelu_kernel(query: MomentQuery) -> KernelValue:
    """Kernel for slope a in (0, 1] with dropout.

    Kept positive/negative coordinate counts (n, m) follow a trinomial with
    cells (q/2, q/2, 1-q); each cell contributes the chi-square mixture
    moment at effective width n + m.  At a = 1 this collapses to a binomial
    over t = n + m, which is evaluated directly.
    """
    act = query.activation
    if not isinstance(act, ParamReLU) or act.a == 0.0:
        raise ValueError("dropout_prelu_kernel needs ParamReLU(a) with a in (0, 1]")
    d, s, a, q = query.d, query.s, act.a, query.q
    if a == 1.0:
        return _dropout_linear_kernel(query)
    if s == 2.0:
        # trinomial expectation of (n + a^2 m)/q^2 with E n = E m = d q / 2
        return KernelValue(log_I=math.log((1 + a * a) * d / (2 * q)), terms_used=d, tail_bound=0.0)
    if q == 1.0:
        return prelu_kernel(query)
    # I_{a,q} >= I_{0,q}: the dropout-ReLU kernel (without its q^-s factor)
    # floors the absolute tail allowance over the trinomial cells
    ncells = (d + 1) * (d + 2) // 2
    floor_total = (
        math.log(query.budget.rel_tol / 2)
        + dropout_relu_kernel(MomentQuery(d=d, s=s, q=q, budget=query.budget)).log_I
        + s * math.log(q)
        - math.log(ncells)
    )
    row_budget = EvalBudget(rel_tol=query.budget.rel_tol / 2, max_terms=query.budget.max_terms)
    logs = []
    abs_tails = []
    terms = 0
    for n in range(0, d + 1):
        for m in range(0, d - n + 1):
            if n == 0 and m == 0:
                continue
            lw = float(log_trinomial_pmf(d, n, m, q / 2, q / 2))
            if s < 2.0:
                lm, t, tr = series.chi2_mixture_log_moment(
                    n, m, a, s, row_budget, tail_floor_log=floor_total - lw
                )
            else:
                lm, t, tr = series.chi2_mixture_log_moment_quad(n, m, a, s), 0, 0.0
            logs.append(lw + lm)
            if tr > 0:
                abs_tails.append(lw + lm + math.log(tr))
            terms += t
    log_i = float(sp.logsumexp(np.asarray(logs)))
    tail = float(math.exp(min(sp.logsumexp(np.asarray(abs_tails)) - log_i, 700.0))) if abs_tails else 0.0
    return KernelValue(log_I=log_i - s * math.log(q), terms_used=terms, tail_bound=tail)


def kernel(query: MomentQuery) -> KernelValue:
    """Dispatch to the applicable kernel family."""
    act = query.activation
    if isinstance(act, RandomizedLeaky):
        if query.q != 1.0:
            raise Unsupported("randomized leaky slope with dropout has no kernel formula")
        return randomized_leaky_kernel(query)
    if act.a == 0.0:
        return relu_kernel(query) if query.q == 1.0 else dropout_relu_kernel(query)
    if act.a == 1.0:
        return linear_kernel(query.s, query.d) if query.q == 1.0 else _dropout_linear_kernel(query)
    return prelu_kernel(query) if query.q == 1.0 else dropout_prelu_kernel(query)


# ---------------------------------------------------------------------------
# critical variance and friends

def critical_sigma(query: MomentQuery) -> tuple[float, float]:
    """(sigma_bar, sigma_bar^2): the weight std dev preserving the s-th moment."""
    kv = kernel(query)
    sigma = math.exp(-kv.log_I / query.s)
    return sigma, math.exp(-2 * kv.log_I / query.s)


def asymptotic_sigma_sq(s: float, d: int, a: float = 0.0, q: float = 1.0) -> float:
    """Large-width closed-form approximations of the critical variance.

    Selection rule: exact-slope endpoints a = 0 and a = 1 have dropout-aware
    expansions; small slopes (0 < a <= 0.1) use the second-order slope
    expansion, available only without dropout.  Anything else has no
    published formula and raises Unsupported.
    """
    if not (0.0 < s <= 2.0) or d < 2 or not (0.0 < q <= 1.0):
        raise ValueError(f"need s in (0,2], d >= 2, q in (0,1]; got s={s}, d={d}, q={q}")
    if a == 0.0:
        return 2 * q / d + (2 - s) * (6 - q) / (2 * d * d)
    if a == 1.0:
        return q / d + (3 - q) * (2 - s) / (4 * d * d)
    if 0.0 < a <= 0.1 and q == 1.0:
        a2 = a * a
        lead = (2 / (1 + a2)) / d
        corr = (5 - (12 - 2.5 * s) * a2) / (2 + (s + 2) * a2)
        return lead + corr * (2 - s) / (d * d)
    raise Unsupported(
        f"no closed-form variance approximation for a={a}, q={q}; use the exact kernel"
    )


def solve_preserved_order(
    sigma: float,
    d: int,
    activation: Activation = RELU,
    q: float = 1.0,
    budget: EvalBudget = DEFAULT_BUDGET,
    s_max: float = 8.0,
    s_tol: float = 1e-9,
) -> float | None:
    """Order s* > 0 whose moment the given sigma preserves, or None.

    kappa(s) = sigma^s I(s, d) is log-convex with kappa(0+) <= 1; when it
    dips below one it crosses back at the unique preserved order.  The
    search brackets on (1e-6, s_max] by halving, then bisects.

    A nonnegative drift (kappa'(0) >= 0) means no dip and returns None; for
    ReLU this guard also suppresses the degenerate near-zero root that the
    2^-d zero-output mass creates when sigma is super-critical.
    """
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    def log_kappa(s: float) -> float:
        kv = kernel(MomentQuery(d=d, s=s, activation=activation, q=q, budget=budget))
        return s * math.log(sigma) + kv.log_I

    if isinstance(activation, ParamReLU) and q == 1.0:
        from . import lyapunov

        if activation.a == 0.0:
            drift = lyapunov.relu_log_stats(sigma, d).mu
        else:
            drift = lyapunov.prelu_log_stats(sigma, d, activation.a, budget).mu
    else:
        # no closed drift formula (dropout / randomized slope): a two-point
        # slope of log kappa cancels the zero-mass offset at s = 0+
        h = 1e-4
        drift = (log_kappa(2 * h) - log_kappa(h)) / h
    if drift >= 0.0:
        return None

    s_lo = None
    s_hi = None
    s_grid = s_max
    while s_grid >= 1e-6:
        lk = log_kappa(s_grid)
        if abs(lk) <= s_tol:
            return s_grid
        if lk < 0.0:
            s_lo = s_grid
            break
        s_hi = s_grid
        s_grid /= 2.0
    if s_lo is None:
        return None  # kappa >= 1 down to 1e-6: no preserved order in range
    if s_hi is None:
        return None  # kappa < 1 at s_max: the crossing lies beyond the bracket cap
    for _ in range(200):
        mid = 0.5 * (s_lo + s_hi)
        if s_hi - s_lo <= s_tol * max(1.0, mid):
            return mid
        if log_kappa(mid) < 0.0:
            s_lo = mid
        else:
            s_hi = mid
    raise NoConvergence(f"bisection stalled on [{s_lo}, {s_hi}]")


def classify_regime(
    sigma: float,
    query: MomentQuery,
    tol: float = 1e-9,
) -> RegimeVerdict:
    """Contracting / preserving / exploding verdict for the probed order.

    Also attaches the preserved order s* for this sigma (if one exists in
    the bracket) and the log-norm drift per layer when a formula applies
    (full-keep networks only).
    """
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    kv = kernel(query)
    log_ratio = query.s * math.log(sigma) + kv.log_I
    ratio = math.exp(log_ratio)
    if abs(ratio - 1.0) <= tol:
        regime = "preserving"
    elif ratio < 1.0:
        regime = "contracting"
    else:
        regime = "exploding"
    s_star = solve_preserved_order(sigma, query.d, query.activation, query.q, query.budget)
    mu = None
    if query.q == 1.0 and isinstance(query.activation, ParamReLU):
        from . import lyapunov

        a = query.activation.a
        if a == 0.0:
            mu = lyapunov.relu_log_stats(sigma, query.d).mu
        else:
            mu = lyapunov.prelu_log_stats(sigma, query.d, a, query.budget).mu
    return RegimeVerdict(regime=regime, s_probe=query.s, ratio=ratio, s_star=s_star, mu=mu)


def moment_trajectory(
    widths: list[int],
    s: float,
    sigma: float,
    activation: Activation = RELU,
    q: float = 1.0,
    budget: EvalBudget = DEFAULT_BUDGET,
) -> list[float]:
    """Predicted E[(|x_k|/|x_0|)^s] after each layer, widths[j] = fan-out of layer j+1."""
    if not widths:
        raise ValueError("widths must be nonempty")
    out = []
    log_cum = 0.0
    for d in widths:
        kv = kernel(MomentQuery(d=int(d), s=s, activation=activation, q=q, budget=budget))
        log_cum += s * math.log(sigma) + kv.log_I
        out.append(math.exp(log_cum) if log_cum < 709.0 else math.inf)
    return out


def conv_effective_width(m: int, c: int) -> int:
    """Fan-in of a convolutional layer: filter size m x m over c channels."""
    if m < 1 or c < 1:
        raise ValueError(f"need m >= 1 and c >= 1, got m={m}, c={c}")
    return m * m * c
