"""Log-norm drift and CLT variance of deep-layer outputs.

Per layer, log |x| gains an i.i.d. increment log(sigma) + (1/2) log |phi(z)|^2
with z standard normal; |phi(z)|^2 is a chi-square mixture over sign
orthants.  The per-layer mean mu and variance s2 of that increment drive
the almost-sure limit (sign of mu) and the Gaussian limit of
(log|x_k| - mu k)/sqrt(k).

For ReLU the statistics condition on the output being nonzero (binomial
orthant weights renormalized over n >= 1); for positive slopes the output
is never zero and the plain binomial weights apply.  The two conventions
do not interpolate as the slope tends to zero; both are exposed as stated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special as sp

from .specfn import DEFAULT_BUDGET, EvalBudget, log_binomial_coeff
from .kernels import Activation, ParamReLU, RandomizedLeaky, solve_preserved_order
from . import series


@dataclass(frozen=True)
class LogNormStats:
    """Per-layer drift (nats) and CLT variance (nats^2) of log |x_k|."""

    mu: float
    s2: float
    conditional_on_nonzero: bool


@dataclass(frozen=True)
class AsLimitVerdict:
    kind: str                 # "zero_almost_sure" | "zero_limit" | "infinity_limit" | "critical"
    mu: float | None
    s_star: float | None
    note: str = ""


def mixture_variance(weights, means, variances) -> float:
    """Variance of a mixture: sum p_i v_i + sum p_i m_i^2 - (sum p_i m_i)^2."""
    w = np.asarray(weights, dtype=float)
    m = np.asarray(means, dtype=float)
    v = np.asarray(variances, dtype=float)
    if not (w.shape == m.shape == v.shape):
        raise ValueError("weights, means, variances must have equal lengths")
    if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
        raise ValueError("weights must be nonnegative and sum to 1 within 1e-12")
    mbar = float(w @ m)
    return float(w @ v + w @ (m * m) - mbar * mbar)


def zero_output_probability(d: int, k: int) -> float:
    """P(layer-k ReLU output is exactly zero) = 1 - (1 - 2^-d)^k.

    Independent of the weight scale.  Evaluated via log1p/expm1 so the
    tiny-d^-1 and large-d regimes are both exact.
    """
    if d < 1 or k < 0:
        raise ValueError(f"need d >= 1 and k >= 0, got d={d}, k={k}")
    if k == 0:
        return 0.0
    log_per_layer_survive = math.log1p(-math.exp(-d * math.log(2)))
    return -math.expm1(k * log_per_layer_survive)


def relu_log_stats(sigma: float, d: int) -> LogNormStats:
    """Drift and CLT variance for ReLU, conditional on a nonzero output.

    The orthant count n is binomial conditioned on n >= 1; each chi2(n)
    contributes log-mean log 2 + psi0(n/2) and log-variance psi1(n/2).
    """
    if sigma <= 0 or d < 1:
        raise ValueError(f"need sigma > 0 and d >= 1, got sigma={sigma}, d={d}")
    n = np.arange(1, d + 1, dtype=float)
    log_w = log_binomial_coeff(d, n) - (d * math.log(2) + math.log1p(-math.exp(-d * math.log(2))))
    w = np.exp(log_w)
    w /= w.sum()
    means = math.log(2) + sp.digamma(n / 2)
    variances = sp.polygamma(1, n / 2)
    mu = math.log(sigma) + 0.5 * float(w @ means)
    s2 = 0.25 * mixture_variance(w, means, variances)
    return LogNormStats(mu=mu, s2=s2, conditional_on_nonzero=True)


def mn_series(n: int, d: int, a: float, budget: EvalBudget = DEFAULT_BUDGET) -> float:
    """E[log(chi2(n) + a^2 chi2(d-n))]: the orthant log-mean for slope a in (0,1]."""
    if not (0 <= n <= d):
        raise ValueError(f"need 0 <= n <= d, got n={n}, d={d}")
    mean, _, _, _ = series.chi2_mixture_log_stats(n, d - n, a, budget)
    return mean


def vn_series(n: int, d: int, a: float, budget: EvalBudget = DEFAULT_BUDGET) -> float:
    """var[log(chi2(n) + a^2 chi2(d-n))]: the orthant log-variance for slope a in (0,1]."""
    if not (0 <= n <= d):
        raise ValueError(f"need 0 <= n <= d, got n={n}, d={d}")
    _, var, _, _ = series.chi2_mixture_log_stats(n, d - n, a, budget)
    return var


def prelu_log_stats(sigma: float, d: int, a: float, budget: EvalBudget = DEFAULT_BUDGET) -> LogNormStats:
    """Drift and CLT variance for slope a in (0, 1] (unconditional weights)."""
    if sigma <= 0 or d < 1:
        raise ValueError(f"need sigma > 0 and d >= 1, got sigma={sigma}, d={d}")
    if not (0.0 < a <= 1.0):
        raise ValueError(f"slope must be in (0, 1], got {a}")
    n = np.arange(0, d + 1, dtype=float)
    w = np.exp(log_binomial_coeff(d, n) - d * math.log(2))
    w /= w.sum()
    means = np.empty(d + 1)
    variances = np.empty(d + 1)
    for i in range(d + 1):
        # negligible-mass orthants may carry a loose absolute error; their
        # weighted contribution stays below rel_tol/(d+1)
        err_tol = budget.rel_tol / min(1.0, (d + 1) * w[i])
        means[i], variances[i], _, _ = series.chi2_mixture_log_stats(i, d - i, a, budget, err_tol)
    mu = math.log(sigma) + 0.5 * float(w @ means)
    s2 = 0.25 * mixture_variance(w, means, variances)
    return LogNormStats(mu=mu, s2=s2, conditional_on_nonzero=False)


def as_limit(
    sigma: float,
    d: int,
    activation: Activation,
    q: float = 1.0,
    budget: EvalBudget = DEFAULT_BUDGET,
    mu_tol: float = 1e-10,
) -> AsLimitVerdict:
    """Almost-sure / L_p limit classification of the layer outputs.

    ReLU outputs hit an absorbing zero orthant, so the a.s. limit is zero
    for every sigma; the same absorption argument applies whenever dropout
    can remove all coordinates (q < 1).  For positive slopes with full
    keep, the sign of the drift decides between a zero and an infinite
    limit; the mu = 0 boundary is reported as critical, not classified.
    """
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    if isinstance(activation, ParamReLU) and activation.a == 0.0:
        return AsLimitVerdict(
            kind="zero_almost_sure",
            mu=relu_log_stats(sigma, d).mu,
            s_star=solve_preserved_order(sigma, d, activation, q, budget),
            note="zero-output probability tends to one regardless of sigma",
        )
    if q < 1.0:
        return AsLimitVerdict(
            kind="zero_almost_sure",
            mu=None,
            s_star=solve_preserved_order(sigma, d, activation, q, budget),
            note="dropout can zero every coordinate in a layer, an absorbing event",
        )
    if isinstance(activation, RandomizedLeaky):
        raise NotImplementedError("no log-norm drift formula for the randomized slope")
    mu = prelu_log_stats(sigma, d, activation.a, budget).mu
    if abs(mu) <= mu_tol:
        return AsLimitVerdict(kind="critical", mu=mu, s_star=None,
                              note="drift within tolerance of zero; boundary not classified")
    if mu > 0:
        return AsLimitVerdict(kind="infinity_limit", mu=mu, s_star=None)
    s_star = solve_preserved_order(sigma, d, activation, q, budget)
    if s_star is not None and s_star >= 1.0:
        note = "a.s. convergence to zero"
    else:
        note = "L_p convergence (p below the preserved order) and an a.s. zero subsequence"
    return AsLimitVerdict(kind="zero_limit", mu=mu, s_star=s_star, note=note)
