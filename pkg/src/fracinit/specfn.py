"""Log-space special-function primitives shared by all kernel formulas.

Everything downstream (moment kernels, Lyapunov series, binomial/trinomial
mixture weights) is assembled from log-Gamma, digamma, trigamma, log-Beta
and log binomial masses so that quantities like 2^-d never underflow.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special as sp


@dataclass(frozen=True)
class EvalBudget:
    """Truncation policy for the infinite series in the kernel formulas.

    rel_tol is the certified relative mass allowed in a truncated tail;
    max_terms caps any single series.
    """

    rel_tol: float = 1e-12
    max_terms: int = 10_000

    def __post_init__(self):
        if not (0.0 < self.rel_tol < 1e-3):
            raise ValueError(f"rel_tol must be in (0, 1e-3), got {self.rel_tol}")
        if self.max_terms < 1:
            raise ValueError(f"max_terms must be >= 1, got {self.max_terms}")


DEFAULT_BUDGET = EvalBudget()


class BudgetExceeded(RuntimeError):
    """A series could not be certified to rel_tol within max_terms."""


def _check_positive(name: str, x) -> None:
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)) or np.any(x <= 0.0):
        raise ValueError(f"{name} must be positive and finite, got {x}")


def log_gamma(x: float) -> float:
    """ln Gamma(x) for x > 0."""
    _check_positive("x", x)
    return sp.gammaln(x)


def digamma(x: float) -> float:
    """psi_0(x) = d/dx ln Gamma(x) for x > 0."""
    _check_positive("x", x)
    return sp.digamma(x)


def trigamma(x: float) -> float:
    """psi_1(x) = d/dx psi_0(x) for x > 0."""
    _check_positive("x", x)
    return sp.polygamma(1, np.asarray(x, dtype=float))[()]


def log_beta(x: float, y: float) -> float:
    """ln B(x, y) = ln Gamma(x) + ln Gamma(y) - ln Gamma(x+y) for x, y > 0."""
    _check_positive("x", x)
    _check_positive("y", y)
    return sp.gammaln(x) + sp.gammaln(y) - sp.gammaln(np.asarray(x) + np.asarray(y))


def gen_binomial(r: float, k: int) -> float:
    """Binomial coefficient C(r, k) for real r, computed by the product form.

    The product r(r-1)...(r-k+1)/k! is exact at the Gamma-function poles:
    C(k-1, k) = 0 for k >= 1, which the Gamma-ratio form cannot express.
    """
    if not np.isfinite(r):
        raise ValueError(f"r must be finite, got {r}")
    k = int(k)
    if k < 0:
        raise ValueError(f"k must be a nonnegative integer, got {k}")
    out = 1.0
    for i in range(k):
        out *= (r - i) / (i + 1)
    return out


def log_binomial_coeff(d: int, n) -> np.ndarray:
    """ln C(d, n) for integer 0 <= n <= d, vectorized over n."""
    n = np.asarray(n, dtype=float)
    return sp.gammaln(d + 1) - sp.gammaln(n + 1) - sp.gammaln(d - n + 1)


def log_binomial_pmf(d: int, n, p: float) -> np.ndarray:
    """ln[ C(d,n) p^n (1-p)^(d-n) ], safe for d up to 2^16.

    Vectorized over n.  p must lie strictly inside (0, 1).
    """
    d = int(d)
    if d < 1:
        raise ValueError(f"d must be a positive integer, got {d}")
    narr = np.asarray(n)
    if np.any(narr < 0) or np.any(narr > d):
        raise ValueError(f"n must satisfy 0 <= n <= d={d}, got {n}")
    if not (0.0 < p < 1.0):
        raise ValueError(f"p must be in (0, 1), got {p}")
    narr = narr.astype(float)
    return log_binomial_coeff(d, narr) + narr * math.log(p) + (d - narr) * math.log1p(-p)


def log_trinomial_pmf(d: int, n, m, p1: float, p2: float) -> np.ndarray:
    """ln[ d!/(n! m! (d-n-m)!) p1^n p2^m (1-p1-p2)^(d-n-m) ].

    Vectorized over (n, m); the third category may have probability zero,
    in which case only cells with n + m = d carry mass.
    """
    d = int(d)
    narr = np.asarray(n, dtype=float)
    marr = np.asarray(m, dtype=float)
    rest = d - narr - marr
    if np.any(narr < 0) or np.any(marr < 0) or np.any(rest < 0):
        raise ValueError("need n >= 0, m >= 0, n + m <= d")
    p3 = 1.0 - p1 - p2
    if p1 <= 0.0 or p2 <= 0.0 or p3 < -1e-15:
        raise ValueError(f"invalid cell probabilities ({p1}, {p2}, {p3})")
    log_coeff = sp.gammaln(d + 1) - sp.gammaln(narr + 1) - sp.gammaln(marr + 1) - sp.gammaln(rest + 1)
    # xlogy(0, 0) = 0 keeps the degenerate p3 = 0, rest = 0 cells finite
    return log_coeff + narr * math.log(p1) + marr * math.log(p2) + sp.xlogy(rest, max(p3, 0.0))


def logsumexp(log_terms: np.ndarray) -> float:
    """ln sum(exp(log_terms)) of nonnegative mass given in log space."""
    return float(sp.logsumexp(log_terms))
