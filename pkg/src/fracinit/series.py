"""Certified evaluation of chi-square-mixture moment series.

The quantity at the center of every kernel with a nonzero negative-side
slope is

    E[(Y + a^2 Z)^(s/2)],   Y ~ chi2(n),  Z ~ chi2(m)  independent,

expanded as a Beta-function series over k with weights

    w_k = (1/2) (1-a^2)^k [ C(m/2+k-1, k) n  +  a^2 m C(m/2+k, k) ],

term_k = w_k * B(k+1-s/2, (n+m)/2+s/2).  This module sums such series in
log space with *certified* truncation tails, so every returned value
carries a rigorous bound on the discarded mass:

  * geometric envelope: successive term ratios are bounded by (1-a^2);
  * polynomial envelope: the ratio of part-1 terms (the C(m/2+k-1,k)n
    part) is bounded by 1 - (1+n/2)/(k+1+D/2) and of part-2 terms by
    1 - (n+s)/2/(k+1+D/2), giving the closed tail sum
    sum_{j>K} t_j <= t_K (K+1+D/2-c)/(c-1) whenever c > 1;
  * a closed-form bound on the entire remaining part-2 mass for the
    slowly-converging cases (n+s <= 2 with a small slope), built from
    log-Gamma convexity and an incomplete-Gamma integral bound.

The same weight stream also yields the log-moment statistics
E[ln(Y + a^2 Z)] and var[ln(Y + a^2 Z)] (digamma/trigamma weighted sums)
and the uniform-slope variants where a ~ Uniform[lo, hi] replaces the
fixed slope (weights w_k are linear in (1-a^2)^k and a^2(1-a^2)^k, so
taking expectations inside the sum is exact).
"""

from __future__ import annotations

import math

import numpy as np
from scipy import special as sp

from .specfn import BudgetExceeded, EvalBudget, DEFAULT_BUDGET

LOG_HALF = math.log(0.5)
EULER_GAMMA = float(np.euler_gamma)

_CHUNK0 = 256
_CHUNK_MAX = 262_144


def _closed_log_moment(n: int, m: int, a: float, s: float):
    """Closed forms where the series degenerates; None if a real series is needed."""
    if n == 0 and m == 0:
        return -math.inf
    if m == 0:
        return (s / 2) * math.log(2) + sp.gammaln(n / 2 + s / 2) - sp.gammaln(n / 2)
    if n == 0:
        if a == 0.0:
            return -math.inf
        return s * math.log(a) + (s / 2) * math.log(2) + sp.gammaln(m / 2 + s / 2) - sp.gammaln(m / 2)
    if a == 0.0:
        return (s / 2) * math.log(2) + sp.gammaln(n / 2 + s / 2) - sp.gammaln(n / 2)
    if a == 1.0:
        D = n + m
        return (s / 2) * math.log(2) + sp.gammaln(D / 2 + s / 2) - sp.gammaln(D / 2)
    return None


def _log_series_parts(n: int, m: int, s: float, k: np.ndarray):
    """Log of the a-independent factors of the two term parts.

    part1_k = 0.5 n C(m/2+k-1, k) B(k+1-s/2, D/2+s/2)
    part2_k = 0.5 m C(m/2+k, k)   B(k+1-s/2, D/2+s/2)
    (the slope factors (1-a^2)^k and a^2 (1-a^2)^k are applied by callers)
    """
    D = n + m
    lbeta = sp.gammaln(k + 1 - s / 2) + sp.gammaln(D / 2 + s / 2) - sp.gammaln(k + 1 + D / 2)
    lgA = sp.gammaln(m / 2 + k) - sp.gammaln(k + 1) - sp.gammaln(m / 2)
    lgB = sp.gammaln(m / 2 + k + 1) - sp.gammaln(k + 1) - sp.gammaln(m / 2 + 1)
    lp1 = LOG_HALF + math.log(n) + lgA + lbeta if n > 0 else np.full_like(lbeta, -np.inf)
    lp2 = LOG_HALF + math.log(m) + lgB + lbeta
    return lp1, lp2


def _log_part2_whole_mass(n: int, m: int, a_sq: float, s: float, k_next: int) -> float:
    """Certified log upper bound on sum_{k >= k_next} of the part-2 terms.

    Valid for c2 = (n+s)/2 <= 1 (where the polynomial envelope fails).
    Uses C(m/2+k,k) B(k+1-s/2, D/2+s/2) <= C* (k+1)^(-c2) from log-Gamma
    convexity, then bounds the remaining sum by an incomplete-Gamma
    integral.
    """
    D = n + m
    c2 = (n + s) / 2
    if c2 > 1.0 or a_sq >= 1.0:
        return -math.inf if a_sq >= 1.0 else math.inf
    log_cstar = (
        sp.gammaln(D / 2 + s / 2)
        - sp.gammaln(m / 2 + 1)
        + n / 2
        + (s / 2) * math.log(1 / (1 - s / 2))
        + (s / 2) / (1 - s / 2)
    )
    L = -math.log1p(-a_sq)
    z = (k_next) * L if k_next > 0 else 0.0
    if c2 < 1.0:
        # sum_{k>=k_next} x^k (k+1)^(-c2) <= (1/x) L^(c2-1) Gamma(1-c2, z)
        log_R = -math.log1p(-a_sq) + (c2 - 1) * math.log(L) + sp.gammaln(1 - c2) + math.log(
            max(sp.gammaincc(1 - c2, z), 1e-320)
        )
    else:  # c2 == 1
        log_R = -math.log1p(-a_sq) + math.log(max(sp.exp1(z), 1e-320)) if z > 0 else math.log(max(sp.exp1(L), 1e-320)) - math.log1p(-a_sq)
    return LOG_HALF + math.log(m) + math.log(a_sq) + log_cstar + log_R


def chi2_mixture_log_moment(
    n: int,
    m: int,
    a: float,
    s: float,
    budget: EvalBudget = DEFAULT_BUDGET,
    tail_floor_log: float = -math.inf,
):
    """log E[(chi2(n) + a^2 chi2(m))^(s/2)] with certified truncation.

    Requires s in (0, 2); use chi2_mixture_log_moment_quad beyond.
    tail_floor_log, when finite, is a log absolute tail allowance on the
    moment scale - callers mixing many of these series weight it by the
    mixing mass so negligible mixture cells converge instantly.
    Returns (log_moment, terms_used, tail_rel).
    """
    if not (0.0 < s < 2.0):
        raise ValueError(f"series form needs s in (0, 2), got {s}")
    closed = _closed_log_moment(n, m, a, s)
    if closed is not None:
        return closed, 1, 0.0
    D = n + m
    a_sq = a * a
    log_om = math.log1p(-a_sq)
    log_a2 = math.log(a_sq)
    c1 = 1 + n / 2
    c2 = (n + s) / 2
    geo_log = log_om - log_a2  # log[(1-a^2)/a^2]
    # allowance transferred from the moment scale to the inner-sum scale
    floor_inner = tail_floor_log + sp.gammaln(1 - s / 2) - (s / 2) * math.log(2)

    maxlog = -np.inf
    acc = 0.0
    terms = 0
    chunk = _CHUNK0
    k0 = 0
    while k0 < budget.max_terms:
        k1 = min(k0 + chunk, budget.max_terms)
        k = np.arange(k0, k1, dtype=np.float64)
        lp1, lp2 = _log_series_parts(n, m, s, k)
        lt1 = lp1 + k * log_om
        lt2 = lp2 + log_a2 + k * log_om
        lt = np.logaddexp(lt1, lt2)
        mchunk = float(lt.max())
        if mchunk > maxlog:
            acc = acc * math.exp(maxlog - mchunk) + float(np.exp(lt - mchunk).sum())
            maxlog = mchunk
        else:
            acc += float(np.exp(lt - maxlog).sum())
        terms = int(k1)
        log_sum = maxlog + math.log(acc)

        K = k1 - 1
        log_poly1 = math.log((K + 1 + D / 2 - c1) / (c1 - 1))
        log_tail1 = lt1[-1] + min(geo_log, log_poly1)
        cands = [lt2[-1] + geo_log]
        if c2 > 1.0:
            cands.append(lt2[-1] + math.log((K + 1 + D / 2 - c2) / (c2 - 1)))
        else:
            cands.append(_log_part2_whole_mass(n, m, a_sq, s, int(K) + 1))
        log_tail2 = min(cands)
        log_tail = np.logaddexp(log_tail1, log_tail2)
        tail_rel = math.exp(min(log_tail - log_sum, 700.0))
        if log_tail <= max(log_sum + math.log(budget.rel_tol), floor_inner):
            log_moment = log_sum + (s / 2) * math.log(2) - sp.gammaln(1 - s / 2)
            return log_moment, terms, tail_rel
        k0 = k1
        chunk = min(chunk * 4, _CHUNK_MAX)
    raise BudgetExceeded(
        f"chi2 mixture series (n={n}, m={m}, a={a}, s={s}) not certified to "
        f"rel_tol={budget.rel_tol} within {budget.max_terms} terms (tail~{tail_rel:.2e})"
    )


class UniformSlopeMoments:
    """Moments E[(1-a^2)^k], E[a^2(1-a^2)^k], E[a(1-a^2)^k] for a ~ U[lo, hi].

    Computed by exact forward recursions (integration by parts of the
    polynomial integrands); this is the stable equivalent of expanding
    (1-a^2)^k binomially and integrating term by term, which cancels
    catastrophically for large k.
    """

    def __init__(self, lo: float, hi: float):
        if not (0.0 <= lo < hi <= 1.0):
            raise ValueError(f"need 0 <= lo < hi <= 1, got ({lo}, {hi})")
        self.lo = lo
        self.hi = hi
        self._I = [1.0]
        self._M = [(hi**3 - lo**3) / (3 * (hi - lo))]
        self._ghi = 1 - hi * hi
        self._glo = 1 - lo * lo
        self._phk = 1.0  # (1-hi^2)^k at current max k
        self._plk = 1.0

    def _grow(self, upto: int) -> None:
        width = self.hi - self.lo
        k = len(self._I)
        while k <= upto:
            self._phk *= self._ghi
            self._plk *= self._glo
            dk = (self.hi * self._phk - self.lo * self._plk) / width
            self._I.append(max((dk + 2 * k * self._I[k - 1]) / (2 * k + 1), 0.0))
            dk3 = (self.hi**3 * self._phk - self.lo**3 * self._plk) / width
            self._M.append(max((dk3 + 2 * k * self._M[k - 1]) / (2 * k + 3), 0.0))
            k += 1

    def slope_factors(self, k0: int, k1: int):
        """(E[(1-a^2)^k], E[a^2(1-a^2)^k]) for k in [k0, k1)."""
        self._grow(k1 - 1)
        return (
            np.asarray(self._I[k0:k1], dtype=float),
            np.asarray(self._M[k0:k1], dtype=float),
        )

    def linear_slope_factor(self, k: int) -> float:
        """E[a (1-a^2)^k], closed form."""
        kk = k + 1
        return (self._glo**kk - self._ghi**kk) / (2 * kk * (self.hi - self.lo))


def chi2_mixture_log_moment_uniform_slope(
    n: int,
    m: int,
    lo: float,
    hi: float,
    s: float,
    budget: EvalBudget = DEFAULT_BUDGET,
    tail_floor_log: float = -math.inf,
):
    """log E[(chi2(n) + a^2 chi2(m))^(s/2)] with a ~ Uniform[lo, hi].

    The slope expectation enters linearly through the series weights.
    Returns (log_moment, terms_used, tail_rel).
    """
    if not (0.0 < s < 2.0):
        raise ValueError(f"series form needs s in (0, 2), got {s}")
    if n == 0 and m == 0:
        return -math.inf, 0, 0.0
    if m == 0:
        return (s / 2) * math.log(2) + sp.gammaln(n / 2 + s / 2) - sp.gammaln(n / 2), 1, 0.0
    D = n + m
    um = UniformSlopeMoments(lo, hi)
    c1 = 1 + n / 2
    c2 = (n + s) / 2
    c_hat = 1 + (n + s) / 4  # certificate for the E[a(1-a^2)^k]-bounded envelope
    rho = 1 - lo * lo
    geo_log = math.log(rho) - math.log(lo * lo) if lo > 0 else math.inf
    floor_inner = tail_floor_log + sp.gammaln(1 - s / 2) - (s / 2) * math.log(2)

    maxlog = -np.inf
    acc = 0.0
    terms = 0
    chunk = _CHUNK0
    k0 = 0
    while k0 < budget.max_terms:
        k1 = min(k0 + chunk, budget.max_terms)
        k = np.arange(k0, k1, dtype=np.float64)
        lp1, lp2 = _log_series_parts(n, m, s, k)
        fI, fM = um.slope_factors(k0, k1)
        with np.errstate(divide="ignore"):
            lt1 = lp1 + np.log(fI)
            lt2 = lp2 + np.log(fM)
        lt = np.logaddexp(lt1, lt2)
        mchunk = float(lt.max())
        if mchunk > maxlog:
            acc = acc * math.exp(maxlog - mchunk) + float(np.exp(lt - mchunk).sum())
            maxlog = mchunk
        else:
            acc += float(np.exp(lt - maxlog).sum())
        terms = int(k1)
        log_sum = maxlog + math.log(acc)

        K = int(k1 - 1)
        log_tail1 = lt1[-1] + min(geo_log, math.log((K + 1 + D / 2 - c1) / (c1 - 1))) if n > 0 else -math.inf
        cands = [lt2[-1] + geo_log]
        if c2 > 1.0:
            cands.append(lt2[-1] + math.log((K + 1 + D / 2 - c2) / (c2 - 1)))
        # hat envelope: part2_k <= 0.5 m hi E[a(1-a^2)^k] C(m/2+k,k) Beta_k,
        # whose ratio is <= (1-lo^2)(1 - c_hat/(k+1+D/2))
        lt2_hat = lp2[-1] + math.log(hi) + math.log(max(um.linear_slope_factor(K), 1e-320))
        cands.append(lt2_hat + math.log((K + 1 + D / 2 - c_hat) / (c_hat - 1)))
        log_tail2 = min(cands)
        log_tail = np.logaddexp(log_tail1, log_tail2)
        tail_rel = math.exp(min(log_tail - log_sum, 700.0))
        if log_tail <= max(log_sum + math.log(budget.rel_tol), floor_inner):
            log_moment = log_sum + (s / 2) * math.log(2) - sp.gammaln(1 - s / 2)
            return log_moment, terms, tail_rel
        k0 = k1
        chunk = min(chunk * 4, _CHUNK_MAX)
    raise BudgetExceeded(
        f"uniform-slope series (n={n}, m={m}, lo={lo}, hi={hi}, s={s}) not certified to "
        f"rel_tol={budget.rel_tol} within {budget.max_terms} terms (tail~{tail_rel:.2e})"
    )


def chi2_mixture_log_moment_quad(n: int, m: int, a: float, s: float, nodes: int = 64) -> float:
    """log E[(chi2(n) + a^2 chi2(m))^(s/2)] by quadrature; valid for any s > 0.

    Uses the decomposition Y + a^2 Z = T (a^2 + (1-a^2) V) with T ~ chi2(n+m)
    and V ~ Beta(n/2, m/2) independent, then a split Gauss-Jacobi rule that
    resolves the a^2-scale layer near v = 0.
    """
    if s <= 0:
        raise ValueError(f"s must be positive, got {s}")
    closed = _closed_log_moment(n, m, a, s)
    if closed is not None:
        return closed
    D = n + m
    al, be = n / 2, m / 2
    a_sq = a * a

    def f(v):
        return (a_sq + (1 - a_sq) * v) ** (s / 2)

    v0 = min(0.5, max(50 * a_sq, 1e-8))
    x1, w1 = sp.roots_jacobi(nodes, 0.0, al - 1.0)
    t1 = (1 + x1) / 2
    piece1 = v0**al * 0.5**al * float((w1 * (1 - v0 * t1) ** (be - 1) * f(v0 * t1)).sum())
    x2, w2 = sp.roots_jacobi(nodes, be - 1.0, 0.0)
    t2 = (1 + x2) / 2
    v = v0 + (1 - v0) * t2
    piece2 = (1 - v0) ** be * 0.5**be * float((w2 * v ** (al - 1) * f(v)).sum())
    log_e_slope = math.log(piece1 + piece2) - (sp.gammaln(al) + sp.gammaln(be) - sp.gammaln(al + be))
    return log_e_slope + (s / 2) * math.log(2) + sp.gammaln(D / 2 + s / 2) - sp.gammaln(D / 2)


def chi2_mixture_log_moment_uniform_slope_quad(
    n: int, m: int, lo: float, hi: float, s: float, nodes: int = 64, slope_nodes: int = 48
) -> float:
    """Uniform-slope version of the quadrature path (any s > 0)."""
    xg, wg = np.polynomial.legendre.leggauss(slope_nodes)
    a_nodes = lo + (hi - lo) * (xg + 1) / 2
    vals = np.array([math.exp(chi2_mixture_log_moment_quad(n, m, float(a), s, nodes)) for a in a_nodes])
    return math.log(float((wg * vals).sum() / 2.0))


def chi2_mixture_log_stats(
    n: int,
    m: int,
    a: float,
    budget: EvalBudget = DEFAULT_BUDGET,
    err_tol: float | None = None,
):
    """(E[ln X], var[ln X]) for X = chi2(n) + a^2 chi2(m), a in (0, 1].

    Evaluated from the digamma/trigamma-weighted series sharing the same
    w_k B(k+1, D/2) weight stream as the moment kernels.  The tolerance
    (err_tol, defaulting to the budget's rel_tol) is an absolute allowance
    in nats; mixture callers scale it by the cell mass.
    Returns (mean, var, terms, err_bound).
    """
    if err_tol is None:
        err_tol = budget.rel_tol
    if not (0.0 < a <= 1.0):
        raise ValueError(f"slope must be in (0, 1], got {a}")
    D = n + m
    if n == 0 and m == 0:
        raise ValueError("X is identically zero")
    if m == 0 or a == 1.0:
        return math.log(2) + sp.digamma(D / 2), float(sp.polygamma(1, D / 2)), 1, 0.0
    if n == 0:
        return 2 * math.log(a) + math.log(2) + sp.digamma(m / 2), float(sp.polygamma(1, m / 2)), 1, 0.0

    a_sq = a * a
    log_om = math.log1p(-a_sq)
    log_a2 = math.log(a_sq)
    psi0_half = float(sp.digamma(D / 2))
    psi1_half = float(sp.polygamma(1, D / 2))
    psi1_one = float(sp.polygamma(1, 1.0))
    rho = 1 - a_sq
    geo = rho / (1 - rho)
    geo_j = rho / (1 - rho) ** 2  # sum_j j rho^j
    geo_j2 = rho * (1 + rho) / (1 - rho) ** 3

    U = 0.0     # sum w B
    Sb = 0.0    # sum w b B, b_k = psi0(D/2) - psi0(k+1)
    Sb2 = 0.0   # sum w b^2 B
    Sp = 0.0    # sum w psi1(k+1) B
    last_u = 0.0
    terms = 0
    chunk = _CHUNK0
    k0 = 0
    while k0 < budget.max_terms:
        k1 = min(k0 + chunk, budget.max_terms)
        k = np.arange(k0, k1, dtype=np.float64)
        lp1, lp2 = _log_series_parts(n, m, 0.0, k)
        u = np.exp(lp1 + k * log_om) + np.exp(lp2 + log_a2 + k * log_om)
        b = psi0_half - sp.digamma(k + 1)
        U += float(u.sum())
        Sb += float((u * b).sum())
        Sb2 += float((u * b * b).sum())
        Sp += float((u * sp.polygamma(1, k + 1)).sum())
        last_u = float(u[-1])
        terms = int(k1)

        K = int(k1 - 1)
        # mass tail (geometric; sufficient for a >= ~1e-2 with chunked growth)
        tail_mass = last_u * geo
        # |b_k| <= A + ln(K+2) + (k-K-1)/(K+2) for k > K
        A = abs(psi0_half) + math.log(K + 2)
        tail_b = A * tail_mass + last_u * geo_j / (K + 2)
        tail_b2 = A * A * tail_mass + 2 * A * last_u * geo_j / (K + 2) + last_u * geo_j2 / (K + 2) ** 2
        tail_p = psi1_one * tail_mass
        err = (abs(Sb) + 1) * tail_mass + tail_b + tail_b2 + tail_p
        if err <= err_tol and U > 0:
            mean = math.log(2) - EULER_GAMMA + Sb / U
            var = (Sb2 + psi1_half * U + Sp) / U - (Sb / U) ** 2 - psi1_one
            return mean, var, terms, err
        k0 = k1
        chunk = min(chunk * 4, _CHUNK_MAX)
    raise BudgetExceeded(
        f"log-stat series (n={n}, m={m}, a={a}) not certified to "
        f"{err_tol} nats within {budget.max_terms} terms (err~{err:.2e})"
    )


def weight_normalization(n: int, m: int, a: float, budget: EvalBudget = DEFAULT_BUDGET):
    """sum_k w_k B(k+1, D/2); equals 1 exactly for n >= 1 (or n=0 with a > 0).

    Exposed for verification; returns (value, terms, tail_rel).
    """
    D = n + m
    if m == 0 or a == 1.0:
        return (D / 2) * math.exp(sp.gammaln(1.0) + sp.gammaln(D / 2) - sp.gammaln(1 + D / 2)), 1, 0.0
    a_sq = a * a
    log_om = math.log1p(-a_sq)
    log_a2 = math.log(a_sq)
    c1 = 1 + n / 2
    c2 = n / 2
    geo_log = log_om - log_a2
    total = 0.0
    last1 = -np.inf
    last2 = -np.inf
    terms = 0
    chunk = _CHUNK0
    k0 = 0
    while k0 < budget.max_terms:
        k1 = min(k0 + chunk, budget.max_terms)
        k = np.arange(k0, k1, dtype=np.float64)
        lp1, lp2 = _log_series_parts(n, m, 0.0, k)
        lt1 = lp1 + k * log_om
        lt2 = lp2 + log_a2 + k * log_om
        total += float(np.exp(lt1).sum() + np.exp(lt2).sum())
        last1, last2 = float(lt1[-1]), float(lt2[-1])
        terms = int(k1)
        K = int(k1 - 1)
        t1cands = [last1 + geo_log]
        if c1 > 1:
            t1cands.append(last1 + math.log((K + 1 + D / 2 - c1) / (c1 - 1)))
        t2cands = [last2 + geo_log]
        if c2 > 1:
            t2cands.append(last2 + math.log((K + 1 + D / 2 - c2) / (c2 - 1)))
        else:
            t2cands.append(_log_part2_whole_mass(n, m, a_sq, 0.0, K + 1))
        tail = math.exp(min(t1cands)) + math.exp(min(t2cands))
        if tail <= budget.rel_tol * max(total, 1e-300):
            return total, terms, tail / max(total, 1e-300)
        k0 = k1
        chunk = min(chunk * 4, _CHUNK_MAX)
    raise BudgetExceeded(
        f"weight normalization (n={n}, m={m}, a={a}) not certified within {budget.max_terms} terms"
    )
