"""Independent extended-precision oracles for the special-function tests.

Everything here is deliberately written from first principles (Stirling
series, defining sums/integrals, exact rational arithmetic) rather than by
calling the implementations under test or their scipy backends.
"""

import math
from fractions import Fraction

import mpmath as mp

# Bernoulli numbers B_2, B_4, ... for the Stirling series
_BERNOULLI = [
    Fraction(1, 6), Fraction(-1, 30), Fraction(1, 42), Fraction(-1, 30),
    Fraction(5, 66), Fraction(-691, 2730), Fraction(7, 6), Fraction(-3617, 510),
    Fraction(43867, 798), Fraction(-174611, 330), Fraction(854513, 138),
    Fraction(-236364091, 2730), Fraction(8553103, 6),
]


def log_gamma_stirling(x: float, shift: int = 200, dps: int = 60) -> float:
    """ln Gamma(x) from the Stirling series after shifting x up by recurrence."""
    with mp.workdps(dps):
        z = mp.mpf(x)
        corr = mp.mpf(0)
        for _ in range(shift):
            corr += mp.log(z)
            z += 1
        # Stirling: (z-1/2) ln z - z + ln(2 pi)/2 + sum B_2n/(2n(2n-1) z^(2n-1))
        out = (z - mp.mpf(1) / 2) * mp.log(z) - z + mp.log(2 * mp.pi) / 2
        for n, b in enumerate(_BERNOULLI, start=1):
            out += mp.mpf(b.numerator) / b.denominator / (2 * n * (2 * n - 1) * z ** (2 * n - 1))
        return float(out - corr)


def trigamma_sum(x: float, terms: int = 2_000_000) -> float:
    """psi_1(x) = sum_k (x+k)^-2 truncated with an integral tail correction."""
    with mp.workdps(40):
        z = mp.mpf(x)
        s = mp.mpf(0)
        for k in range(terms):
            s += 1 / (z + k) ** 2
        # integral bracket: 1/(z+K) < tail < 1/(z+K-1); use midpoint correction
        tail = 1 / (z + terms) + 1 / (2 * (z + terms) ** 2)
        return float(s + tail)


def log_beta_quad(x: float, y: float) -> float:
    """ln B(x, y) by adaptive quadrature of the defining integral."""
    with mp.workdps(40):
        val = mp.quad(lambda t: t ** (mp.mpf(x) - 1) * (1 - t) ** (mp.mpf(y) - 1), [0, 0.5, 1])
        return float(mp.log(val))


def log_gamma_ratio(num: float, den: float) -> float:
    """ln Gamma(num) - ln Gamma(den) in extended precision."""
    with mp.workdps(60):
        return float(mp.loggamma(num) - mp.loggamma(den))


def binom_pmf_exact(d: int, n: int, p: Fraction) -> Fraction:
    return Fraction(math.comb(d, n)) * p**n * (1 - p) ** (d - n)


def zero_prob_exact(d: int, k: int) -> Fraction:
    return 1 - (1 - Fraction(1, 2**d)) ** k
