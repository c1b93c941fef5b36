import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import fracinit as fi
from fracinit import kernels
from fracinit.specfn import BudgetExceeded, EvalBudget

from oracles import log_gamma_ratio

B = EvalBudget(rel_tol=1e-10, max_terms=2_000_000)

# Frozen 1e7-sample Monte Carlo oracles of E|phi_a(z o mask/q)|^s
# (direct sampling; generator seeds 101..105, numpy default_rng).
MC_ORACLE = {
    # (a, s, d, q): (estimate, stderr)
    (0.0, 1.0, 4, 1.0): (1.1855937724611685, 0.00024366554908199415),
    (0.01, 1.0, 64, 1.0): (5.601454543631519, 0.000249943381366338),
    ("rleaky", 1.0, 16, 1.0): (2.8071205734824254, 0.00023838476783903068),
    (0.0, 1.0, 16, 0.8): (2.9964947551858305, 0.000319316930476688),
    (0.01, 1.0, 8, 0.8): (1.997298596140759, 0.0003179641719574928),
}


def jacobi_mixture_oracle(n, m, a, s, nodes=80):
    """Independent quadrature of E[(chi2(n)+a^2 chi2(m))^(s/2)] (log scale).

    Beta-mixture representation with a split rule at the a^2 layer; written
    against scipy directly, not via the package's series module.
    """
    from scipy.special import gammaln, roots_jacobi

    if m == 0:
        return (s / 2) * math.log(2) + gammaln(n / 2 + s / 2) - gammaln(n / 2)
    if n == 0:
        return s * math.log(a) + (s / 2) * math.log(2) + gammaln(m / 2 + s / 2) - gammaln(m / 2)
    al, be = n / 2, m / 2
    f = lambda v: (a * a + (1 - a * a) * v) ** (s / 2)
    v0 = min(0.5, max(50 * a * a, 1e-8))
    x1, w1 = roots_jacobi(nodes, 0.0, al - 1.0)
    t1 = (1 + x1) / 2
    p1 = v0**al * 0.5**al * float((w1 * (1 - v0 * t1) ** (be - 1) * f(v0 * t1)).sum())
    x2, w2 = roots_jacobi(nodes, be - 1.0, 0.0)
    t2 = (1 + x2) / 2
    v = v0 + (1 - v0) * t2
    p2 = (1 - v0) ** be * 0.5**be * float((w2 * v ** (al - 1) * f(v)).sum())
    lbeta = gammaln(al) + gammaln(be) - gammaln(al + be)
    D = n + m
    return math.log(p1 + p2) - lbeta + (s / 2) * math.log(2) + gammaln(D / 2 + s / 2) - gammaln(D / 2)


def relu_oracle(d, s):
    """I_0(s, d) mixed from the quadrature oracle's m=0 branch."""
    from scipy.special import gammaln, logsumexp

    n = np.arange(1, d + 1, dtype=float)
    lw = gammaln(d + 1) - gammaln(n + 1) - gammaln(d - n + 1) - d * math.log(2)
    return float(logsumexp(lw + (s / 2) * math.log(2) + gammaln(n / 2 + s / 2) - gammaln(n / 2)))


class TestReluKernel:
    def test_kaiming_s2(self):
        kv = fi.relu_kernel(fi.MomentQuery(d=64, s=2.0))
        assert kv.I == pytest.approx(32.0, rel=1e-12)

    def test_d1_single_term(self):
        assert fi.relu_kernel(fi.MomentQuery(d=1, s=2.0)).I == pytest.approx(0.5, rel=1e-12)

    def test_against_mc_oracle(self):
        est, se = MC_ORACLE[(0.0, 1.0, 4, 1.0)]
        kv = fi.relu_kernel(fi.MomentQuery(d=4, s=1.0))
        assert abs(kv.I - est) < 4 * se

    def test_rejects_wrong_activation(self):
        with pytest.raises(ValueError):
            fi.relu_kernel(fi.MomentQuery(d=4, s=1.0, activation=fi.LINEAR))

    def test_large_s_growth_diagnostics(self):
        # integer s = 6: chi-square moments reduce to the product (n/2)(n/2+1)(n/2+2)
        kv = fi.relu_kernel(fi.MomentQuery(d=8, s=6.0))
        n = np.arange(1, 9, dtype=float)
        w = np.array([math.comb(8, int(i)) for i in n]) / 2.0**8
        want = float((w * 8 * (n / 2) * (n / 2 + 1) * (n / 2 + 2)).sum())
        assert kv.I == pytest.approx(want, rel=1e-12)


class TestPreluKernel:
    def test_s2_closed_form(self):
        kv = fi.prelu_kernel(fi.MomentQuery(d=8, s=2.0, activation=fi.ParamReLU(0.5)))
        assert kv.I == pytest.approx(5.0, rel=1e-12)

    def test_collapses_to_linear(self):
        kv = fi.prelu_kernel(fi.MomentQuery(d=16, s=1.3, activation=fi.ParamReLU(1 - 1e-12), budget=B))
        want = fi.linear_kernel(1.3, 16).I
        assert kv.I == pytest.approx(want, rel=1e-6)

    def test_against_mc_oracle(self):
        est, se = MC_ORACLE[(0.01, 1.0, 64, 1.0)]
        kv = fi.prelu_kernel(fi.MomentQuery(d=64, s=1.0, activation=fi.ParamReLU(0.01), budget=B))
        assert abs(kv.I - est) < 4 * se

    def test_against_quadrature_oracle(self):
        from scipy.special import gammaln, logsumexp

        for (a, s, d) in [(0.3, 0.7, 12), (0.01, 1.5, 8), (0.9, 0.5, 32)]:
            n = np.arange(0, d + 1, dtype=float)
            lw = gammaln(d + 1) - gammaln(n + 1) - gammaln(d - n + 1) - d * math.log(2)
            want = float(logsumexp(lw + np.array([jacobi_mixture_oracle(int(i), d - int(i), a, s) for i in n])))
            kv = fi.prelu_kernel(fi.MomentQuery(d=d, s=s, activation=fi.ParamReLU(a), budget=B))
            assert kv.log_I == pytest.approx(want, abs=5e-10)

    def test_tail_bound_honored(self):
        kv = fi.prelu_kernel(fi.MomentQuery(d=16, s=1.0, activation=fi.ParamReLU(0.2), budget=B))
        assert 0 <= kv.tail_bound <= B.rel_tol

    def test_s_above_two_quadrature_path(self):
        kv = fi.prelu_kernel(fi.MomentQuery(d=8, s=3.0, activation=fi.ParamReLU(0.5)))
        # brute-force MC spot check
        rng = np.random.default_rng(5)
        z = rng.standard_normal((2_000_000, 8))
        y = np.where(z > 0, z, 0.5 * z)
        v = ((y**2).sum(axis=1)) ** 1.5
        assert kv.I == pytest.approx(v.mean(), rel=4 * v.std() / math.sqrt(v.size) / v.mean())

    def test_budget_exceeded_raises(self):
        with pytest.raises(BudgetExceeded):
            fi.prelu_kernel(fi.MomentQuery(
                d=4, s=0.5, activation=fi.ParamReLU(0.01),
                budget=EvalBudget(rel_tol=1e-12, max_terms=500)))


class TestLinearKernel:
    def test_lecun(self):
        assert fi.linear_kernel(2.0, 100).I == pytest.approx(100.0, rel=1e-12)

    def test_d1(self):
        assert fi.linear_kernel(2.0, 1).I == pytest.approx(1.0, rel=1e-12)

    def test_gamma_ratio_oracle(self):
        kv = fi.linear_kernel(0.7, 33)
        want = 0.35 * math.log(2) + log_gamma_ratio(33 / 2 + 0.35, 33 / 2)
        assert kv.log_I == pytest.approx(want, abs=1e-12)


class TestRandomizedLeakyKernel:
    def test_point_mass_limit(self):
        act = fi.RandomizedLeaky(0.2 - 5e-10, 0.2 + 5e-10)
        kv = fi.randomized_leaky_kernel(fi.MomentQuery(d=16, s=1.0, activation=act, budget=B))
        want = fi.prelu_kernel(fi.MomentQuery(d=16, s=1.0, activation=fi.ParamReLU(0.2), budget=B))
        assert kv.I == pytest.approx(want.I, rel=1e-6)

    def test_s2_integrated_convention(self):
        lo, hi = 0.125, 1 / 3
        kv = fi.randomized_leaky_kernel(fi.MomentQuery(d=24, s=2.0, activation=fi.RandomizedLeaky(lo, hi)))
        ea2 = (hi**3 - lo**3) / (3 * (hi - lo))
        assert kv.I == pytest.approx((1 + ea2) * 24 / 2, rel=1e-12)

    def test_against_mc_oracle(self):
        est, se = MC_ORACLE[("rleaky", 1.0, 16, 1.0)]
        kv = fi.randomized_leaky_kernel(fi.MomentQuery(d=16, s=1.0, activation=fi.RandomizedLeaky(), budget=B))
        assert abs(kv.I - est) < 4 * se

    def test_dropout_unsupported(self):
        with pytest.raises(kernels.Unsupported):
            fi.kernel(fi.MomentQuery(d=8, s=1.0, activation=fi.RandomizedLeaky(), q=0.5))


class TestDropoutReluKernel:
    def test_q1_reduction_bitwise(self):
        a = fi.dropout_relu_kernel(fi.MomentQuery(d=32, s=1.5, q=1.0))
        b = fi.relu_kernel(fi.MomentQuery(d=32, s=1.5))
        assert a.log_I == b.log_I

    def test_q_near_one(self):
        a = fi.dropout_relu_kernel(fi.MomentQuery(d=32, s=1.5, q=1 - 1e-13))
        b = fi.relu_kernel(fi.MomentQuery(d=32, s=1.5))
        assert a.I == pytest.approx(b.I, rel=1e-12)

    def test_s2_value(self):
        kv = fi.dropout_relu_kernel(fi.MomentQuery(d=16, s=2.0, q=0.5))
        assert kv.I == pytest.approx(16.0, rel=1e-12)

    def test_against_mc_oracle(self):
        est, se = MC_ORACLE[(0.0, 1.0, 16, 0.8)]
        kv = fi.dropout_relu_kernel(fi.MomentQuery(d=16, s=1.0, q=0.8))
        assert abs(kv.I - est) < 4 * se


class TestDropoutPreluKernel:
    def test_linear_s2(self):
        kv = fi.kernel(fi.MomentQuery(d=10, s=2.0, activation=fi.LINEAR, q=0.5))
        assert kv.I == pytest.approx(20.0, rel=1e-12)

    def test_q1_reduction(self):
        a = fi.dropout_prelu_kernel(fi.MomentQuery(d=16, s=1.3, activation=fi.ParamReLU(0.3), q=1.0, budget=B))
        b = fi.prelu_kernel(fi.MomentQuery(d=16, s=1.3, activation=fi.ParamReLU(0.3), budget=B))
        assert a.log_I == b.log_I
        near = fi.dropout_prelu_kernel(fi.MomentQuery(d=16, s=1.3, activation=fi.ParamReLU(0.3), q=1 - 1e-12, budget=B))
        assert near.I == pytest.approx(b.I, rel=1e-9)

    def test_s2_trinomial_expectation_convention(self):
        # adopted constant (1+a^2) d / (2q); see the decisions ledger
        kv = fi.dropout_prelu_kernel(fi.MomentQuery(d=8, s=2.0, activation=fi.ParamReLU(0.3), q=0.5))
        assert kv.I == pytest.approx((1 + 0.09) * 8 / (2 * 0.5), rel=1e-12)

    def test_s2_against_direct_mc(self):
        # 4e6-sample frozen check of the adopted s=2 constant (seed 99)
        kv = fi.dropout_prelu_kernel(fi.MomentQuery(d=8, s=2.0, activation=fi.ParamReLU(0.3), q=0.5))
        assert abs(kv.I - 8.7159) < 4 * 0.0047

    def test_linear_dropout_binomial_form(self):
        from scipy.special import gammaln, logsumexp

        d, s, q = 12, 1.3, 0.6
        kv = fi.kernel(fi.MomentQuery(d=d, s=s, activation=fi.LINEAR, q=q))
        t = np.arange(1, d + 1, dtype=float)
        lw = gammaln(d + 1) - gammaln(t + 1) - gammaln(d - t + 1) + t * math.log(q) + (d - t) * math.log1p(-q)
        want = float(logsumexp(lw + (s / 2) * math.log(2) + gammaln(t / 2 + s / 2) - gammaln(t / 2))) - s * math.log(q)
        assert kv.log_I == pytest.approx(want, abs=1e-12)

    def test_against_mc_oracle(self):
        est, se = MC_ORACLE[(0.01, 1.0, 8, 0.8)]
        kv = fi.dropout_prelu_kernel(fi.MomentQuery(d=8, s=1.0, activation=fi.ParamReLU(0.01), q=0.8, budget=B))
        assert abs(kv.I - est) < 4 * se


class TestCriticalSigma:
    def test_kaiming(self):
        _, s2 = fi.critical_sigma(fi.MomentQuery(d=64, s=2.0))
        assert s2 == pytest.approx(2 / 64, rel=1e-12)

    def test_lecun(self):
        _, s2 = fi.critical_sigma(fi.MomentQuery(d=100, s=2.0, activation=fi.LINEAR))
        assert s2 == pytest.approx(0.01, rel=1e-12)

    def test_s08_near_asymptotic(self):
        _, s2 = fi.critical_sigma(fi.MomentQuery(d=64, s=0.8, budget=B))
        approx = 2 / 64 + 3 / 64**2
        # agreement to o(1/d^2): comfortably inside a 1/d^3-scale window
        assert abs(s2 - approx) < 20 / 64**3


class TestAsymptoticSigmaSq:
    def test_relu_s1(self):
        for d in (16, 64, 256):
            assert fi.asymptotic_sigma_sq(1.0, d) == pytest.approx(2 / d + 5 / (2 * d * d), rel=1e-15)

    def test_s2_kills_correction(self):
        for (a, q) in ((0.0, 1.0), (1.0, 1.0), (0.0, 0.7), (1.0, 0.7), (0.05, 1.0)):
            lead = fi.asymptotic_sigma_sq(2.0, 50, a, q)
            if a == 0.0:
                assert lead == pytest.approx(2 * q / 50, rel=1e-15)
            elif a == 1.0:
                assert lead == pytest.approx(q / 50, rel=1e-15)

    def test_dropout_q1_matches_plain(self):
        for d in (32, 128):
            assert fi.asymptotic_sigma_sq(1.0, d, 0.0, 1.0) == fi.asymptotic_sigma_sq(1.0, d)

    def test_unsupported_midrange_slope(self):
        with pytest.raises(kernels.Unsupported):
            fi.asymptotic_sigma_sq(1.0, 64, 0.5, 0.8)
        with pytest.raises(kernels.Unsupported):
            fi.asymptotic_sigma_sq(1.0, 64, 0.5, 1.0)

    def test_asymptotic_error_scaling(self):
        # d^2 |exact - approx| decreases with d for each family with a formula
        cases = [(fi.RELU, 1.0), (fi.LINEAR, 1.0), (fi.RELU, 0.8), (fi.LINEAR, 0.8)]
        for act, q in cases:
            errs = []
            for d in (64, 128, 256, 512, 1024):
                _, s2 = fi.critical_sigma(fi.MomentQuery(d=d, s=1.0, activation=act, q=q, budget=B))
                errs.append(abs(s2 - fi.asymptotic_sigma_sq(1.0, d, act.a, q)) * d * d)
            assert all(e2 < e1 for e1, e2 in zip(errs, errs[1:])), (act, q, errs)


class TestClassifyRegime:
    def test_definitional_roundtrip(self):
        sig, _ = fi.critical_sigma(fi.MomentQuery(d=64, s=1.0, budget=B))
        verdict = fi.classify_regime(sig, fi.MomentQuery(d=64, s=1.0, budget=B))
        assert verdict.regime == "preserving"
        assert verdict.s_star == pytest.approx(1.0, abs=1e-6)

    def test_lecun_preserves_two(self):
        d = 49
        verdict = fi.classify_regime(1 / math.sqrt(d), fi.MomentQuery(d=d, s=2.0, activation=fi.LINEAR))
        assert verdict.regime == "preserving"
        assert verdict.s_star == pytest.approx(2.0, abs=1e-6)

    def test_super_critical_explodes(self):
        d = 64
        sigma = math.sqrt(4 / d)
        for s in (0.5, 1.0, 2.0):
            verdict = fi.classify_regime(sigma, fi.MomentQuery(d=d, s=s, budget=B))
            assert verdict.regime == "exploding"
            assert verdict.mu is not None and verdict.mu > 0
            assert verdict.s_star is None

    def test_subcritical_contracts(self):
        sig, _ = fi.critical_sigma(fi.MomentQuery(d=16, s=1.0, budget=B))
        verdict = fi.classify_regime(0.9 * sig, fi.MomentQuery(d=16, s=1.0, budget=B))
        assert verdict.regime == "contracting"


class TestSolvePreservedOrder:
    def test_kaiming_gives_two(self):
        s_star = fi.solve_preserved_order(math.sqrt(2 / 64), 64)
        assert s_star == pytest.approx(2.0, abs=1e-6)

    def test_roundtrip(self):
        sig, _ = fi.critical_sigma(fi.MomentQuery(d=64, s=0.8, budget=B))
        assert fi.solve_preserved_order(sig, 64, budget=B) == pytest.approx(0.8, abs=1e-6)

    def test_monotone_in_sigma(self):
        d = 32
        hi, _ = fi.critical_sigma(fi.MomentQuery(d=d, s=0.5, budget=B))
        lo, _ = fi.critical_sigma(fi.MomentQuery(d=d, s=1.0, budget=B))
        stars = [fi.solve_preserved_order(sig, d, budget=B)
                 for sig in np.linspace(lo, hi, 7)]
        assert all(0.5 - 1e-9 <= s <= 1.0 + 1e-9 for s in stars)
        assert all(b < a for a, b in zip(stars, stars[1:]))  # larger sigma, smaller order

    def test_none_when_exploding_everywhere(self):
        assert fi.solve_preserved_order(10.0, 16) is None


class TestMomentTrajectory:
    def test_preserving_flat(self):
        sig, _ = fi.critical_sigma(fi.MomentQuery(d=32, s=1.0, budget=B))
        traj = fi.moment_trajectory([32] * 20, 1.0, sig, fi.RELU, budget=B)
        assert all(abs(r - 1.0) <= 1e-9 for r in traj)

    def test_higher_probe_grows(self):
        sig, _ = fi.critical_sigma(fi.MomentQuery(d=64, s=1.0, budget=B))
        traj = fi.moment_trajectory([64] * 30, 2.0, sig, fi.RELU, budget=B)
        assert all(b > a for a, b in zip(traj, traj[1:]))

    def test_variable_widths_product(self):
        traj = fi.moment_trajectory([4, 8, 16], 2.0, math.sqrt(1 / 8), fi.LINEAR)
        assert traj[-1] == pytest.approx((4 / 8) * (8 / 8) * (16 / 8), rel=1e-12)
        assert traj[0] == pytest.approx(0.5, rel=1e-12)


class TestConvEffectiveWidth:
    def test_values(self):
        assert fi.conv_effective_width(3, 64) == 576
        assert fi.conv_effective_width(1, 1) == 1
        assert fi.conv_effective_width(5, 3) == 75

    def test_domain(self):
        with pytest.raises(ValueError):
            fi.conv_effective_width(0, 3)


class TestInvariants:
    def test_monotonicity_grid(self):
        s_grid = (0.5, 1.0, 1.5, 2.0)
        a_grid = (0.0, 0.01, 0.2, 1.0)
        d_grid = (2, 4, 8, 16, 32, 64, 128)
        for s in s_grid:
            for a in a_grid:
                sigs = [fi.critical_sigma(fi.MomentQuery(d=d, s=s, activation=fi.ParamReLU(a), budget=B))[0]
                        for d in d_grid]
                assert all(b < a_ for a_, b in zip(sigs, sigs[1:])), ("d", s, a, sigs)
        for d in (8, 64):
            for a in a_grid:
                sigs = [fi.critical_sigma(fi.MomentQuery(d=d, s=s, activation=fi.ParamReLU(a), budget=B))[0]
                        for s in s_grid]
                assert all(b < a_ for a_, b in zip(sigs, sigs[1:])), ("s", d, a, sigs)
        for d in (8, 64):
            for s in s_grid:
                sigs = [fi.critical_sigma(fi.MomentQuery(d=d, s=s, activation=fi.ParamReLU(a), budget=B))[0]
                        for a in a_grid]
                assert all(b < a_ for a_, b in zip(sigs, sigs[1:])), ("a", d, s, sigs)

    def test_collapse_to_relu(self):
        budget = EvalBudget(rel_tol=2e-5, max_terms=2_000_000)
        for s in (0.5, 1.0, 1.5):
            kva = fi.prelu_kernel(fi.MomentQuery(d=64, s=s, activation=fi.ParamReLU(1e-4), budget=budget))
            kvr = fi.relu_kernel(fi.MomentQuery(d=64, s=s))
            assert abs(kva.I - kvr.I) / kvr.I <= 1e-4

    def test_s2_closed_forms_grid(self):
        budget = EvalBudget(rel_tol=1e-8, max_terms=2_000_000)
        for a in (0.01, 0.2, 0.5, 0.9):
            for d in (2, 8, 64):
                kv = fi.prelu_kernel(fi.MomentQuery(d=d, s=2 - 1e-9, activation=fi.ParamReLU(a), budget=budget))
                assert kv.I == pytest.approx((1 + a * a) * d / 2, rel=1e-6)

    def test_kappa_log_convexity(self):
        # discrete second differences of log kappa(s) are nonnegative
        d, a = 16, 0.3
        sigma = 0.3
        s_grid = np.linspace(0.1, 1.9, 10)
        lk = [s * math.log(sigma)
              + fi.prelu_kernel(fi.MomentQuery(d=d, s=float(s), activation=fi.ParamReLU(a), budget=B)).log_I
              for s in s_grid]
        d2 = np.diff(lk, 2)
        assert np.all(d2 > -1e-9)

    def test_query_validation(self):
        with pytest.raises(ValueError):
            fi.MomentQuery(d=0, s=1.0)
        with pytest.raises(ValueError):
            fi.MomentQuery(d=4, s=0.0)
        with pytest.raises(ValueError):
            fi.MomentQuery(d=4, s=1.0, q=0.0)
        with pytest.raises(ValueError):
            fi.ParamReLU(1.5)
        with pytest.raises(ValueError):
            fi.RandomizedLeaky(0.5, 0.2)


@given(
    s=st.floats(min_value=0.2, max_value=2.0),
    d=st.integers(min_value=1, max_value=256),
)
@settings(max_examples=50, deadline=None)
def test_relu_roundtrip_property(s, d):
    sig, sig_sq = fi.critical_sigma(fi.MomentQuery(d=d, s=s, budget=B))
    assert sig_sq == pytest.approx(sig * sig, rel=1e-12)
    kv = fi.relu_kernel(fi.MomentQuery(d=d, s=s, budget=B))
    assert s * math.log(sig) + kv.log_I == pytest.approx(0.0, abs=1e-9)


@given(a=st.floats(min_value=0.05, max_value=0.95), s=st.floats(min_value=0.3, max_value=1.9))
@settings(max_examples=25, deadline=None)
def test_prelu_between_relu_and_linear(a, s):
    d = 12
    i0 = fi.relu_kernel(fi.MomentQuery(d=d, s=s, budget=B)).log_I
    i1 = fi.linear_kernel(s, d).log_I
    ia = fi.prelu_kernel(fi.MomentQuery(d=d, s=s, activation=fi.ParamReLU(a), budget=B)).log_I
    assert i0 - 1e-9 <= ia <= i1 + 1e-9
