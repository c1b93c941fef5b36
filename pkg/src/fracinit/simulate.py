"""Monte Carlo forward propagation and the empirical estimators.

Propagates x_{k+1} = phi_a(W_{k+1} (x_k o mask / q)) with fresh i.i.d.
Gaussian weights per layer per trial (optionally additive Gaussian noise
on post-activations for the linear heavy-tail study).  Norms are carried
as (unit direction, accumulated log scale), exact by homogeneity of the
activation, so hundreds of layers never overflow.

Every random draw comes from a counter-based stream keyed by
(seed, trial, layer, kind); results are bitwise reproducible and
independent of chunking or thread count.  A trial whose output hits the
zero vector (all-negative ReLU orthant, or a fully dropped layer) is
absorbed: it stays zero at all later checkpoints.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np
from numba import njit, prange

from .kernels import Activation, ParamReLU, RandomizedLeaky, LINEAR, solve_preserved_order
from .lyapunov import LogNormStats, prelu_log_stats
from .rng import KIND_MASK, KIND_NOISE, KIND_SLOPE, KIND_WEIGHT, fill_normals, fill_uniforms

DEFAULT_MAX_CELLS = 2**36


class ResourceLimit(RuntimeError):
    """trials * layers * d^2 exceeds the configured simulation budget."""


class InsufficientSamples(ValueError):
    """Too few trials for the requested estimator."""


@dataclass(frozen=True)
class ForwardConfig:
    """One ensemble: architecture, initialization scale and sampling plan."""

    widths: tuple[int, ...]      # fan-out of each layer; input dim = widths[0]
    activation: Activation
    sigma: float
    q: float = 1.0
    noise_std: float = 0.0
    trials: int = 1000
    seed: int = 0
    checkpoints: tuple[int, ...] = ()
    x0: tuple[float, ...] | None = None   # default: first basis vector
    cdf_lo: float = -60.0
    cdf_hi: float = 20.0
    cdf_points: int = 801

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in np.atleast_1d(self.widths)))
        if not self.widths or any(w < 1 for w in self.widths):
            raise ValueError("widths must be a nonempty list of positive integers")
        if self.sigma <= 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if not (0.0 < self.q <= 1.0):
            raise ValueError(f"keep probability must be in (0, 1], got {self.q}")
        if self.noise_std < 0:
            raise ValueError(f"noise_std must be nonnegative, got {self.noise_std}")
        if self.noise_std > 0:
            if not (isinstance(self.activation, ParamReLU) and self.activation.a == 1.0):
                raise ValueError("additive noise is only modeled for the linear activation")
            if self.q != 1.0:
                raise ValueError("additive noise with dropout is not modeled")
        if self.trials < 1:
            raise ValueError(f"trials must be >= 1, got {self.trials}")
        cps = tuple(int(c) for c in (self.checkpoints or (len(self.widths),)))
        if list(cps) != sorted(set(cps)) or cps[0] < 1 or cps[-1] > len(self.widths):
            raise ValueError(f"checkpoints must be sorted, unique and within [1, {len(self.widths)}]")
        object.__setattr__(self, "checkpoints", cps)
        if self.x0 is not None:
            x0 = tuple(float(v) for v in self.x0)
            if len(x0) != self.widths[0]:
                raise ValueError(f"x0 must have length widths[0] = {self.widths[0]}")
            if not any(v != 0.0 for v in x0):
                raise ValueError("x0 must be nonzero")
            object.__setattr__(self, "x0", x0)

    @classmethod
    def constant(cls, d: int, layers: int, **kw) -> "ForwardConfig":
        return cls(widths=(int(d),) * int(layers), **kw)

    @property
    def layers(self) -> int:
        return len(self.widths)


@dataclass(frozen=True)
class CdfOnGrid:
    grid: np.ndarray
    values: np.ndarray
    n_samples: int


@dataclass(frozen=True)
class EnsembleStats:
    """Per-checkpoint log norm ratios, zero flags and CDFs for one ensemble."""

    config: ForwardConfig
    checkpoints: tuple[int, ...]
    logratio: np.ndarray   # (trials, n_checkpoints); -inf where the trial died
    is_zero: np.ndarray    # (trials, n_checkpoints) bool

    def _col(self, checkpoint: int) -> int:
        try:
            return self.checkpoints.index(int(checkpoint))
        except ValueError:
            raise ValueError(f"checkpoint {checkpoint} was not recorded: {self.checkpoints}")

    def nonzero_logratio(self, checkpoint: int) -> np.ndarray:
        j = self._col(checkpoint)
        return self.logratio[~self.is_zero[:, j], j]

    def cdf(self, checkpoint: int) -> CdfOnGrid:
        """Empirical CDF of the nonzero log norm ratios on the configured grid."""
        samples = self.nonzero_logratio(checkpoint)
        grid = np.linspace(self.config.cdf_lo, self.config.cdf_hi, self.config.cdf_points)
        values = np.searchsorted(np.sort(samples), grid, side="right") / max(samples.size, 1)
        return CdfOnGrid(grid=grid, values=values, n_samples=int(samples.size))


@njit(cache=True, parallel=True)
def _propagate(out_logr, out_dead, trial0, widths, x0, sigma, a_lo, a_hi, rand_slope, q, seed, checkpoints):
    ntr = out_logr.shape[0]
    layers = widths.shape[0]
    dmax = x0.shape[0]
    for i in range(layers):
        if widths[i] > dmax:
            dmax = widths[i]
    for t in prange(ntr):
        trial = trial0 + t
        u = np.zeros(dmax)
        y = np.zeros(dmax)
        wbuf = np.empty(dmax * dmax)
        mbuf = np.empty(dmax)
        d_in = x0.shape[0]
        nx0 = 0.0
        for i in range(d_in):
            nx0 += x0[i] * x0[i]
        nx0 = np.sqrt(nx0)
        for i in range(d_in):
            u[i] = x0[i] / nx0
        L = 0.0
        dead = False
        cp = 0
        for layer in range(1, layers + 1):
            d_out = widths[layer - 1]
            if not dead:
                if q < 1.0:
                    fill_uniforms(mbuf, d_in, seed, trial, layer, KIND_MASK)
                    for j in range(d_in):
                        u[j] = (u[j] / q) if mbuf[j] < q else 0.0
                slope = a_lo
                if rand_slope:
                    fill_uniforms(mbuf, 1, seed, trial, layer, KIND_SLOPE)
                    slope = a_lo + (a_hi - a_lo) * mbuf[0]
                fill_normals(wbuf, d_out * d_in, seed, trial, layer, KIND_WEIGHT)
                nrm = 0.0
                for i in range(d_out):
                    acc = 0.0
                    base = i * d_in
                    for j in range(d_in):
                        acc += wbuf[base + j] * u[j]
                    v = acc if acc > 0.0 else slope * acc
                    y[i] = v
                    nrm += v * v
                nrm = np.sqrt(nrm)
                if nrm == 0.0:
                    dead = True
                else:
                    L += np.log(sigma * nrm)
                    for i in range(d_out):
                        u[i] = y[i] / nrm
                    d_in = d_out
            if cp < checkpoints.shape[0] and checkpoints[cp] == layer:
                out_logr[t, cp] = -np.inf if dead else L
                out_dead[t, cp] = dead
                cp += 1


@njit(cache=True, parallel=True)
def _propagate_noisy(out_logr, trial0, widths, x0, sigma, noise_std, seed, checkpoints):
    ntr = out_logr.shape[0]
    layers = widths.shape[0]
    dmax = x0.shape[0]
    for i in range(layers):
        if widths[i] > dmax:
            dmax = widths[i]
    for t in prange(ntr):
        trial = trial0 + t
        x = np.zeros(dmax)
        y = np.zeros(dmax)
        wbuf = np.empty(dmax * dmax)
        nbuf = np.empty(dmax)
        d_in = x0.shape[0]
        nx0 = 0.0
        for i in range(d_in):
            x[i] = x0[i]
            nx0 += x0[i] * x0[i]
        log_nx0 = 0.5 * np.log(nx0)
        cp = 0
        for layer in range(1, layers + 1):
            d_out = widths[layer - 1]
            fill_normals(wbuf, d_out * d_in, seed, trial, layer, KIND_WEIGHT)
            fill_normals(nbuf, d_out, seed, trial, layer, KIND_NOISE)
            for i in range(d_out):
                acc = 0.0
                base = i * d_in
                for j in range(d_in):
                    acc += wbuf[base + j] * x[j]
                y[i] = sigma * acc + noise_std * nbuf[i]
            for i in range(d_out):
                x[i] = y[i]
            d_in = d_out
            if cp < checkpoints.shape[0] and checkpoints[cp] == layer:
                nrm = 0.0
                for i in range(d_in):
                    nrm += x[i] * x[i]
                out_logr[t, cp] = 0.5 * np.log(nrm) - log_nx0
                cp += 1


def _max_cells() -> int:
    return int(os.environ.get("FRACINIT_MAX_CELLS", DEFAULT_MAX_CELLS))


def run_ensemble(config: ForwardConfig, trial_offset: int = 0) -> EnsembleStats:
    """Run all trials of one configuration; deterministic given (seed, config).

    trial_offset shifts the trial indices of the underlying random streams,
    so disjoint blocks [0, n) and [n, m) concatenate to exactly the run
    [0, m) - the hook the determinism tests use.
    """
    d_in = config.widths[0]
    cells = config.trials * config.layers * max(config.widths) ** 2
    if cells > _max_cells():
        raise ResourceLimit(
            f"trials*layers*d^2 = {cells} exceeds FRACINIT_MAX_CELLS = {_max_cells()}"
        )
    x0 = np.array(config.x0 if config.x0 is not None else np.eye(1, d_in, 0)[0], dtype=float)
    widths = np.asarray(config.widths, dtype=np.int64)
    cps = np.asarray(config.checkpoints, dtype=np.int64)
    logr = np.empty((config.trials, len(config.checkpoints)))
    dead = np.zeros((config.trials, len(config.checkpoints)), dtype=np.bool_)
    if config.noise_std > 0:
        _propagate_noisy(logr, trial_offset, widths, x0, config.sigma, config.noise_std,
                         config.seed, cps)
    else:
        act = config.activation
        if isinstance(act, RandomizedLeaky):
            a_lo, a_hi, rand_slope = act.lo, act.hi, True
        else:
            a_lo, a_hi, rand_slope = act.a, act.a, False
        _propagate(logr, dead, trial_offset, widths, x0, config.sigma, a_lo, a_hi,
                   rand_slope, config.q, config.seed, cps)
    return EnsembleStats(config=config, checkpoints=config.checkpoints, logratio=logr, is_zero=dead)


def estimate_moment(stats: EnsembleStats, s: float, checkpoint: int) -> tuple[float, float]:
    """Sample mean and standard error of (|x_k|/|x_0|)^s; zero trials count 0."""
    if stats.config.trials < 100:
        raise InsufficientSamples(f"need >= 100 trials, have {stats.config.trials}")
    j = stats._col(checkpoint)
    with np.errstate(over="ignore"):
        vals = np.where(stats.is_zero[:, j], 0.0, np.exp(s * stats.logratio[:, j]))
    est = float(vals.mean())
    stderr = float(vals.std(ddof=1) / math.sqrt(vals.size))
    return est, stderr


@dataclass(frozen=True)
class GaussianFitReport:
    ks_stat: float
    mean_z: float
    var_ratio: float
    n_samples: int
    warning: str = ""


def log_norm_gaussian_test(stats: EnsembleStats, checkpoint: int, predicted: LogNormStats) -> GaussianFitReport:
    """One-sample KS of standardized log norms against the standard normal.

    Standardizes by (mu k, s2 k) from the analytical statistics; samples are
    the nonzero-trial log ratios (matching the conditional density the
    ReLU statistics describe).
    """
    from scipy.special import ndtr

    z = stats.nonzero_logratio(checkpoint)
    if z.size < 100:
        raise InsufficientSamples(f"need >= 100 nonzero samples, have {z.size}")
    k = float(checkpoint)
    z = np.sort((z - predicted.mu * k) / math.sqrt(predicted.s2 * k))
    cdf = ndtr(z)
    i = np.arange(1, z.size + 1)
    ks = float(np.max(np.maximum(i / z.size - cdf, cdf - (i - 1) / z.size)))
    warning = "" if checkpoint >= 50 else "checkpoint below the recommended depth (50) for the CLT"
    return GaussianFitReport(
        ks_stat=ks,
        mean_z=float(z.mean()),
        var_ratio=float(z.var(ddof=1)),
        n_samples=int(z.size),
        warning=warning,
    )


def empirical_zero_fraction(stats: EnsembleStats, checkpoint: int) -> tuple[float, float]:
    """Zero-output fraction with its Wald standard error."""
    j = stats._col(checkpoint)
    n = stats.is_zero.shape[0]
    p = float(stats.is_zero[:, j].mean())
    return p, math.sqrt(max(p * (1 - p), 1.0 / n) / n)


def dominance_check(cdf_a: CdfOnGrid, cdf_b: CdfOnGrid, alpha: float = 0.01) -> tuple[float, float, float]:
    """First-order stochastic dominance of sample a over sample b.

    Returns (dominant_fraction, max_violation, band): the fraction of grid
    points with F_a <= F_b + band, the largest positive F_a - F_b, and the
    two-sample DKW band at level alpha.
    """
    if cdf_a.grid.shape != cdf_b.grid.shape or not np.array_equal(cdf_a.grid, cdf_b.grid):
        raise ValueError("CDFs must share the same grid")
    band = math.sqrt(math.log(2 / alpha) / (2 * cdf_a.n_samples)) + math.sqrt(
        math.log(2 / alpha) / (2 * cdf_b.n_samples)
    )
    diff = cdf_a.values - cdf_b.values
    return float(np.mean(diff <= band)), float(max(diff.max(), 0.0)), band


@dataclass(frozen=True)
class TailReport:
    """Stabilization/divergence diagnostics for the noisy linear limit."""

    sizes: tuple[int, ...]
    stable_order: float
    divergent_order: float
    stable_moments: tuple[float, ...]
    raw_divergent_moments: tuple[float, ...]
    truncated_divergent_moments: tuple[float, ...]
    survival_slope: float
    stable_spread: float   # max/min - 1 of the stable sequence


def noisy_linear_tail(
    config: ForwardConfig,
    s: float | None = None,
    doublings: int = 3,
    stationarity_tol: float = 1e-2,
    tail_count: int = 50,
) -> TailReport:
    """Heavy-tail diagnostics of the stationary noisy linear output.

    Moments of order below the preserved order s stabilize with sample
    size; orders above s diverge.  Raw cumulative sample moments of a
    divergent order are reported but are an even-odds coin flip between
    doublings (fresh half vs. first half of an i.i.d. sample), so the
    divergence check uses moments truncated at a size-matched upper
    quantile (top tail_count observations excluded), whose growth under a
    heavy tail is deterministic in probability.
    """
    if config.noise_std <= 0:
        raise ValueError("noisy_linear_tail needs noise_std > 0 (Theorem-6 scope)")
    d = config.widths[0]
    if any(w != d for w in config.widths):
        raise ValueError("constant width expected for the stationary-tail study")
    if s is None:
        s = solve_preserved_order(config.sigma, d, LINEAR, 1.0)
        if s is None:
            raise ValueError("sigma does not preserve any order; limit is not stationary")
    mu = prelu_log_stats(config.sigma, d, 1.0).mu
    if mu >= 0:
        raise ValueError(f"drift must be negative for a stationary limit, got mu={mu}")
    k_min = int(math.ceil(math.log(stationarity_tol) / mu))
    if config.layers < k_min:
        raise ValueError(
            f"layers={config.layers} below the stationarity depth {k_min} "
            f"(geometric transient above {stationarity_tol})"
        )
    base = config.trials >> doublings
    if base < 1000:
        raise InsufficientSamples(f"trials={config.trials} too few for {doublings} doublings")
    stats = run_ensemble(config)
    x = np.exp(stats.logratio[:, -1])
    sizes = tuple(base * (1 << i) for i in range(doublings + 1))
    p_lo = s / 2
    p_hi = min(2.0, s + 0.5)
    stable, raw_hi, trunc_hi = [], [], []
    for n in sizes:
        xs = x[:n]
        stable.append(float(np.mean(xs**p_lo)))
        raw_hi.append(float(np.mean(xs**p_hi)))
        cutoff = np.partition(xs, n - tail_count)[n - tail_count]
        trunc_hi.append(float(np.mean(np.where(xs < cutoff, xs**p_hi, 0.0))))
    # descriptive log-log survival slope over the top decades
    qs = np.array([0.9, 0.95, 0.98, 0.99, 0.995, 0.998, 0.999])
    xq = np.quantile(x, qs)
    slope = float(np.polyfit(np.log(xq), np.log(1 - qs), 1)[0])
    st = np.asarray(stable)
    return TailReport(
        sizes=sizes,
        stable_order=p_lo,
        divergent_order=p_hi,
        stable_moments=tuple(stable),
        raw_divergent_moments=tuple(raw_hi),
        truncated_divergent_moments=tuple(trunc_hi),
        survival_slope=slope,
        stable_spread=float(st.max() / st.min() - 1.0),
    )
