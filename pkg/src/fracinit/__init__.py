"""Fractional moment-preserving initialization for deep networks.

Computes the weight variance that keeps E|x_k|^s constant across fully
connected layers (ReLU / leaky / randomized-leaky / linear activations,
optional dropout), the log-norm drift and CLT statistics of the layer
outputs, and verifies every analytical quantity against a Monte Carlo
forward-propagation simulator.
"""

from .specfn import BudgetExceeded, DEFAULT_BUDGET, EvalBudget
from .kernels import (
    LEAKY,
    LINEAR,
    RELU,
    Activation,
    KernelValue,
    MomentQuery,
    NoConvergence,
    ParamReLU,
    RandomizedLeaky,
    RegimeVerdict,
    Unsupported,
    asymptotic_sigma_sq,
    classify_regime,
    conv_effective_width,
    critical_sigma,
    dropout_prelu_kernel,
    dropout_relu_kernel,
    kernel,
    linear_kernel,
    moment_trajectory,
    prelu_kernel,
    randomized_leaky_kernel,
    relu_kernel,
    solve_preserved_order,
)
from .lyapunov import (
    AsLimitVerdict,
    LogNormStats,
    as_limit,
    mixture_variance,
    mn_series,
    prelu_log_stats,
    relu_log_stats,
    vn_series,
    zero_output_probability,
)
from .simulate import (
    CdfOnGrid,
    EnsembleStats,
    ForwardConfig,
    GaussianFitReport,
    InsufficientSamples,
    ResourceLimit,
    TailReport,
    dominance_check,
    empirical_zero_fraction,
    estimate_moment,
    log_norm_gaussian_test,
    noisy_linear_tail,
    run_ensemble,
)

__version__ = "0.1.0"
