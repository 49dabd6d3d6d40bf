"""Block coordinate gradient coding under shifted-exponential stragglers."""

from .coding import CodeBook, CodeMatrix, build_code_matrix, decode_coefficients
from .optimizer import (
    SubgradientConfig,
    closed_form_f,
    closed_form_t,
    round_allocation,
    solve_single_block,
    solve_subgradient,
)
from .runtime import BlockAllocation, SystemConfig, runtime_tau, runtime_tau_hat, s_to_x, x_to_s
from .simulator import estimate_expected_runtime, resolve_scheme, sweep_experiment
from .straggler import FixedTimes, ShiftedExponential, order_stat_harmonic_means, order_stat_means

__version__ = "0.1.0"

__all__ = [
    "BlockAllocation",
    "CodeBook",
    "CodeMatrix",
    "FixedTimes",
    "ShiftedExponential",
    "SubgradientConfig",
    "SystemConfig",
    "build_code_matrix",
    "closed_form_f",
    "closed_form_t",
    "decode_coefficients",
    "estimate_expected_runtime",
    "order_stat_harmonic_means",
    "order_stat_means",
    "resolve_scheme",
    "round_allocation",
    "runtime_tau",
    "runtime_tau_hat",
    "s_to_x",
    "solve_single_block",
    "solve_subgradient",
    "sweep_experiment",
    "x_to_s",
]
