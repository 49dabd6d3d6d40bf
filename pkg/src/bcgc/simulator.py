"""Monte Carlo runtime evaluation, experiment sweeps and a coded GD demo."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from . import coding
from .optimizer import (
    SubgradientConfig,
    closed_form_f,
    closed_form_t,
    round_allocation,
    solve_single_block,
    solve_subgradient,
)
from .runtime import (
    BlockAllocation,
    RuntimeEstimate,
    SystemConfig,
    evaluate_allocation,
    runtime_tau,
    sample_sorted_draws,
    uniform_allocation,
    x_to_s,
)
from .straggler import ShiftedExponential, sample_draw, summarize

SCHEME_NAMES = ("subgradient", "closed-t", "closed-f", "single-block")


@dataclass(frozen=True)
class SchemeUnderTest:
    name: str
    allocation: BlockAllocation

    def __post_init__(self):
        if not self.allocation.integer:
            raise ValueError(f"scheme {self.name!r} needs an integer allocation")


def parse_scheme(name: str) -> tuple:
    """``"uniform:3"`` -> ``("uniform", 3)``; other names map to ``(name, None)``."""
    if name in SCHEME_NAMES:
        return name, None
    if name.startswith("uniform:"):
        level = name.split(":", 1)[1]
        if not level.isdigit():
            raise ValueError(f"uniform scheme needs a nonnegative integer level, got {name!r}")
        return "uniform", int(level)
    raise ValueError(f"unknown scheme {name!r}; expected one of {', '.join(SCHEME_NAMES)} or uniform:<s>")


def _seq(seed) -> np.random.SeedSequence:
    return seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)


@dataclass(frozen=True)
class SchemeSettings:
    """Knobs shared by every scheme resolution in one experiment."""

    solver: SubgradientConfig = SubgradientConfig()
    round_draws: int = 1_000
    round_passes: int = 5
    single_block_draws: int = 10_000


def resolve_scheme(name: str, cfg: SystemConfig, dist, seed=0, settings: SchemeSettings = SchemeSettings()) -> SchemeUnderTest:
    """Build the integer allocation a named scheme uses for ``cfg`` and ``dist``."""
    kind, level = parse_scheme(name)
    solve_seq, round_seq = _seq(seed).spawn(2)
    if kind == "uniform":
        return SchemeUnderTest(name, uniform_allocation(level, cfg))
    if kind == "single-block":
        alloc = solve_single_block(cfg, dist, settings.single_block_draws, np.random.default_rng(solve_seq))
        return SchemeUnderTest(name, alloc)
    if kind == "subgradient":
        sg = dataclasses.replace(settings.solver, seed=int(solve_seq.generate_state(1)[0]))
        relaxed = solve_subgradient(cfg, dist, sg).allocation
    else:
        summary = summarize(dist, cfg.n_workers, np.random.default_rng(solve_seq))
        if kind == "closed-t":
            relaxed = closed_form_t(cfg, summary.t_mean)
        else:
            relaxed = closed_form_f(cfg, summary.t_harmonic)
    alloc = round_allocation(
        relaxed, cfg, dist, settings.round_draws, np.random.default_rng(round_seq), settings.round_passes
    )
    return SchemeUnderTest(name, alloc)


def estimate_expected_runtime(scheme, cfg: SystemConfig, dist, n_draws: int = 10_000, seed=0) -> RuntimeEstimate:
    """Sample mean of the overall runtime with a 95% normal half-width."""
    if n_draws < 2:
        raise ValueError("n_draws must be >= 2")
    alloc = scheme.allocation if isinstance(scheme, SchemeUnderTest) else scheme
    draws = sample_sorted_draws(dist, cfg.n_workers, n_draws, np.random.default_rng(seed))
    return evaluate_allocation(alloc, draws, cfg)


@dataclass(frozen=True)
class SweepRow:
    axis: str
    value: float
    scheme: str
    estimate: RuntimeEstimate


def _cell(axis: str, value, cfg: SystemConfig, dist):
    if axis == "N":
        n = int(value)
        if n != value or n < 1:
            raise ValueError(f"N sweep values must be positive integers, got {value!r}")
        return dataclasses.replace(cfg, n_workers=n), dist
    if axis == "mu":
        return cfg, dataclasses.replace(dist, mu=float(value))
    raise ValueError(f"axis must be 'N' or 'mu', got {axis!r}")


def sweep_experiment(
    axis: str,
    values,
    schemes,
    cfg: SystemConfig,
    dist: ShiftedExponential,
    n_draws: int = 10_000,
    seed: int = 0,
    settings: SchemeSettings = SchemeSettings(),
) -> list:
    """Expected runtime of every scheme at every axis value.

    Within a cell all schemes are scored on the same draws; each cell
    gets its own deterministic seed stream, so cells are independent.
    """
    values = list(values)
    schemes = list(schemes)
    if not values:
        raise ValueError("sweep needs at least one axis value")
    for name in schemes:
        parse_scheme(name)
    rows = []
    for i, value in enumerate(values):
        c_cfg, c_dist = _cell(axis, value, cfg, dist)
        eval_seq, *scheme_seqs = np.random.SeedSequence([seed, i]).spawn(1 + len(schemes))
        draws = sample_sorted_draws(c_dist, c_cfg.n_workers, n_draws, np.random.default_rng(eval_seq))
        for name, seq in zip(schemes, scheme_seqs):
            scheme = resolve_scheme(name, c_cfg, c_dist, seq, settings)
            rows.append(SweepRow(axis, value, name, evaluate_allocation(scheme.allocation, draws, c_cfg)))
    return rows


@dataclass(frozen=True)
class LeastSquaresData:
    """``F(theta) = sum_m 0.5 (a_m . theta - y_m)^2`` over M samples."""

    features: np.ndarray
    targets: np.ndarray

    def loss(self, theta) -> float:
        r = self.features @ theta - self.targets
        return 0.5 * float(r @ r)

    def gradient(self, theta, rows=slice(None)) -> np.ndarray:
        A = self.features[rows]
        return A.T @ (A @ theta - self.targets[rows])

    @property
    def curvature(self) -> float:
        """Largest eigenvalue of the Hessian ``A^T A``."""
        return float(np.linalg.eigvalsh(self.features.T @ self.features)[-1])


def make_least_squares(n_samples: int, n_features: int, rng=None, noise: float = 0.1) -> LeastSquaresData:
    rng = np.random.default_rng(rng)
    A = rng.standard_normal((n_samples, n_features))
    theta = rng.standard_normal(n_features)
    return LeastSquaresData(A, A @ theta + noise * rng.standard_normal(n_samples))


@dataclass
class TrainingTrace:
    losses: np.ndarray
    runtimes: np.ndarray
    gradient_errors: np.ndarray
    theta: np.ndarray
    draws: np.ndarray


def run_gd_training(
    cfg: SystemConfig,
    dist,
    scheme,
    data: LeastSquaresData,
    iters: int = 50,
    step: float | None = None,
    seed=0,
) -> TrainingTrace:
    """Gradient descent where every gradient is computed through the code.

    Each iteration draws fresh cycle times, lets every worker emit its
    coded partials in order 1..L, and decodes each coordinate from the
    fastest ``N - s_l`` deliveries. ``losses`` has ``iters + 1`` entries
    (before each step and after the last); ``gradient_errors`` holds the
    relative distance to the centrally computed gradient.
    """
    M, L = data.features.shape
    if (M, L) != (cfg.n_samples, cfg.model_size):
        raise ValueError(f"data is {M}x{L}, config expects {cfg.n_samples}x{cfg.model_size}")
    alloc = scheme.allocation if isinstance(scheme, SchemeUnderTest) else scheme
    alloc.check(cfg)
    s = x_to_s(alloc)
    alloc_seq, code_seq, draw_seq = _seq(seed).spawn(3)
    assignment = coding.allocate_samples(cfg, s, np.random.default_rng(alloc_seq))
    book = coding.CodeBook.for_profile(s, cfg.n_workers, np.random.default_rng(code_seq))
    rng = np.random.default_rng(draw_seq)
    if step is None:
        step = 1.0 / data.curvature

    theta = np.zeros(L)
    losses, runtimes, errors, draws = [], [], [], []
    for _ in range(iters):
        losses.append(data.loss(theta))
        subset_grads = np.stack([data.gradient(theta, rows) for rows in assignment.subsets])
        workspace = coding.encode_partials(book, s, subset_grads, assignment)
        T = sample_draw(dist, cfg.n_workers, rng)
        arrivals = coding.completion_schedule(s, T, cfg)
        grad = coding.recover_gradient(workspace, book, arrivals)
        central = data.gradient(theta)
        errors.append(np.linalg.norm(grad - central) / max(np.linalg.norm(central), np.finfo(float).tiny))
        runtimes.append(float(coding.recovery_times(s, arrivals).max()))
        draws.append(T)
        theta = theta - step * grad
    losses.append(data.loss(theta))
    return TrainingTrace(
        losses=np.array(losses),
        runtimes=np.array(runtimes),
        gradient_errors=np.array(errors),
        theta=theta,
        draws=np.array(draws).reshape(iters, cfg.n_workers),
    )


def check_trace_runtimes(trace: TrainingTrace, scheme, cfg: SystemConfig) -> float:
    """Largest relative gap between recorded runtimes and the runtime formula."""
    alloc = scheme.allocation if isinstance(scheme, SchemeUnderTest) else scheme
    s = x_to_s(alloc)
    ref = np.array([runtime_tau(s, T, cfg) for T in trace.draws])
    return float(np.max(np.abs(trace.runtimes - ref) / ref)) if ref.size else 0.0
