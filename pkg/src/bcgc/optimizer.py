"""Choosing the block allocation x.

The relaxed problem minimizes ``E[tau_hat(x, T)]`` over
``{x >= 0, sum x = L}``. Provided here:

* a stochastic projected subgradient method (the optimal solution),
* closed-form minimizers of ``tau_hat(x, t)`` for a deterministic vector
  ``t`` (plugging in the order-statistic means or harmonic means),
* rounding to integers with a 1-opt local search,
* the single-block baseline and the analytic gap bounds.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .runtime import (
    BlockAllocation,
    RuntimeEstimate,
    SystemConfig,
    evaluate_allocation,
    inner_terms,
    runtime_tau_hat_batch,
    sample_sorted_draws,
    sort_desc,
)
from .straggler import ShiftedExponential, harmonic_numbers, summarize


def project_onto_feasible(v, total: float) -> np.ndarray:
    """Euclidean projection of ``v`` onto ``{x >= 0, sum x = total}``.

    The solution is ``max(v - nu, 0)``; nu is located by bisection over
    the sorted breakpoints and then solved exactly on the active piece.
    """
    if not total > 0:
        raise ValueError("total must be positive")
    v = np.asarray(v, dtype=float)
    u = np.sort(v)[::-1]
    cs = np.cumsum(u)
    k = np.arange(1, v.size + 1)

    # Largest index r with u[r] > (cs[r] - total) / (r + 1); the test is monotone in r.
    def keeps(r):
        return u[r] - (cs[r] - total) / k[r] > 0

    lo, hi = 0, v.size - 1
    if keeps(hi):
        lo = hi
    while hi > lo + 1:
        mid = (lo + hi) // 2
        if keeps(mid):
            lo = mid
        else:
            hi = mid
    nu = (cs[lo] - total) / k[lo]
    return np.maximum(v - nu, 0.0)


def noisy_subgradient(alloc, draw, cfg: SystemConfig) -> np.ndarray:
    """Subgradient of ``tau_hat(., T)`` at ``alloc`` for one draw.

    With ``n*`` the first maximizing inner term, component i is
    ``(M/N) b T_(N-n*) (i+1)`` for ``i <= n*`` and zero beyond.
    """
    x = alloc.x if isinstance(alloc, BlockAllocation) else np.asarray(alloc, dtype=float)
    R = sort_desc(draw)
    return _subgradient(x, R, cfg.scale)


def _subgradient(x, R, scale):
    n_star = int(np.argmax(inner_terms(x, R)))
    g = np.zeros(x.size)
    g[: n_star + 1] = scale * R[n_star] * np.arange(1, n_star + 2)
    return g


@dataclass(frozen=True)
class SubgradientConfig:
    """Hyperparameters of the stochastic projected subgradient method.

    ``step_constant=None`` picks ``L / (E[T_(N)] (M/N) b N)``. ``init`` is
    ``"uniform"``, ``"closed-t"``, ``"closed-f"`` or an explicit vector.
    """

    max_iters: int = 20_000
    step_constant: float | None = None
    batch: int = 1
    seed: int = 0
    eval_every: int = 100
    select_draws: int = 2_000
    final_draws: int = 10_000
    init: object = "uniform"

    def __post_init__(self):
        if self.max_iters < 1 or self.batch < 1:
            raise ValueError("max_iters and batch must be >= 1")
        if self.step_constant is not None and not self.step_constant > 0:
            raise ValueError("step_constant must be > 0")
        if self.eval_every < 1 or self.select_draws < 2 or self.final_draws < 2:
            raise ValueError("eval_every >= 1, select_draws >= 2 and final_draws >= 2 required")


@dataclass(frozen=True)
class SolveReport:
    allocation: BlockAllocation
    objective: RuntimeEstimate
    iterations: int
    step_constant: float = float("nan")
    history: tuple = field(default=(), repr=False)


def expected_slowest(dist, n_workers: int, rng=None) -> float:
    return float(summarize(dist, n_workers, rng).t_mean[-1])


def _initial_point(init, cfg: SystemConfig, dist) -> np.ndarray:
    N, L = cfg.n_workers, cfg.model_size
    if isinstance(init, str):
        if init == "uniform":
            return np.full(N, L / N)
        if init == "closed-t":
            return closed_form_t(cfg, summarize(dist, N).t_mean).x.copy()
        if init == "closed-f":
            return closed_form_f(cfg, summarize(dist, N).t_harmonic).x.copy()
        raise ValueError(f"unknown init {init!r}")
    return project_onto_feasible(np.asarray(init, dtype=float), L)


def solve_subgradient(cfg: SystemConfig, dist, sg: SubgradientConfig = SubgradientConfig()) -> SolveReport:
    """Stochastic projected subgradient descent on the relaxed problem.

    Steps are ``c / sqrt(k)``. Every ``eval_every`` iterations the iterate
    is scored on a fixed selection set of draws and the best one is kept;
    the winner is then re-scored on fresh draws for the reported estimate.
    """
    N, L = cfg.n_workers, cfg.model_size
    sub_seq, sel_seq, fin_seq, aux_seq = np.random.SeedSequence(sg.seed).spawn(4)
    final = sample_sorted_draws(dist, N, sg.final_draws, np.random.default_rng(fin_seq))
    if N == 1:
        alloc = BlockAllocation([float(L)])
        return SolveReport(alloc, evaluate_allocation(alloc, final, cfg), 0)

    c = sg.step_constant
    if c is None:
        c = L / (expected_slowest(dist, N, np.random.default_rng(aux_seq)) * cfg.scale * N)

    sel = sample_sorted_draws(dist, N, sg.select_draws, np.random.default_rng(sel_seq))
    rng = np.random.default_rng(sub_seq)
    scale = cfg.scale

    x = _initial_point(sg.init, cfg, dist)
    best_x = x.copy()
    best_val = runtime_tau_hat_batch(x, sel, cfg).mean()
    history = [(0, best_val)]

    chunk = max(1, 4096 // sg.batch)
    k = 0
    while k < sg.max_iters:
        m = min(chunk, sg.max_iters - k)
        draws = sort_desc(dist.sample(rng, N, m * sg.batch)).reshape(m, sg.batch, N)
        for j in range(m):
            k += 1
            if sg.batch == 1:
                g = _subgradient(x, draws[j, 0], scale)
            else:
                g = np.mean([_subgradient(x, R, scale) for R in draws[j]], axis=0)
            x = project_onto_feasible(x - (c / np.sqrt(k)) * g, L)
            if k % sg.eval_every == 0:
                val = runtime_tau_hat_batch(x, sel, cfg).mean()
                history.append((k, val))
                if val < best_val:
                    best_val, best_x = val, x.copy()

    alloc = BlockAllocation(best_x)
    return SolveReport(alloc, evaluate_allocation(alloc, final, cfg), k, c, tuple(history))


def closed_form(cfg: SystemConfig, t) -> BlockAllocation:
    """Minimizer of ``tau_hat(x, t)`` for a deterministic nondecreasing ``t``.

    Every inner term ``t_{N-n} sum_{i<=n} (i+1) x_i`` equals
    ``m = L / (sum_{n=1}^{N-1} 1/(n(n+1) t_{N+1-n}) + 1/(N t_1))``.
    """
    t = np.asarray(t, dtype=float)
    N, L = cfg.n_workers, cfg.model_size
    if t.shape != (N,):
        raise ValueError(f"t must have length N={N}")
    if not np.all(np.isfinite(t)) or np.any(t <= 0):
        raise ValueError("t must be finite and positive")
    if np.any(np.diff(t) < 0):
        raise ValueError("t must be nondecreasing")
    m = closed_form_level(t, L)
    x = np.empty(N)
    x[0] = m / t[N - 1]
    n = np.arange(1, N)
    # 1-based t_{N-n} and t_{N+1-n} are 0-based t[N-1-n] and t[N-n].
    x[1:] = (1.0 / t[N - 1 - n] - 1.0 / t[N - n]) * m / (n + 1)
    return BlockAllocation(x)


def closed_form_level(t, L) -> float:
    """The common inner-term value ``m`` of the closed-form allocation."""
    t = np.asarray(t, dtype=float)
    N = t.size
    n = np.arange(1, N)
    return L / (np.sum(1.0 / (n * (n + 1) * t[N - n])) + 1.0 / (N * t[0]))


def closed_form_t(cfg: SystemConfig, t_mean) -> BlockAllocation:
    """Closed form at the order-statistic means ``E[T_(n)]``."""
    return closed_form(cfg, t_mean)


def closed_form_f(cfg: SystemConfig, t_harmonic) -> BlockAllocation:
    """Closed form at the harmonic means ``1 / E[1 / T_(n)]``."""
    return closed_form(cfg, t_harmonic)


def largest_remainder(x, total: int) -> np.ndarray:
    """Floor every entry, then hand the leftover units to the largest fractional parts.

    Ties go to the larger index.
    """
    x = np.asarray(x, dtype=float)
    base = np.floor(x)
    frac = x - base
    left = int(round(total - base.sum()))
    if not 0 <= left <= x.size:
        raise ValueError("allocation total is inconsistent with the target")
    idx = np.arange(x.size)
    order = np.lexsort((-idx, -frac))
    out = base.astype(np.int64)
    out[order[:left]] += 1
    return out


def local_search(x, sorted_draws: np.ndarray, cfg: SystemConfig, max_passes: int = 5) -> np.ndarray:
    """1-opt over single-unit transfers between levels, scored on shared draws.

    For each source level the best destination is tried; the move is kept
    only when it strictly lowers the sample-mean runtime.
    """
    x = np.array(x, dtype=np.int64)
    N = x.size
    w = np.arange(1, N + 1)
    # Adding one unit at level k raises every weight from k onward by (k + 1).
    bump = np.triu(np.ones((N, N))) * w[:, None]
    cur = runtime_tau_hat_batch(x, sorted_draws, cfg).mean()
    for _ in range(max_passes):
        improved = False
        for j in np.flatnonzero(x > 0):
            if x[j] == 0:
                continue
            W = np.cumsum(w * x) - w[j] * (np.arange(N) >= j)
            cand = W[None, :] + bump
            vals = cfg.scale * (sorted_draws[:, None, :] * cand[None]).max(axis=-1).mean(axis=0)
            vals[j] = np.inf
            k = int(np.argmin(vals))
            if vals[k] < cur * (1 - 1e-12):
                x[j] -= 1
                x[k] += 1
                cur = vals[k]
                improved = True
        if not improved:
            break
    return x


def round_allocation(
    alloc: BlockAllocation,
    cfg: SystemConfig,
    dist,
    eval_draws: int = 1_000,
    rng=None,
    max_passes: int = 5,
) -> BlockAllocation:
    """Integer allocation near a relaxed one.

    Largest-remainder rounding followed by :func:`local_search` over
    ``eval_draws`` common draws. Allocations that are already integral
    are returned as they are.
    """
    alloc.check(cfg)
    if alloc.integer:
        return alloc
    if np.all(alloc.x == np.round(alloc.x)) and np.round(alloc.x).sum() == cfg.model_size:
        return BlockAllocation(np.round(alloc.x).astype(np.int64), integer=True)
    x = largest_remainder(alloc.x, cfg.model_size)
    if eval_draws > 0 and max_passes > 0:
        draws = sample_sorted_draws(dist, cfg.n_workers, eval_draws, rng)
        x = local_search(x, draws, cfg, max_passes)
    return BlockAllocation(x, integer=True)


def single_block_objectives(sorted_draws: np.ndarray, cfg: SystemConfig) -> np.ndarray:
    """Mean runtime of ``L e_n`` for every level n over shared draws.

    With all mass at level n the maximal inner term is the n-th one, so
    the runtime is ``(M/N) b (n+1) L T_(N-n)``.
    """
    n = np.arange(1, cfg.n_workers + 1)
    return cfg.scale * cfg.model_size * n * sorted_draws.mean(axis=0)


def solve_single_block(cfg: SystemConfig, dist, eval_draws: int = 10_000, rng=None) -> BlockAllocation:
    """Best allocation with a single nonzero level (ties to the smaller level)."""
    draws = sample_sorted_draws(dist, cfg.n_workers, eval_draws, rng)
    best = int(np.argmin(single_block_objectives(draws, cfg)))
    x = np.zeros(cfg.n_workers, dtype=np.int64)
    x[best] = cfg.model_size
    return BlockAllocation(x, integer=True)


def gap_bounds(n_workers: int, dist: ShiftedExponential) -> tuple:
    """Analytic upper bounds on the suboptimality ratios of the closed forms.

    Returns ``((H_N + 1)(H_N + mu t0) / (mu t0)^2, H_N / (mu t0) + 1)`` for
    the mean-based and harmonic-mean-based allocations respectively.
    The first expression can drop below 1 for large ``mu t0``; callers
    comparing ratios should clamp at 1.
    """
    if not dist.t0 > 0:
        raise ValueError("gap bounds need t0 > 0")
    H = harmonic_numbers(n_workers)[-1]
    a = dist.mu * dist.t0
    return (H + 1) * (H + a) / a**2, H / a + 1

