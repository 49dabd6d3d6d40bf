"""Overall-runtime model and the coordinate/block change of variables.

A coding profile ``s`` assigns each of the L gradient coordinates a
straggler tolerance in ``0..N-1``. Worker n finishes coordinate l at
``(M/N) b T_n sum_{i<=l} (s_i + 1)`` and the master recovers coordinate l
once the ``N - s_l`` fastest workers have delivered it.

For a sorted profile the same runtime is a function of the block counts
``x_n = #{l : s_l = n}``, which is what the optimizers work with.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Relaxed allocations may miss their total by this much (relative).
SUM_RTOL = 1e-9


@dataclass(frozen=True)
class SystemConfig:
    """N workers, L coordinates, M samples, b CPU cycles per coordinate per sample."""

    n_workers: int
    model_size: int
    n_samples: int
    cycles_per_coordinate: float = 1

    def __post_init__(self):
        for name in ("n_workers", "model_size", "n_samples"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ValueError(f"{name} must be a positive integer, got {v!r}")
        if not self.cycles_per_coordinate > 0:
            raise ValueError(f"cycles_per_coordinate must be > 0, got {self.cycles_per_coordinate!r}")

    def scaled(self, value):
        """``(M/N) b value``, exact when ``value`` is a Fraction and b an int."""
        return self.n_samples * self.cycles_per_coordinate * value / self.n_workers

    @property
    def scale(self) -> float:
        return self.n_samples * self.cycles_per_coordinate / self.n_workers


@dataclass(frozen=True)
class BlockAllocation:
    """Number of coordinates at each redundancy level ``0..N-1``."""

    x: np.ndarray
    integer: bool = False

    def __post_init__(self):
        x = np.asarray(self.x, dtype=np.int64 if self.integer else float)
        if x.ndim != 1 or x.size == 0:
            raise ValueError("allocation must be a nonempty vector")
        if self.integer and not np.array_equal(x, np.asarray(self.x)):
            raise ValueError("integer allocation has non-integer entries")
        if np.any(x < 0) or not np.all(np.isfinite(x)):
            raise ValueError("allocation entries must be finite and nonnegative")
        x.setflags(write=False)
        object.__setattr__(self, "x", x)

    @property
    def n_levels(self) -> int:
        return self.x.size

    @property
    def total(self):
        return int(self.x.sum()) if self.integer else float(self.x.sum())

    def check(self, cfg: SystemConfig) -> None:
        if self.n_levels != cfg.n_workers:
            raise ValueError(f"allocation has {self.n_levels} levels, expected N={cfg.n_workers}")
        L = cfg.model_size
        if self.integer:
            if self.total != L:
                raise ValueError(f"integer allocation sums to {self.total}, expected L={L}")
        elif abs(self.total - L) > SUM_RTOL * L:
            raise ValueError(f"allocation sums to {self.total!r}, expected L={L}")


def check_profile(s, n_workers: int) -> np.ndarray:
    s = np.asarray(s)
    if s.ndim != 1 or s.size == 0:
        raise ValueError("coding profile must be a nonempty vector")
    if not np.issubdtype(s.dtype, np.integer):
        if not np.all(np.mod(s, 1) == 0):
            raise ValueError("coding profile entries must be integers")
        s = s.astype(np.int64)
    if s.min() < 0 or s.max() > n_workers - 1:
        raise ValueError(f"coding profile entries must lie in 0..{n_workers - 1}")
    return s


def _draw(draw, n_workers: int) -> np.ndarray:
    T = np.asarray(draw)
    if T.shape[-1] != n_workers:
        raise ValueError(f"draw has {T.shape[-1]} workers, expected N={n_workers}")
    return T


def runtime_tau(s, draw, cfg: SystemConfig):
    """Overall runtime of coding profile ``s`` for one draw of cycle times.

    ``(M/N) b max_l T_(N - s_l) sum_{i<=l} (s_i + 1)``. Works on Fractions
    as well as floats, so small examples can be checked exactly.
    """
    s = check_profile(s, cfg.n_workers)
    if s.size != cfg.model_size:
        raise ValueError(f"profile has {s.size} coordinates, expected L={cfg.model_size}")
    T = np.sort(_draw(draw, cfg.n_workers))
    work = np.cumsum(s + 1)
    # T_(N - s_l) is index N - 1 - s_l of the ascending sort.
    return cfg.scaled(max(T[cfg.n_workers - 1 - s] * work))


def inner_terms(x, sorted_desc) -> np.ndarray:
    """``T_(N-n) * sum_{i<=n} (i+1) x_i`` for n = 0..N-1 (unscaled).

    ``sorted_desc`` holds draws sorted in decreasing order along the last
    axis, so that entry n is ``T_(N-n)``.
    """
    x = np.asarray(x)
    weights = np.cumsum(np.arange(1, x.size + 1) * x)
    return sorted_desc * weights


def sort_desc(draws) -> np.ndarray:
    return np.sort(np.asarray(draws), axis=-1)[..., ::-1]


def runtime_tau_hat(alloc: BlockAllocation, draw, cfg: SystemConfig):
    """Block-form runtime ``(M/N) b max_n T_(N-n) sum_{i<=n} (i+1) x_i``."""
    alloc.check(cfg)
    T = _draw(draw, cfg.n_workers)
    if T.ndim != 1:
        raise ValueError("runtime_tau_hat takes a single draw; use runtime_tau_hat_batch")
    return cfg.scaled(max(inner_terms(alloc.x, sort_desc(T))))


def runtime_tau_hat_batch(x, sorted_desc: np.ndarray, cfg: SystemConfig) -> np.ndarray:
    """Runtimes of allocation ``x`` over many pre-sorted (decreasing) draws."""
    return cfg.scale * inner_terms(x, sorted_desc).max(axis=-1)


def s_to_x(s, n_workers: int) -> BlockAllocation:
    """Count coordinates per level of a nondecreasing profile."""
    s = check_profile(s, n_workers)
    if np.any(np.diff(s) < 0):
        raise ValueError("coding profile must be nondecreasing to map to a block allocation")
    return BlockAllocation(np.bincount(s, minlength=n_workers), integer=True)


def x_to_s(alloc: BlockAllocation) -> np.ndarray:
    """Sorted profile: ``s_l = min{i : x_0 + ... + x_i >= l}`` for l = 1..L."""
    if not alloc.integer:
        raise ValueError("x_to_s needs an integer allocation; round relaxed allocations first")
    cum = np.cumsum(alloc.x)
    L = int(cum[-1])
    return np.searchsorted(cum, np.arange(1, L + 1), side="left").astype(np.int64)


def uniform_allocation(level: int, cfg: SystemConfig) -> BlockAllocation:
    """All L coordinates at one tolerance level (classic gradient coding)."""
    if not 0 <= level < cfg.n_workers:
        raise ValueError(f"level must lie in 0..{cfg.n_workers - 1}, got {level}")
    x = np.zeros(cfg.n_workers, dtype=np.int64)
    x[level] = cfg.model_size
    return BlockAllocation(x, integer=True)


@dataclass(frozen=True)
class RuntimeEstimate:
    mean: float
    half_width_95: float
    n_draws: int

    @classmethod
    def from_samples(cls, values) -> "RuntimeEstimate":
        v = np.asarray(values, dtype=float)
        if v.size < 2:
            raise ValueError("need at least two samples for a confidence interval")
        return cls(float(v.mean()), float(1.96 * v.std(ddof=1) / np.sqrt(v.size)), int(v.size))


def sample_sorted_draws(dist, n_workers: int, n_draws: int, rng) -> np.ndarray:
    """``n_draws`` i.i.d. draws, each sorted in decreasing order."""
    return sort_desc(dist.sample(np.random.default_rng(rng), n_workers, n_draws))


def evaluate_allocation(alloc: BlockAllocation, sorted_draws: np.ndarray, cfg: SystemConfig) -> RuntimeEstimate:
    """Monte Carlo runtime of ``alloc`` over a given (shared) set of draws."""
    alloc.check(cfg)
    return RuntimeEstimate.from_samples(runtime_tau_hat_batch(alloc.x, sorted_draws, cfg))
