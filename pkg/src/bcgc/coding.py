"""Per-coordinate gradient encoding and decoding with cyclic supports.

The dataset is split into N equal subsets. Worker n (0-based) holds the
cyclic window ``n, n+1, ..., n+s_max (mod N)`` and, for a coordinate
with tolerance s, sends one linear combination of the first ``s+1``
per-subset partial derivatives in its window. A level-s code matrix has
the property that the all-ones vector lies in the row span of any
``N - s`` of its rows, so the master can rebuild the full partial
derivative from the fastest ``N - s`` workers.
"""

from __future__ import annotations

import itertools
import math
import threading
from dataclasses import dataclass, field

import numpy as np

from .runtime import SystemConfig, check_profile

DECODE_TOL = 1e-10

# Exhaustive decodability checks beyond this many subsets fall back to sampling.
_EXHAUSTIVE_LIMIT = 20_000


class DecodingError(RuntimeError):
    """Raised when an active set cannot reproduce the all-ones combination."""


class InsufficientArrivalsError(RuntimeError):
    pass


@dataclass(frozen=True)
class SampleAssignment:
    """Dataset partition and the cyclic subset window held by each worker."""

    subsets: tuple
    worker_subsets: tuple

    @property
    def n_workers(self) -> int:
        return len(self.worker_subsets)


def cyclic_window(worker: int, width: int, n_workers: int) -> tuple:
    return tuple((worker + j) % n_workers for j in range(width))


def allocate_samples(cfg: SystemConfig, profile, rng=None) -> SampleAssignment:
    """Partition M sample indices into N subsets and hand out cyclic windows.

    Only the profile is consulted; worker speeds are unknown to the master
    at this point.
    """
    N, M = cfg.n_workers, cfg.n_samples
    if M % N:
        raise ValueError(f"n_samples={M} must be divisible by n_workers={N}")
    s = check_profile(profile, N)
    width = int(s.max()) + 1
    perm = np.random.default_rng(rng).permutation(M)
    subsets = tuple(np.sort(chunk) for chunk in np.split(perm, N))
    windows = tuple(cyclic_window(n, width, N) for n in range(N))
    return SampleAssignment(subsets=subsets, worker_subsets=windows)


@dataclass(frozen=True)
class CodeMatrix:
    """Row n holds worker n's coefficients over the N per-subset partials."""

    level: int
    B: np.ndarray

    def __post_init__(self):
        B = np.array(self.B, dtype=float)
        N = B.shape[0]
        if B.shape != (N, N) or not 0 <= self.level < N:
            raise ValueError("code matrix must be N x N with level in 0..N-1")
        B.setflags(write=False)
        object.__setattr__(self, "B", B)

    @property
    def n_workers(self) -> int:
        return self.B.shape[0]

    def support(self, worker: int) -> tuple:
        return cyclic_window(worker, self.level + 1, self.n_workers)


def _residual(B_active: np.ndarray, a: np.ndarray) -> float:
    return float(np.max(np.abs(a @ B_active - 1.0)))


def _solve(B_active: np.ndarray) -> np.ndarray:
    a, *_ = np.linalg.lstsq(B_active.T, np.ones(B_active.shape[1]), rcond=None)
    return a


def _active_sets(N: int, k: int, rng):
    total = math.comb(N, k)
    if total <= _EXHAUSTIVE_LIMIT:
        yield from itertools.combinations(range(N), k)
        return
    for _ in range(2000):
        yield tuple(sorted(rng.choice(N, size=k, replace=False)))


def is_decodable(code: CodeMatrix, rng=None) -> bool:
    """Check every (N - s)-subset of workers (sampled when there are too many)."""
    N, s = code.n_workers, code.level
    rng = np.random.default_rng(rng)
    for A in _active_sets(N, N - s, rng):
        B_A = code.B[list(A)]
        if _residual(B_A, _solve(B_A)) > DECODE_TOL:
            return False
    return True


def build_code_matrix(n_workers: int, level: int, rng=None, max_tries: int = 50) -> CodeMatrix:
    """Random cyclic-support code tolerating ``level`` stragglers.

    A random ``s x N`` matrix H with zero row sums fixes an (N - s)-dim
    subspace ``null(H)`` containing the all-ones vector. Each row of B is
    chosen in that subspace with support on its cyclic window, so any
    N - s linearly independent rows span it. Coefficients are redrawn
    until every (N - s)-subset decodes to tolerance.
    """
    N, s = n_workers, level
    if N < 1 or not 0 <= s <= N - 1:
        raise ValueError(f"level must lie in 0..{N - 1}, got {level}")
    if s == 0:
        return CodeMatrix(0, np.eye(N))
    rng = np.random.default_rng(rng)
    for _ in range(max_tries):
        H = rng.standard_normal((s, N))
        H[:, -1] = -H[:, :-1].sum(axis=1)
        B = np.zeros((N, N))
        for n in range(N):
            supp = list(cyclic_window(n, s + 1, N))
            lead, rest = supp[0], supp[1:]
            sub = H[:, rest]
            if abs(np.linalg.det(sub)) < 1e-8:
                break
            B[n, lead] = 1.0
            B[n, rest] = np.linalg.solve(sub, -H[:, lead])
        else:
            code = CodeMatrix(s, B)
            if is_decodable(code, rng):
                return code
    raise DecodingError(f"could not build a decodable level-{s} code for N={N}")


# Worked N = 4 codes with hand-picked coefficients (levels 1 and 2).
REFERENCE_CODES_N4 = {
    1: np.array(
        [
            [1.0, -1.0, 0.0, 0.0],
            [0.0, 1.0, 1.0, 0.0],
            [0.0, 0.0, 1.0, -1.0],
            [1.0, 0.0, 0.0, 1.0],
        ]
    ),
    2: np.array(
        [
            [1.0, 1 / 3, 2 / 3, 0.0],
            [0.0, 1.0, 1 / 2, 3 / 2],
            [2.0, 0.0, 1.0, -1.0],
            [-1 / 2, 1 / 2, 0.0, 1.0],
        ]
    ),
}


def decode_coefficients(code: CodeMatrix, active_workers) -> np.ndarray:
    """Coefficients ``a`` with ``a @ B[active] == 1`` (one per active worker)."""
    active = sorted(set(int(w) for w in active_workers))
    N, s = code.n_workers, code.level
    if any(not 0 <= w < N for w in active):
        raise ValueError(f"worker indices must lie in 0..{N - 1}")
    if len(active) < N - s:
        raise DecodingError(f"level-{s} code needs {N - s} workers, got {len(active)}")
    B_A = code.B[active]
    a = _solve(B_A)
    if _residual(B_A, a) > DECODE_TOL:
        raise DecodingError(f"active set {active} cannot decode the level-{s} code")
    return a


@dataclass
class CodeBook:
    """One code matrix per tolerance level, with a decode cache.

    Coordinates in the same block share a level and therefore a matrix.
    The cache is keyed by (level, active set); reads are lock-free and
    insertion happens under a lock.
    """

    codes: dict
    _cache: dict = field(default_factory=dict, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    @classmethod
    def for_profile(cls, profile, n_workers: int, rng=None) -> "CodeBook":
        rng = np.random.default_rng(rng)
        levels = sorted(set(int(v) for v in check_profile(profile, n_workers)))
        return cls({lv: build_code_matrix(n_workers, lv, rng) for lv in levels})

    def decode(self, level: int, active) -> np.ndarray:
        key = (level, tuple(sorted(int(w) for w in active)))
        a = self._cache.get(key)
        if a is None:
            a = decode_coefficients(self.codes[level], key[1])
            with self._lock:
                self._cache.setdefault(key, a)
        return a


@dataclass
class GradientWorkspace:
    """Coded partial derivatives ``coded[n, l]`` sent by each worker."""

    coded: np.ndarray
    profile: np.ndarray


def encode_partials(book: CodeBook, profile, subset_grads: np.ndarray, assignment: SampleAssignment) -> GradientWorkspace:
    """Each worker combines the per-subset partials it holds, coordinate by coordinate.

    ``subset_grads[i, l]`` is the l-th partial derivative over subset i.
    """
    s = np.asarray(profile)
    N, L = subset_grads.shape
    coded = np.zeros((N, L))
    for level in np.unique(s):
        cols = np.flatnonzero(s == level)
        B = book.codes[int(level)].B
        for n in range(N):
            supp = list(cyclic_window(n, int(level) + 1, N))
            if not set(supp) <= set(assignment.worker_subsets[n]):
                raise ValueError(f"worker {n} does not hold the subsets its level-{level} code needs")
            coded[n, cols] = B[n, supp] @ subset_grads[np.ix_(supp, cols)]
    return GradientWorkspace(coded=coded, profile=s)


def completion_schedule(profile, draw, cfg: SystemConfig) -> np.ndarray:
    """``arrivals[n, l]``: when worker n delivers coded coordinate l.

    Workers compute coordinates in order 1..L, each costing
    ``(M/N) b T_n (s_l + 1)``.
    """
    s = check_profile(profile, cfg.n_workers)
    T = np.asarray(draw, dtype=float)
    return cfg.scale * np.outer(T, np.cumsum(s + 1))


def recovery_times(profile, arrivals: np.ndarray) -> np.ndarray:
    """Time at which the master holds N - s_l deliveries of each coordinate l."""
    s = np.asarray(profile)
    N = arrivals.shape[0]
    ordered = np.sort(arrivals, axis=0)
    return ordered[N - 1 - s, np.arange(s.size)]


def recover_gradient(workspace: GradientWorkspace, book: CodeBook, arrivals: np.ndarray) -> np.ndarray:
    """Decode each coordinate from its ``N - s_l`` earliest deliveries.

    ``arrivals`` may contain ``inf`` for deliveries that never happen.
    """
    s = workspace.profile
    N, L = workspace.coded.shape
    if arrivals.shape != (N, L):
        raise ValueError(f"arrivals must have shape {(N, L)}, got {arrivals.shape}")
    order = np.argsort(arrivals, axis=0, kind="stable")
    grad = np.empty(L)
    for l in range(L):
        need = N - int(s[l])
        active = order[:need, l]
        if not np.all(np.isfinite(arrivals[active, l])):
            raise InsufficientArrivalsError(f"coordinate {l} has fewer than {need} deliveries")
        a = book.decode(int(s[l]), active)
        grad[l] = a @ workspace.coded[np.sort(active), l]
    return grad
