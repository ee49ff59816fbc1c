"""Agglomerative degree clustering, the F(n) error proxy and automatic bin-count selection."""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

import numpy as np

from .degree import DegreeDistribution
from .errors import ValidationError
from .lumping import Partition
from .solver import DEFAULT_ATOL, DEFAULT_RTOL, DEFAULT_SAMPLES, InitSpec, make_system, solve

__all__ = [
    "BinSearchConfig",
    "bin_distance",
    "Dendrogram",
    "build_dendrogram",
    "lumped_trajectory",
    "proxy_error_F",
    "SearchStep",
    "choose_bins",
]


@dataclass(frozen=True)
class BinSearchConfig:
    alpha: float = 0.2
    j_star: int = 5
    j: int = 5
    delta: float = 1e-3
    gamma: float = 2e3
    t_max: float = 30.0
    samples: int = DEFAULT_SAMPLES
    rtol: float = DEFAULT_RTOL
    atol: float = DEFAULT_ATOL

    def __post_init__(self):
        for name in ("alpha", "delta", "gamma", "t_max", "rtol", "atol"):
            v = getattr(self, name)
            if not (v > 0 and math.isfinite(v)):
                raise ValidationError(f"{name} must be positive and finite, got {v!r}")
        for name in ("j_star", "j"):
            if int(getattr(self, name)) < 1:
                raise ValidationError(f"{name} must be a positive integer")
        if self.samples < 2:
            raise ValidationError("samples must be >= 2")


def _homogeneity(lo_i, hi_i, lo_j, hi_j, alpha):
    ki = 0.5 * (lo_i + hi_i)
    kj = 0.5 * (lo_j + hi_j)
    return alpha * abs(ki - kj) / (0.5 * (ki + kj))


def bin_distance(b_i, b_j, d: DegreeDistribution, alpha: float) -> float:
    """Distance between adjacent bins ``(lo, hi)``; zero if either has zero probability."""
    cum = np.concatenate(([0.0], np.cumsum(d.probs)))

    def prob(b):
        lo, hi = b
        return float(cum[hi - d.k_min + 1] - cum[lo - d.k_min])

    pi, pj = prob(b_i), prob(b_j)
    if pi == 0.0 or pj == 0.0:
        return 0.0
    return pi + pj + _homogeneity(b_i[0], b_i[1], b_j[0], b_j[1], alpha)


@dataclass(frozen=True, eq=False)
class Dendrogram:
    """Merge history of the degree support.

    ``removed[i]`` is the left endpoint of the bin absorbed into its left
    neighbour at merge i, so B_n keeps every start except ``removed[:|K|-n]``.
    """

    k_min: int
    k_max: int
    alpha: float
    removed: np.ndarray
    distances: np.ndarray

    @property
    def size(self) -> int:
        return self.k_max - self.k_min + 1

    def partition(self, n: int) -> Partition:
        if not 1 <= n <= self.size:
            raise ValidationError(f"bin count {n} outside [1, {self.size}]")
        keep = np.ones(self.size, dtype=bool)
        keep[self.removed[: self.size - n] - self.k_min] = False
        starts = np.flatnonzero(keep) + self.k_min
        return Partition.from_starts(starts.tolist(), self.k_max)

    def partitions(self):
        """B_n for n = |K| down to 1."""
        for n in range(self.size, 0, -1):
            yield self.partition(n)


def build_dendrogram(d: DegreeDistribution, alpha: float = 0.2) -> Dendrogram:
    """Greedy adjacent merging by minimum distance; ties go to the leftmost pair."""
    K = d.size
    lo = list(range(d.k_min, d.k_max + 1))
    hi = list(lo)
    prob = [float(p) for p in d.probs]
    nxt = list(range(1, K + 1))  # index of the right neighbour (K = none)
    prv = list(range(-1, K - 1))
    alive = [True] * K
    version = [0] * K

    def dist(i, j):
        if prob[i] == 0.0 or prob[j] == 0.0:
            return 0.0
        return prob[i] + prob[j] + _homogeneity(lo[i], hi[i], lo[j], hi[j], alpha)

    # heap entries (distance, left start, left index, left version, right version)
    heap = [(dist(i, i + 1), lo[i], i, 0, 0) for i in range(K - 1)]
    heapq.heapify(heap)
    removed, dists = [], []
    while heap:
        dval, _, i, vi, vj = heapq.heappop(heap)
        j = nxt[i]
        if not alive[i] or j >= K or version[i] != vi or version[j] != vj:
            continue
        removed.append(lo[j])
        dists.append(dval)
        hi[i] = hi[j]
        prob[i] += prob[j]
        alive[j] = False
        nxt[i] = nxt[j]
        if nxt[j] < K:
            prv[nxt[j]] = i
        version[i] += 1
        if prv[i] >= 0:
            h = prv[i]
            heapq.heappush(heap, (dist(h, i), lo[h], h, version[h], version[i]))
        if nxt[i] < K:
            r = nxt[i]
            heapq.heappush(heap, (dist(i, r), lo[i], i, version[i], version[r]))
    return Dendrogram(d.k_min, d.k_max, alpha, np.array(removed, dtype=np.int64), np.array(dists))


def lumped_trajectory(model, d, method, partition, init: InitSpec, cfg: BinSearchConfig):
    system = make_system(model, d, method, partition)
    y0 = system.initial(init)
    return solve(system, y0, cfg.t_max, rtol=cfg.rtol, atol=cfg.atol, samples=cfg.samples)


def _check_method(method):
    if method not in ("dbmf", "pa"):
        raise ValidationError(f"bin search supports dbmf and pa, not {method!r}")


def proxy_error_F(model, d, method, dendrogram: Dendrogram, n: int, cfg: BinSearchConfig,
                  init: InitSpec, cache: dict | None = None) -> float:
    """max over samples and states of |x(t; B_n) - x(t; B_{n-j*})|."""
    _check_method(method)
    if n - cfg.j_star < 1:
        raise ValidationError(f"n - j* = {n - cfg.j_star} < 1")
    cache = {} if cache is None else cache

    def marg(m):
        if m not in cache:
            cache[m] = lumped_trajectory(model, d, method, dendrogram.partition(m), init, cfg).marginals
        return cache[m]

    n_hi = min(n, dendrogram.size)
    n_lo = min(n - cfg.j_star, dendrogram.size)
    if dendrogram.partition(n_hi) == dendrogram.partition(n_lo):
        return 0.0
    return float(np.abs(marg(n_hi) - marg(n_lo)).max())


@dataclass(frozen=True)
class SearchStep:
    n: int
    F: float
    grad: float


@dataclass
class SearchResult:
    n: int
    steps: list[SearchStep] = field(default_factory=list)
    capped: bool = False


def choose_bins(model, d, method, dendrogram: Dendrogram, cfg: BinSearchConfig = BinSearchConfig(),
                init: InitSpec | None = None) -> tuple[int, SearchResult]:
    """Increase n until the F(n) slope over a lookahead of j falls within delta.

    Starts at n = j + j* + 1 and steps by max(1, floor(-gamma * grad)); n is
    capped at |K|.
    """
    _check_method(method)
    if init is None:
        raise ValidationError("choose_bins needs an initial-condition spec")
    K = dendrogram.size
    n = cfg.j + cfg.j_star + 1
    res = SearchResult(n=K)
    if n >= K:
        res.capped = True
        return K, res
    cache: dict = {}
    fvals: dict[int, float] = {}

    def F(m):
        if m not in fvals:
            fvals[m] = proxy_error_F(model, d, method, dendrogram, m, cfg, init, cache)
        return fvals[m]

    while True:
        grad = F(n) - F(n - cfg.j)
        res.steps.append(SearchStep(n, fvals[n], grad))
        if abs(grad) <= cfg.delta:
            res.n = n
            return n, res
        step = max(1, math.floor(-cfg.gamma * grad))
        if n + step >= K:
            res.n, res.capped = K, True
            return K, res
        n += step
