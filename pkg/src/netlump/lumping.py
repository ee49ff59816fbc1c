"""Degree-bin partitions and the lumped DBMF / PA systems.

Bins of zero probability carry no unknowns: lumped state arrays are indexed
by the *active* bins (P(b) > 0) only, in increasing degree order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .degree import DegreeDistribution
from .errors import ValidationError
from .meanfield import DegreeClasses, _pa_beta, _pa_kernel, dbmf_rhs, rule_index

__all__ = [
    "Partition",
    "BinStats",
    "bin_stats",
    "lumped_classes",
    "lumped_dbmf_rhs",
    "lumped_pa_beta",
    "lumped_pa_rhs",
    "project",
    "lift",
]


@dataclass(frozen=True)
class Partition:
    """Ordered contiguous degree bins ``(k_low, k_high)``, both ends inclusive."""

    bins: tuple[tuple[int, int], ...]

    def __post_init__(self):
        bins = tuple((int(lo), int(hi)) for lo, hi in self.bins)
        if not bins:
            raise ValidationError("partition has no bins")
        for lo, hi in bins:
            if hi < lo:
                raise ValidationError(f"empty bin [{lo}, {hi}]")
        for (_, hi), (lo, _) in zip(bins, bins[1:]):
            if lo != hi + 1:
                raise ValidationError("bins must be contiguous, disjoint and increasing")
        object.__setattr__(self, "bins", bins)

    def __len__(self):
        return len(self.bins)

    @property
    def k_min(self) -> int:
        return self.bins[0][0]

    @property
    def k_max(self) -> int:
        return self.bins[-1][1]

    @classmethod
    def singletons(cls, d: DegreeDistribution) -> "Partition":
        return cls(tuple((k, k) for k in range(d.k_min, d.k_max + 1)))

    @classmethod
    def whole(cls, d: DegreeDistribution) -> "Partition":
        return cls(((d.k_min, d.k_max),))

    @classmethod
    def from_starts(cls, starts, k_max: int) -> "Partition":
        starts = list(starts)
        ends = [s - 1 for s in starts[1:]] + [k_max]
        return cls(tuple(zip(starts, ends)))

    def starts(self) -> np.ndarray:
        return np.array([lo for lo, _ in self.bins])

    def check_covers(self, d: DegreeDistribution):
        if self.k_min != d.k_min or self.k_max != d.k_max:
            raise ValidationError(
                f"partition covers [{self.k_min}, {self.k_max}] but the support is [{d.k_min}, {d.k_max}]"
            )

    def to_json(self) -> str:
        return json.dumps([list(b) for b in self.bins])

    @classmethod
    def from_json(cls, text: str) -> "Partition":
        try:
            raw = json.loads(text)
            return cls(tuple((int(a), int(b)) for a, b in raw))
        except (TypeError, ValueError) as e:
            if isinstance(e, ValidationError):
                raise
            raise ValidationError(f"bad partition JSON: {e}") from None


@dataclass(frozen=True, eq=False)
class BinStats:
    prob: np.ndarray  # P(b), all bins
    cond: np.ndarray  # P(k | b) per support degree; NaN inside zero-probability bins
    mean_k: np.ndarray  # <k>_b   (NaN where undefined)
    mean_km1: np.ndarray  # <k-1>_b
    mean_kk1: np.ndarray  # <k(k-1)>_b
    bin_of: np.ndarray  # bin position of each support degree

    @property
    def defined(self) -> np.ndarray:
        return self.prob > 0

    @property
    def active(self) -> np.ndarray:
        return np.flatnonzero(self.prob > 0)


def bin_stats(d: DegreeDistribution, partition: Partition) -> BinStats:
    partition.check_covers(d)
    k = d.degrees.astype(float)
    pk = d.probs
    starts = partition.starts() - d.k_min
    prob = np.add.reduceat(pk, starts)
    sum_k = np.add.reduceat(pk * k, starts)
    sum_kk1 = np.add.reduceat(pk * k * (k - 1.0), starts)
    sizes = np.diff(np.append(starts, d.size))
    bin_of = np.repeat(np.arange(len(partition)), sizes)
    defined = prob > 0
    with np.errstate(invalid="ignore", divide="ignore"):
        mean_k = np.where(defined, sum_k / prob, np.nan)
        mean_kk1 = np.where(defined, sum_kk1 / prob, np.nan)
        cond = np.where(defined[bin_of], pk / prob[bin_of], np.nan)
    # single-degree bins: use the exact degree rather than (P k) / P
    single = (sizes == 1) & defined
    ks = k[starts[single]]
    mean_k[single] = ks
    mean_kk1[single] = ks * (ks - 1.0)
    return BinStats(
        prob=prob,
        cond=cond,
        mean_k=mean_k,
        mean_km1=mean_k - 1.0,
        mean_kk1=mean_kk1,
        bin_of=bin_of,
    )


def lumped_classes(stats: BinStats) -> DegreeClasses:
    a = stats.active
    return DegreeClasses(
        weight=stats.prob[a],
        k1=stats.mean_k[a],
        km1=stats.mean_km1[a],
        kk1=stats.mean_kk1[a],
    )


def _get_classes(d, partition, stats) -> DegreeClasses:
    if stats is None:
        stats = bin_stats(d, partition)
    return lumped_classes(stats)


def lumped_dbmf_rhs(model, d, partition, stats, x: np.ndarray) -> np.ndarray:
    """Derivatives of x[s, b] over active bins.

    Neighbour probabilities use the bin aggregate sum_b x[s, b] P(b) <k>_b / <k>.
    """
    return dbmf_rhs(model, _get_classes(d, partition, stats), x)


def lumped_pa_beta(model, d, partition, stats, x: np.ndarray, p: np.ndarray) -> np.ndarray:
    return _pa_beta(rule_index(model), _get_classes(d, partition, stats), x, p)


def lumped_pa_rhs(model, d, partition, stats, x: np.ndarray, p: np.ndarray):
    """Derivatives ``(dx[s, b], dp[s, b, n])`` of the lumped PA over active bins."""
    cls = _get_classes(d, partition, stats)
    return _pa_kernel(rule_index(model), cls, np.asarray(x, float), np.asarray(p, float))


def project(full: np.ndarray, d: DegreeDistribution, partition: Partition, stats: BinStats | None = None):
    """P(k|b)-weighted bin average along axis 1 of ``full`` (shape (S, K, ...)).

    Returns values for active bins only.
    """
    if stats is None:
        stats = bin_stats(d, partition)
    full = np.asarray(full, dtype=float)
    if full.shape[1] != d.size:
        raise ValidationError("state does not match the degree support")
    w = d.probs.reshape((1, -1) + (1,) * (full.ndim - 2))
    sums = np.add.reduceat(full * w, partition.starts() - d.k_min, axis=1)
    a = stats.active
    pb = stats.prob[a].reshape((1, -1) + (1,) * (full.ndim - 2))
    return sums[:, a] / pb


def lift(lumped: np.ndarray, d: DegreeDistribution, partition: Partition, stats: BinStats | None = None):
    """Copy each active bin's value to its member degrees; zero-probability bins become NaN."""
    if stats is None:
        stats = bin_stats(d, partition)
    lumped = np.asarray(lumped, dtype=float)
    a = stats.active
    per_bin = np.full((lumped.shape[0], len(partition)) + lumped.shape[2:], np.nan)
    per_bin[:, a] = lumped
    return per_bin[:, stats.bin_of]
