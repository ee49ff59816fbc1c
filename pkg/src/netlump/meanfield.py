"""Right-hand sides of the MF, DBMF, PA and AME equations.

Array layouts (all flattened s-major by the solver):

* MF    ``x[s]``
* DBMF  ``x[s, c]``           c indexes degree classes
* PA    ``x[s, c]``, ``p[s, c, n]``  p[s, c, n]: probability that a random
  neighbour of an (s, c) node is in state n
* AME   ``x[s, r]``           r indexes (k, m) rows of an :class:`AmeLayout`

The DBMF and PA kernels work on generic *degree classes*: a class carries a
weight and the statistics <k>, <k-1>, <k(k-1)> of its member degrees. A
single degree is a class with weight P(k) and statistics k, k-1, k(k-1); a
bin of degrees is a class with weight P(b) and bin averages. The lumped
systems in :mod:`netlump.lumping` reuse the same kernels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import gammaln

from .degree import DegreeDistribution
from .errors import ResourceLimitError
from .model import ContactModel, RuleIndex, build_rule_index

__all__ = [
    "EPS_X",
    "EPS_DEN",
    "AME_UNKNOWN_CAP",
    "DegreeClasses",
    "degree_classes",
    "mf_rhs",
    "neighbor_prob",
    "dbmf_rhs",
    "multinomial_m1",
    "multinomial_m2",
    "pa_beta",
    "pa_rhs",
    "enumerate_neighbor_vectors",
    "ame_equation_count",
    "AmeLayout",
    "ame_layout",
    "ame_beta",
    "ame_rhs",
    "multinomial_pmf",
    "marginal",
    "dbmf_unknowns",
    "pa_unknowns",
]

EPS_X = 1e-12
EPS_DEN = 1e-14
AME_UNKNOWN_CAP = 2_000_000


@lru_cache(maxsize=64)
def _cached_index(model: ContactModel) -> RuleIndex:
    return build_rule_index(model)


def rule_index(model) -> RuleIndex:
    if isinstance(model, RuleIndex):
        return model
    return _cached_index(model)


@dataclass(frozen=True, eq=False)
class DegreeClasses:
    weight: np.ndarray
    k1: np.ndarray
    km1: np.ndarray
    kk1: np.ndarray

    @property
    def mean_degree(self) -> float:
        return float(self.weight @ self.k1)

    def __len__(self):
        return len(self.weight)


def degree_classes(d: DegreeDistribution) -> DegreeClasses:
    k = d.degrees.astype(float)
    return DegreeClasses(weight=np.asarray(d.probs), k1=k, km1=k - 1.0, kk1=k * (k - 1.0))


def _classes(d) -> DegreeClasses:
    return d if isinstance(d, DegreeClasses) else degree_classes(d)


# --------------------------------------------------------------------------
# MF / DBMF


def mf_rhs(model, mean_k: float, x: np.ndarray) -> np.ndarray:
    ix = rule_index(model)
    x = np.asarray(x, dtype=float)
    dx = ix.i_net @ (ix.i_rate * x[ix.i_from])
    dx += ix.c_net @ (ix.c_rate * x[ix.c_from] * x[ix.c_ctx] * mean_k)
    return dx


def neighbor_prob(d, x: np.ndarray) -> np.ndarray:
    """Probability that a random neighbour is in each state (uncorrelated network)."""
    cls = _classes(d)
    return (x * (cls.weight * cls.k1)).sum(axis=1) / cls.mean_degree


def dbmf_rhs(model, d, x: np.ndarray) -> np.ndarray:
    ix = rule_index(model)
    cls = _classes(d)
    p = neighbor_prob(cls, x)
    dx = ix.i_net @ (ix.i_rate[:, None] * x[ix.i_from])
    flux = (ix.c_rate * p[ix.c_ctx])[:, None] * x[ix.c_from] * cls.k1
    dx += ix.c_net @ flux
    return dx


# --------------------------------------------------------------------------
# multinomial moments


def multinomial_m1(k, p):
    """Expected count of one category for k draws with probability p."""
    return k * p


def multinomial_m2(k, p_a, p_b, same: bool):
    """E[m_a m_b] of a multinomial; ``same`` selects the a == b case."""
    if same:
        return k * p_a * (1.0 - p_a + k * p_a)
    return k * (k - 1) * p_a * p_b


def multinomial_pmf(ms: np.ndarray, p: np.ndarray) -> np.ndarray:
    """f(m; p) for each row of ``ms`` (all rows summing to the same k), in log space."""
    ms = np.asarray(ms)
    k = ms.sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        logp = np.log(p)
        terms = np.where(ms > 0, ms * logp, 0.0)
    logf = gammaln(k + 1) - gammaln(ms + 1).sum(axis=1) + terms.sum(axis=1)
    return np.exp(logf)


# --------------------------------------------------------------------------
# PA


def _pa_split(y, n_states, n_classes):
    xs = n_states * n_classes
    x = y[:xs].reshape(n_states, n_classes)
    p = y[xs:].reshape(n_states, n_classes, n_states)
    return x, p


def pa_beta(model, d, x: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Edge-change rates ``beta[s, s1, s2]`` for an (s, s1) edge becoming (s, s2).

    The denominator <x_{s1} M1_{s1}[s]> below ``EPS_DEN`` yields beta = 0.
    """
    ix = rule_index(model)
    cls = _classes(d)
    return _pa_beta(ix, cls, x, p)


def _pa_beta(ix: RuleIndex, cls: DegreeClasses, x, p):
    n = ix.n_states
    wx = cls.weight * x
    # den[a, s] = < x_a M1_a[s] >
    den = np.einsum("ac,acs->as", wx * cls.k1, p)
    num = np.einsum("as,ab->sab", den, ix.i_pair_rate)
    if len(ix.c_rate):
        pr = p[ix.c_from, :, ix.c_ctx]
        t = np.einsum("jc,jcs->js", wx[ix.c_from] * cls.kk1 * pr, p[ix.c_from])
        t[np.arange(len(ix.c_rate)), ix.c_ctx] += den[ix.c_from, ix.c_ctx]
        t *= ix.c_rate[:, None]
        for j in range(len(ix.c_rate)):
            num[:, ix.c_from[j], ix.c_to[j]] += t[j]
    den_t = den.T[:, :, None]  # den_t[s, a] = den[a, s]
    ok = den_t > EPS_DEN
    beta = np.where(ok, num / np.where(ok, den_t, 1.0), 0.0)
    beta[:, np.arange(n), np.arange(n)] = 0.0
    return beta


def _pa_kernel(ix: RuleIndex, cls: DegreeClasses, x, p):
    dx = ix.i_net @ (ix.i_rate[:, None] * x[ix.i_from])
    nc = len(ix.c_rate)
    if nc:
        pr = p[ix.c_from, :, ix.c_ctx]
        dx += ix.c_net @ (ix.c_rate[:, None] * x[ix.c_from] * cls.k1 * pr)

    frozen = x < EPS_X
    inv_x = np.where(frozen, 0.0, 1.0 / np.where(frozen, 1.0, x))

    dp = -(dx * inv_x)[:, :, None] * p
    if len(ix.i_rate):
        g = (ix.i_rate[:, None] * x[ix.i_from] * inv_x[ix.i_to])[:, :, None] * p[ix.i_from]
        dp += np.einsum("si,ick->sck", ix.i_plus, g)
        out_rate = ix.i_pair_rate.sum(axis=1)
        dp -= out_rate[:, None, None] * p
    if nc:
        # E[m[ctx] m[n]] / k under the multinomial closure
        q = (cls.km1 * pr)[:, :, None] * p[ix.c_from]
        q[np.arange(nc), :, ix.c_ctx] += pr
        q *= ix.c_rate[:, None, None]
        dp += np.einsum("sj,jck->sck", ix.c_plus, q * (x[ix.c_from] * inv_x[ix.c_to])[:, :, None])
        dp -= np.einsum("sj,jck->sck", ix.c_minus, q)

    beta = _pa_beta(ix, cls, x, p)
    dp += np.einsum("sca,san->scn", p, beta)
    dp -= p * beta.sum(axis=2)[:, None, :]
    dp[frozen] = 0.0
    return dx, dp


def pa_rhs(model, d, x: np.ndarray, p: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """PA derivatives ``(dx[s, k], dp[s, k, n])``.

    p-derivatives of (s, k) pairs with ``x[s, k] < EPS_X`` are held at zero.
    """
    ix = rule_index(model)
    cls = _classes(d)
    return _pa_kernel(ix, cls, np.asarray(x, float), np.asarray(p, float))


def dbmf_unknowns(n_states: int, n_classes: int) -> int:
    return n_states * n_classes


def pa_unknowns(n_states: int, n_classes: int) -> int:
    return (n_states * n_states + n_states) * n_classes


# --------------------------------------------------------------------------
# AME


def enumerate_neighbor_vectors(k: int, n_states: int, cap: int = AME_UNKNOWN_CAP) -> np.ndarray:
    """All compositions of k into n_states nonnegative parts, lexicographic order."""
    if k < 0 or n_states < 1:
        raise ValueError("need k >= 0 and n_states >= 1")
    count = math.comb(k + n_states - 1, n_states - 1)
    if count > cap:
        raise ResourceLimitError(f"{count} neighbour vectors for k={k} exceed the cap {cap}")
    out = np.empty((count, n_states), dtype=np.int64)
    row = 0
    cur = [0] * n_states

    def fill(pos, remaining):
        nonlocal row
        if pos == n_states - 1:
            cur[pos] = remaining
            out[row] = cur
            row += 1
            return
        for v in range(remaining + 1):
            cur[pos] = v
            fill(pos + 1, remaining - v)

    fill(0, k)
    return out


def ame_equation_count(k_max: int, n_states: int) -> int:
    """Unknowns of the AME for degrees 0..k_max: C(k_max+|S|, |S|-1) (k_max+1)."""
    return math.comb(k_max + n_states, n_states - 1) * (k_max + 1)


@dataclass(frozen=True, eq=False)
class AmeLayout:
    n_states: int
    degrees: np.ndarray  # degree of each row
    m: np.ndarray  # (rows, n_states) neighbour vectors
    weight: np.ndarray  # P(k) of each row
    offsets: np.ndarray  # first row of each degree in d.degrees order
    shift: np.ndarray  # (n_states, n_states, rows): row of m^{a+, b-}, -1 if m[b] == 0

    @property
    def n_rows(self) -> int:
        return len(self.degrees)

    @property
    def n_unknowns(self) -> int:
        return self.n_states * self.n_rows


def ame_layout(d: DegreeDistribution, n_states: int, cap: int = AME_UNKNOWN_CAP) -> AmeLayout:
    rows = sum(math.comb(int(k) + n_states - 1, n_states - 1) for k in d.degrees)
    if rows * n_states > cap:
        raise ResourceLimitError(
            f"AME needs {rows * n_states} unknowns on this support "
            f"({ame_equation_count(d.k_max, n_states)} counting degrees 0..{d.k_max}); cap is {cap}"
        )
    blocks, degs, weights, offsets = [], [], [], []
    start = 0
    for k, pk in zip(d.degrees.tolist(), d.probs.tolist()):
        mk = enumerate_neighbor_vectors(k, n_states, cap)
        offsets.append(start)
        start += len(mk)
        blocks.append(mk)
        degs.append(np.full(len(mk), k))
        weights.append(np.full(len(mk), pk))
    m = np.vstack(blocks)
    lookup = {tuple(r): i for i, r in enumerate(m.tolist())}
    shift = np.full((n_states, n_states, len(m)), -1, dtype=np.int64)
    for a in range(n_states):
        for b in range(n_states):
            if a == b:
                continue
            for i, r in enumerate(m.tolist()):
                if r[b] >= 1:
                    r2 = list(r)
                    r2[a] += 1
                    r2[b] -= 1
                    shift[a, b, i] = lookup[tuple(r2)]
    return AmeLayout(
        n_states=n_states,
        degrees=np.concatenate(degs),
        m=m,
        weight=np.concatenate(weights),
        offsets=np.array(offsets),
        shift=shift,
    )


def ame_beta(model, layout: AmeLayout, x: np.ndarray) -> np.ndarray:
    """beta[s, s1, s2] averaged over the full neighbour-vector distribution."""
    ix = rule_index(model)
    mf = layout.m.astype(float)
    w = layout.weight * x  # (S, rows)
    den = w @ mf  # den[a, s] = < sum_m m[s] x_{a,k,m} >
    num = np.einsum("as,ab->sab", den, ix.i_pair_rate)
    for j in range(len(ix.c_rate)):
        a, b, r = ix.c_from[j], ix.c_to[j], ix.c_ctx[j]
        num[:, a, b] += ix.c_rate[j] * ((w[a] * mf[:, r]) @ mf)
    den_t = den.T[:, :, None]
    ok = den_t > EPS_DEN
    return np.where(ok, num / np.where(ok, den_t, 1.0), 0.0)


def ame_rhs(model, layout: AmeLayout, x: np.ndarray) -> np.ndarray:
    ix = rule_index(model)
    mf = layout.m.astype(float)
    dx = ix.i_net @ (ix.i_rate[:, None] * x[ix.i_from])
    if len(ix.c_rate):
        dx += ix.c_net @ (ix.c_rate[:, None] * x[ix.c_from] * mf[:, ix.c_ctx].T)
    beta = ame_beta(ix, layout, x)
    n = layout.n_states
    for a in range(n):
        for b in range(n):
            if a == b:
                continue
            bab = beta[:, a, b][:, None]
            src = layout.shift[a, b]
            valid = src >= 0
            inflow = np.zeros_like(x)
            inflow[:, valid] = x[:, src[valid]] * (mf[valid, a] + 1.0)
            dx += bab * (inflow - x * mf[:, a])
    return dx


def marginal(weights, x: np.ndarray) -> np.ndarray:
    """Per-state totals sum_c x[s, c] w(c); ``weights`` may be a distribution."""
    if isinstance(weights, DegreeDistribution):
        weights = weights.probs
    elif isinstance(weights, DegreeClasses):
        weights = weights.weight
    return np.asarray(x) @ np.asarray(weights)
