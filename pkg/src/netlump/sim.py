"""Configuration-model graphs and exact stochastic simulation of contact processes."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass

import numpy as np
from numba import njit

from .degree import DegreeDistribution
from .errors import ResourceLimitError, ValidationError
from .meanfield import rule_index
from .model import ContactModel
from .solver import InitSpec, Trajectory

__all__ = [
    "Graph",
    "SimConfig",
    "sample_degree_sequence",
    "sample_configuration_model",
    "initial_node_states",
    "gillespie",
    "ensemble_mean",
    "simulate",
]


@dataclass(frozen=True, eq=False)
class Graph:
    """Undirected simple graph in CSR form."""

    n_nodes: int
    indptr: np.ndarray
    indices: np.ndarray

    @property
    def degrees(self) -> np.ndarray:
        return np.diff(self.indptr)

    @property
    def n_edges(self) -> int:
        return len(self.indices) // 2

    def neighbors(self, u: int) -> np.ndarray:
        return self.indices[self.indptr[u] : self.indptr[u + 1]]

    @classmethod
    def from_edges(cls, n_nodes: int, edges) -> "Graph":
        e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        src = np.concatenate((e[:, 0], e[:, 1]))
        dst = np.concatenate((e[:, 1], e[:, 0]))
        order = np.lexsort((dst, src))
        src, dst = src[order], dst[order]
        indptr = np.zeros(n_nodes + 1, dtype=np.int64)
        np.add.at(indptr, src + 1, 1)
        return cls(n_nodes, np.cumsum(indptr), dst)

    def is_simple(self) -> bool:
        for u in range(self.n_nodes):
            nb = self.neighbors(u)
            if np.any(nb == u) or len(np.unique(nb)) != len(nb):
                return False
        return True


@dataclass(frozen=True)
class SimConfig:
    n_nodes: int
    runs: int
    seed: int
    t_max: float
    samples: int = 201

    def __post_init__(self):
        if self.n_nodes < 2:
            raise ValidationError("need at least two nodes")
        if self.runs < 1:
            raise ValidationError("need at least one run")
        if not (self.t_max > 0 and math.isfinite(self.t_max)):
            raise ValidationError("t_max must be positive and finite")
        if self.samples < 2:
            raise ValidationError("samples must be >= 2")


def sample_degree_sequence(d: DegreeDistribution, n_nodes: int, rng: np.random.Generator) -> np.ndarray:
    """i.i.d. degrees from P(k); an odd stub total is fixed by bumping one node below k_max."""
    deg = rng.choice(d.degrees, size=n_nodes, p=d.probs)
    if deg.sum() % 2:
        low = np.flatnonzero(deg < d.k_max)
        if len(low) == 0:
            raise ValidationError(f"{n_nodes} nodes of degree {d.k_max} cannot form a graph (odd stub count)")
        deg[rng.choice(low)] += 1
    return deg


def _norm(u, v):
    return (u, v) if u <= v else (v, u)


def sample_configuration_model(d: DegreeDistribution, n_nodes: int, seed, rewire_budget: int | None = None) -> Graph:
    """Stub matching, then degree-preserving edge swaps to remove self-loops and multi-edges."""
    if n_nodes < 2:
        raise ValidationError("need at least two nodes")
    rng = np.random.default_rng(seed)
    deg = sample_degree_sequence(d, n_nodes, rng)
    stubs = np.repeat(np.arange(n_nodes), deg)
    rng.shuffle(stubs)
    edges = stubs.reshape(-1, 2).copy()
    m = len(edges)
    count = Counter(_norm(int(u), int(v)) for u, v in edges)

    def is_bad(i):
        u, v = int(edges[i, 0]), int(edges[i, 1])
        return u == v or count[_norm(u, v)] > 1

    bad = [i for i in range(m) if is_bad(i)]
    budget = rewire_budget if rewire_budget is not None else 1000 + 200 * len(bad)
    tries = 0
    while bad:
        i = bad[-1]
        if not is_bad(i):
            bad.pop()
            continue
        if tries >= budget or m < 2:
            raise ResourceLimitError(f"rewiring budget exhausted with {len(bad)} bad edges left")
        tries += 1
        j = int(rng.integers(m))
        if j == i:
            continue
        u, v = int(edges[i, 0]), int(edges[i, 1])
        x, y = int(edges[j, 0]), int(edges[j, 1])
        if rng.random() < 0.5:
            x, y = y, x
        a, b = _norm(u, x), _norm(v, y)
        if u == x or v == y or a == b or count[a] or count[b]:
            continue
        for e in (_norm(u, v), _norm(x, y)):
            count[e] -= 1
            if count[e] == 0:
                del count[e]
        count[a] += 1
        count[b] += 1
        edges[i] = (u, x)
        edges[j] = (v, y)
        bad.pop()
        if is_bad(j):
            bad.append(j)
    return Graph.from_edges(n_nodes, edges)


def initial_node_states(model: ContactModel, g: Graph, spec: InitSpec, rng: np.random.Generator,
                        d: DegreeDistribution | None = None) -> np.ndarray:
    """Per-node states. Fraction mode assigns exact (largest-remainder) counts to a random permutation."""
    S = model.n_states
    if spec.mode == "state_fractions":
        f = np.asarray(spec.fractions, dtype=float)
        if len(f) != S:
            raise ValidationError(f"{len(f)} initial fractions for {S} states")
        raw = f * g.n_nodes
        counts = np.floor(raw).astype(np.int64)
        short = g.n_nodes - counts.sum()
        counts[np.argsort(-(raw - counts), kind="stable")[:short]] += 1
        states = np.repeat(np.arange(S), counts)
        rng.shuffle(states)
        return states.astype(np.int64)
    if d is None:
        raise ValidationError("random init on a graph needs the degree distribution")
    x = np.random.default_rng(spec.seed).dirichlet(np.ones(S), size=d.size)  # (K, S)
    deg = g.degrees
    if deg.min() < d.k_min or deg.max() > d.k_max:
        raise ValidationError("graph degrees fall outside the distribution support")
    u = rng.random(g.n_nodes)
    cum = np.cumsum(x[deg - d.k_min], axis=1)
    return np.minimum((u[:, None] > cum).sum(axis=1), S - 1).astype(np.int64)


# --------------------------------------------------------------------------
# compiled simulator


@njit(cache=True)
def _node_rate(s, u, counts, ind_out, c_from, c_ctx, c_rate):
    r = ind_out[s]
    for j in range(len(c_rate)):
        if c_from[j] == s:
            r += c_rate[j] * counts[u, c_ctx[j]]
    return r


@njit(cache=True)
def _tree_set(tree, size, i, value):
    pos = i + size
    delta = value - tree[pos]
    while pos >= 1:
        tree[pos] += delta
        pos //= 2


@njit(cache=True)
def _tree_find(tree, size, target):
    pos = 1
    while pos < size:
        left = 2 * pos
        if target < tree[left]:
            pos = left
        else:
            target -= tree[left]
            pos = left + 1
    return pos - size


@njit(cache=True)
def _gillespie(indptr, indices, state0, n_states, i_from, i_to, i_rate, c_from, c_to, c_ctx, c_rate,
               grid, seed):
    np.random.seed(seed)
    N = len(state0)
    state = state0.copy()
    counts = np.zeros((N, n_states), dtype=np.int64)
    for u in range(N):
        for e in range(indptr[u], indptr[u + 1]):
            counts[u, state[indices[e]]] += 1
    ind_out = np.zeros(n_states)
    for j in range(len(i_rate)):
        ind_out[i_from[j]] += i_rate[j]
    size = 1
    while size < N:
        size *= 2
    tree = np.zeros(2 * size)
    for u in range(N):
        tree[u + size] = _node_rate(state[u], u, counts, ind_out, c_from, c_ctx, c_rate)
    for pos in range(size - 1, 0, -1):
        tree[pos] = tree[2 * pos] + tree[2 * pos + 1]

    totals = np.zeros(n_states, dtype=np.int64)
    for u in range(N):
        totals[state[u]] += 1
    out = np.zeros((len(grid), n_states))
    t = 0.0
    k = 0
    n_events = 0
    while True:
        total = tree[1]
        if total <= 0.0:
            t_next = np.inf
        else:
            t_next = t - np.log(1.0 - np.random.random()) / total
        while k < len(grid) and grid[k] < t_next:
            for s in range(n_states):
                out[k, s] = totals[s] / N
            k += 1
        if k >= len(grid):
            break
        t = t_next
        # pick node, then a channel within it
        u = _tree_find(tree, size, np.random.random() * total)
        if u >= N:
            u = N - 1
        s = state[u]
        r_u = tree[u + size]
        target = np.random.random() * r_u
        new = -1
        acc = 0.0
        for j in range(len(i_rate)):
            if i_from[j] == s:
                acc += i_rate[j]
                if target < acc:
                    new = i_to[j]
                    break
        if new < 0:
            for j in range(len(c_rate)):
                if c_from[j] == s:
                    acc += c_rate[j] * counts[u, c_ctx[j]]
                    if target < acc:
                        new = c_to[j]
                        break
        if new < 0:
            # rounding at the top of the cumulative sum: take the last eligible channel
            for j in range(len(c_rate)):
                if c_from[j] == s and counts[u, c_ctx[j]] > 0:
                    new = c_to[j]
            if new < 0:
                for j in range(len(i_rate)):
                    if i_from[j] == s:
                        new = i_to[j]
        if new < 0:
            continue
        state[u] = new
        totals[s] -= 1
        totals[new] += 1
        n_events += 1
        _tree_set(tree, size, u, _node_rate(new, u, counts, ind_out, c_from, c_ctx, c_rate))
        for e in range(indptr[u], indptr[u + 1]):
            v = indices[e]
            counts[v, s] -= 1
            counts[v, new] += 1
            _tree_set(tree, size, v, _node_rate(state[v], v, counts, ind_out, c_from, c_ctx, c_rate))
    return out, n_events


def gillespie(model: ContactModel, g: Graph, init_states, t_max: float, seed: int, samples: int = 201):
    """One exact trajectory; returns per-state node fractions on ``linspace(0, t_max, samples)``.

    Each node's event rate is its independent-rule rates plus, for every
    contact rule leaving its state, the rate times its number of neighbours
    in the context state.
    """
    ix = rule_index(model)
    state0 = np.asarray(init_states, dtype=np.int64)
    if state0.shape != (g.n_nodes,):
        raise ValidationError("one initial state per node required")
    if state0.min() < 0 or state0.max() >= model.n_states:
        raise ValidationError("initial node state out of range")
    grid = np.linspace(0.0, t_max, samples)
    i64 = lambda a: np.ascontiguousarray(a, dtype=np.int64)
    f64 = lambda a: np.ascontiguousarray(a, dtype=np.float64)
    out, _ = _gillespie(
        i64(g.indptr), i64(g.indices), state0, model.n_states,
        i64(ix.i_from), i64(ix.i_to), f64(ix.i_rate),
        i64(ix.c_from), i64(ix.c_to), i64(ix.c_ctx), f64(ix.c_rate),
        grid, int(seed) % (2**32),
    )
    return grid, out


def ensemble_mean(paths) -> tuple[np.ndarray, np.ndarray]:
    """Pointwise mean and standard error of aligned (T, S) paths."""
    paths = [np.asarray(p, dtype=float) for p in paths]
    if not paths:
        raise ValidationError("no paths")
    if any(p.shape != paths[0].shape for p in paths):
        raise ValidationError("paths are not on a common grid")
    arr = np.stack(paths)
    mean = arr.mean(axis=0)
    if len(paths) == 1:
        return mean, np.zeros_like(mean)
    return mean, arr.std(axis=0, ddof=1) / math.sqrt(len(paths))


def simulate(model: ContactModel, d: DegreeDistribution, cfg: SimConfig, init: InitSpec,
             graph: Graph | None = None):
    """Ensemble of runs on one sampled graph. Returns (mean trajectory, stderr, graph).

    Per-run seeds (initial labelling and event stream) derive from ``cfg.seed``.
    """
    root = np.random.SeedSequence(cfg.seed)
    graph_seq, *run_seqs = root.spawn(cfg.runs + 1)
    if graph is None:
        graph = sample_configuration_model(d, cfg.n_nodes, graph_seq)
    paths = []
    for seq in run_seqs:
        rng = np.random.default_rng(seq)
        states = initial_node_states(model, graph, init, rng, d)
        grid, out = gillespie(model, graph, states, cfg.t_max, int(rng.integers(2**32)), cfg.samples)
        paths.append(out)
    mean, se = ensemble_mean(paths)
    traj = Trajectory(times=grid, marginals=mean, states=tuple(model.states), method="sim")
    return traj, se, graph
