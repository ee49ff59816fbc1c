import time

import numpy as np
import pytest

from netlump.binning import BinSearchConfig, bin_distance, build_dendrogram, choose_bins, proxy_error_F
from netlump.degree import from_text, powerlaw, uniform
from netlump.errors import ValidationError
from netlump.lumping import Partition, bin_stats
from netlump.meanfield import pa_unknowns
from netlump.model import parse_model
from netlump.solver import InitSpec

SIR0 = InitSpec("state_fractions", (0.99, 0.01, 0.0))


def test_distance_examples():
    d = powerlaw(2.4, 1, 600)
    p12 = d.probs[0] + d.probs[1]
    assert bin_distance((1, 1), (2, 2), d, 1.0) == pytest.approx(p12 + 1 / 1.5)
    far = bin_distance((500, 500), (501, 501), d, 1.0) - d.probs[499] - d.probs[500]
    assert far == pytest.approx(1 / 500.5)
    z = from_text("1 0.5\n2 0\n3 0.5\n")
    assert bin_distance((1, 1), (2, 2), z, 0.2) == 0
    # unweighted bin means: (1..2) vs (3..5) -> 1.5 vs 4
    u = uniform(5)
    assert bin_distance((1, 2), (3, 5), u, 0.2) == pytest.approx(1.0 + 0.2 * 2.5 / 2.75)


def test_uniform_merges_high_to_low():
    # equal P(k): the homogeneity term decides, and merged bins grow heavier, so
    # the first pass pairs degrees from the top down
    den = build_dendrogram(uniform(20), 0.2)
    assert den.removed[:9].tolist() == [20, 18, 16, 14, 12, 10, 8, 6, 4]


def test_interior_zero_merges_first():
    d = from_text("1 0.3\n2 0.2\n3 0\n4 0\n5 0.2\n6 0.3\n")
    den = build_dendrogram(d)
    assert set(den.removed[:2].tolist()) <= {3, 4, 5}
    assert np.all(den.distances[:2] == 0)
    p = den.partition(4)
    assert all(bin_stats(d, p).prob > 0)


def test_small_support_dendrogram():
    den = build_dendrogram(uniform(3))
    parts = list(den.partitions())
    assert [len(p) for p in parts] == [3, 2, 1]
    assert parts[0] == Partition.singletons(uniform(3))
    assert parts[-1] == Partition.whole(uniform(3))


def test_dendrogram_validity_and_refinement():
    d = powerlaw(2.4, 1, 300)
    den = build_dendrogram(d)
    prev = None
    for n in range(d.size, 0, -1):
        p = den.partition(n)
        assert len(p) == n
        p.check_covers(d)
        if prev is not None:
            assert set(p.starts().tolist()) <= set(prev.starts().tolist())
        prev = p
    counts = [pa_unknowns(3, len(den.partition(n))) for n in range(1, 40)]
    assert np.all(np.diff(counts) > 0)


def test_dendrogram_deterministic():
    d = powerlaw(2.2, 1, 500)
    a, b = build_dendrogram(d), build_dendrogram(d)
    assert np.array_equal(a.removed, b.removed) and np.array_equal(a.distances, b.distances)


def test_ties_go_left():
    # all-zero interior: every distance among the zeros is 0, so the leftmost pair merges first
    d = from_text("1 0.5\n2 0\n3 0\n4 0\n5 0.5\n")
    assert build_dendrogram(d).removed[0] == 2


def test_dendrogram_scales():
    d = powerlaw(2.4, 1, 100_000)
    t0 = time.perf_counter()
    den = build_dendrogram(d)
    assert time.perf_counter() - t0 < 30
    assert len(den.partition(20)) == 20


def test_partition_bounds():
    den = build_dendrogram(uniform(5))
    for n in (0, 6):
        with pytest.raises(ValidationError):
            den.partition(n)


def test_F_zero_when_partitions_coincide(sir):
    # merging zero bins leaves the active-bin system unchanged
    d = from_text("1 0.3\n2 0\n3 0\n4 0\n5 0\n6 0\n7 0.2\n8 0.5\n")
    den = build_dendrogram(d)
    cfg = BinSearchConfig(t_max=2.0, j_star=1)
    assert proxy_error_F(sir, d, "dbmf", den, 8, cfg, SIR0) == 0.0


def test_F_deterministic_and_decreasing(sir):
    d = powerlaw(2.4, 1, 200)
    den = build_dendrogram(d)
    cfg = BinSearchConfig(t_max=5.0)
    a = proxy_error_F(sir, d, "dbmf", den, 12, cfg, SIR0)
    assert a == proxy_error_F(sir, d, "dbmf", den, 12, cfg, SIR0)
    assert proxy_error_F(sir, d, "dbmf", den, 60, cfg, SIR0) < a


def test_F_preconditions(sir):
    d = powerlaw(2.4, 1, 20)
    den = build_dendrogram(d)
    with pytest.raises(ValidationError):
        proxy_error_F(sir, d, "dbmf", den, 5, BinSearchConfig(), SIR0)
    with pytest.raises(ValidationError):
        proxy_error_F(sir, d, "ame", den, 10, BinSearchConfig(), SIR0)


def test_independent_only_model_stops_immediately():
    m = parse_model("states: A, B, C\nA -> B : 1.0\nB -> C : 0.5\nC -> A : 0.3")
    d = powerlaw(2.4, 1, 200)
    den = build_dendrogram(d)
    for method in ("dbmf", "pa"):
        n, res = choose_bins(m, d, method, den, BinSearchConfig(t_max=5.0), InitSpec("state_fractions", (0.5, 0.5, 0.0)))
        assert n == 11
        assert res.steps[0].F < 1e-12


def test_choose_bins_caps_at_support(sir):
    d = powerlaw(2.4, 1, 8)
    n, res = choose_bins(sir, d, "pa", build_dendrogram(d), BinSearchConfig(t_max=2.0), SIR0)
    assert n == 8 and res.capped


def test_choose_bins_records_strictly_increasing_n(sir):
    d = powerlaw(2.4, 1, 300)
    cfg = BinSearchConfig(t_max=5.0, gamma=50.0)
    n, res = choose_bins(sir, d, "dbmf", build_dendrogram(d), cfg, SIR0)
    ns = [s.n for s in res.steps]
    assert ns[0] == 11 and all(b > a for a, b in zip(ns, ns[1:]))
    assert n == ns[-1] or res.capped
    if not res.capped:
        assert abs(res.steps[-1].grad) <= cfg.delta


def test_config_validation():
    with pytest.raises(ValidationError):
        BinSearchConfig(delta=0)
    with pytest.raises(ValidationError):
        BinSearchConfig(j=0)
