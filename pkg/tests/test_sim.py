import math

import numpy as np
import pytest

from netlump.degree import DegreeDistribution, delta, powerlaw
from netlump.errors import ValidationError
from netlump.model import parse_model
from netlump.sim import (
    Graph,
    SimConfig,
    ensemble_mean,
    gillespie,
    initial_node_states,
    sample_configuration_model,
    sample_degree_sequence,
    simulate,
)
from netlump.solver import InitSpec, make_system, solve

SIS_TEXT = "states: S, I\nS + I -> I + I : 1.5\nI -> S : 1.0\n"


def test_regular_graph():
    g = sample_configuration_model(delta(2), 100, seed=1)
    assert g.n_edges == 100
    assert np.all(g.degrees == 2)
    assert g.is_simple()


def test_two_node_graph():
    g = sample_configuration_model(delta(1), 2, seed=0)
    assert g.n_edges == 1
    assert g.neighbors(0).tolist() == [1]


def test_odd_stub_total_fixed():
    rng = np.random.default_rng(3)
    d = DegreeDistribution(1, 3, np.array([0.4, 0.3, 0.3]))
    for _ in range(20):
        assert sample_degree_sequence(d, 101, rng).sum() % 2 == 0
    with pytest.raises(ValidationError):
        sample_degree_sequence(delta(3), 5, rng)


def test_configuration_model_statistics():
    d = powerlaw(2.4, 1, 50)
    for seed in range(10):
        g = sample_configuration_model(d, 10_000, seed)
        assert g.is_simple()
        hist = np.bincount(g.degrees, minlength=d.k_max + 2)[d.k_min : d.k_max + 1] / g.n_nodes
        assert 0.5 * np.abs(hist - d.probs).sum() <= 0.02


def test_rewiring_preserves_degrees():
    d = powerlaw(1.5, 1, 30)
    rng = np.random.default_rng(9)
    seq = sample_degree_sequence(d, 300, rng)
    g = sample_configuration_model(d, 300, 9)
    # same seed, same degree draw: swaps keep every node's degree
    assert np.array_equal(np.sort(g.degrees), np.sort(seq))
    assert g.is_simple()


def test_no_applicable_rules_constant(sir):
    g = sample_configuration_model(delta(3), 50, 0)
    grid, out = gillespie(sir, g, np.zeros(50, dtype=np.int64), 5.0, seed=1, samples=11)
    assert np.all(out[:, 0] == 1.0)


def test_single_node_decay_matches_analytic():
    m = parse_model("states: A, B\nA -> B : 0.7")
    N = 4000
    g = Graph.from_edges(N, np.zeros((0, 2), dtype=np.int64))
    grid, out = gillespie(m, g, np.zeros(N, dtype=np.int64), 3.0, seed=5, samples=7)
    expect = 1 - np.exp(-0.7 * grid)
    se = np.sqrt(expect * (1 - expect) / N)
    assert np.all(np.abs(out[:, 1] - expect) <= 4 * se + 1e-12)


def test_fractions_sum_to_one_and_reproducible(sir):
    d = powerlaw(2.4, 1, 20)
    cfg = SimConfig(n_nodes=500, runs=3, seed=42, t_max=3.0, samples=31)
    init = InitSpec("state_fractions", (0.9, 0.1, 0.0))
    a, se_a, _ = simulate(sir, d, cfg, init)
    b, se_b, _ = simulate(sir, d, cfg, init)
    assert np.array_equal(a.marginals, b.marginals) and np.array_equal(se_a, se_b)
    g = sample_configuration_model(d, 500, 1)
    _, out = gillespie(sir, g, initial_node_states(sir, g, init, np.random.default_rng(0)), 3.0, seed=2)
    counts = out * 500
    assert np.allclose(counts, np.round(counts), atol=1e-9)
    assert np.all(np.round(counts).sum(axis=1) == 500)


def test_initial_labelling_exact_counts(sir):
    g = sample_configuration_model(delta(2), 1000, 0)
    s = initial_node_states(sir, g, InitSpec("state_fractions", (0.99, 0.01, 0.0)), np.random.default_rng(1))
    assert np.bincount(s, minlength=3).tolist() == [990, 10, 0]


def test_ensemble_mean_examples():
    p = np.array([[0.2, 0.8], [0.3, 0.7]])
    mean, se = ensemble_mean([p])
    assert np.array_equal(mean, p) and np.all(se == 0)
    mean, _ = ensemble_mean([np.zeros((2, 1)), np.ones((2, 1))])
    assert np.all(mean == 0.5)
    with pytest.raises(ValidationError):
        ensemble_mean([np.zeros((2, 1)), np.zeros((3, 1))])


def test_stderr_scales_with_run_count(sir):
    d = powerlaw(2.4, 1, 20)
    g = sample_configuration_model(d, 400, 3)
    init = InitSpec("state_fractions", (0.95, 0.05, 0.0))
    _, se50, _ = simulate(sir, d, SimConfig(400, 50, 1, 2.0, 21), init, graph=g)
    _, se200, _ = simulate(sir, d, SimConfig(400, 200, 2, 2.0, 21), init, graph=g)
    ratio = se50[5:].mean() / se200[5:].mean()
    assert 1.5 < ratio < 2.7


def test_sis_ring_against_ame():
    m = parse_model(SIS_TEXT)
    N = 10
    ring = Graph.from_edges(N, [(i, (i + 1) % N) for i in range(N)])
    init = InitSpec("state_fractions", (0.5, 0.5))
    cfg = SimConfig(N, 500, 8, 4.0, 21)
    traj, _, _ = simulate(m, delta(2), cfg, init, graph=ring)
    s = make_system(m, delta(2), "ame")
    ame = solve(s, s.initial(init), 4.0, samples=21)
    assert np.abs(ame.marginals - traj.marginals).max() <= 0.05


def _poisson(mean, k_max):
    k = np.arange(1, k_max + 1)
    w = np.array([mean**kk / math.factorial(kk) for kk in k])
    return DegreeDistribution(1, k_max, w / w.sum())


def test_sis_three_way_cross_check():
    m = parse_model(SIS_TEXT)
    d = _poisson(4.0, 10)
    init = InitSpec("state_fractions", (0.8, 0.2))
    cfg = SimConfig(3000, 20, 4, 6.0, 31)
    sim, _, _ = simulate(m, d, cfg, init)
    out = {}
    for method in ("ame", "pa"):
        s = make_system(m, d, method)
        out[method] = solve(s, s.initial(init), 6.0, samples=31).marginals
    assert np.abs(out["ame"] - sim.marginals).max() <= 0.05
    assert np.abs(out["pa"] - sim.marginals).max() <= 0.05
    assert np.abs(out["ame"] - out["pa"]).max() <= 0.05


def test_sim_config_validation():
    with pytest.raises(ValidationError):
        SimConfig(1, 1, 0, 1.0)
    with pytest.raises(ValidationError):
        SimConfig(10, 0, 0, 1.0)
