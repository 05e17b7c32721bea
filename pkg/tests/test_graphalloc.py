import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ltem2m.channel import pathloss_mtcd_mtcd
from ltem2m.graphalloc import (ColoringState, activation_probability, build_interference_graph,
                               can_improve, conflict_counts, full_reuse_assign, graph_from_edges,
                               local_color_step, maybe_activate_extra_channel, run_distributed_coloring,
                               write_conflict_trace)


def min_conflicts(n, edges, c):
    """Fewest monochromatic edges over every one-colour-per-vertex assignment."""
    best = len(edges)
    for col in itertools.product(range(c), repeat=n):
        best = min(best, sum(col[i] == col[j] for i, j in edges))
        if best == 0:
            break
    return best


def state_from_colors(colors, c):
    held = np.zeros((len(colors), c), dtype=bool)
    for v, cs in enumerate(colors):
        held[v, list(cs)] = True
    return ColoringState(held, np.zeros(len(colors)))


def gains_for(positions):
    """Gain matrix gain[a, b] from tx of pair a to rx of pair b."""
    n = len(positions)
    g = np.empty((n, n))
    for a, (tx, _) in enumerate(positions):
        for b, (_, rx) in enumerate(positions):
            g[a, b] = -pathloss_mtcd_mtcd(np.hypot(*np.subtract(tx, rx)))
    return g


# interference graph

def test_same_apartment_pairs_are_adjacent():
    pos = [((1, 1), (4, 2)), ((6, 3), (8, 7))]
    g = build_interference_graph([(0, 1), (2, 3)], gains_for(pos))
    assert g.edges == {(0, 1)}


def test_far_stripes_not_adjacent():
    pos = [((1, 1), (4, 2)), ((1, 81), (4, 82))]
    g = build_interference_graph([(0, 1), (2, 3)], gains_for(pos))
    assert g.edges == frozenset()


def test_single_pair_graph():
    g = build_interference_graph([(0, 1)], np.array([[-60.0]]))
    assert g.num_vertices == 1 and not g.edges


def test_edge_rule_uses_stronger_direction():
    # pair 1's tx sits 35 dB below pair 0's serving level, pair 0's tx only 20 dB below pair 1's
    gain = np.array([[-60.0, -90.0], [-95.0, -70.0]])
    assert build_interference_graph([(0, 1), (2, 3)], gain, 30.0).edges == {(0, 1)}
    assert not build_interference_graph([(0, 1), (2, 3)], gain, 15.0).edges


@given(seed=st.integers(0, 2 ** 32 - 1), n=st.integers(2, 9))
def test_graph_symmetric_under_permutation(seed, n):
    rng = np.random.default_rng(seed)
    pts = rng.uniform(0, 60, (n, 2, 2)) + np.array([0.0, 0.5])
    pairs = [(2 * i, 2 * i + 1) for i in range(n)]
    g = gains_for([(p[0], p[1]) for p in pts])
    perm = rng.permutation(n)
    a = build_interference_graph(pairs, g)
    b = build_interference_graph([pairs[i] for i in perm], g[np.ix_(perm, perm)])
    assert a.edge_set() == b.edge_set()
    adj = a.neighbors()
    assert all(i in adj[j] for i in range(n) for j in adj[i])


# local step

def test_isolated_vertex_keeps_zero_conflicts():
    g = graph_from_edges(1, [])
    st_ = state_from_colors([{0}], 3)
    row = local_color_step(0, st_, np.random.default_rng(0), g.neighbors())
    assert row.sum() == 1


def test_vertex_moves_off_neighbor_color():
    g = graph_from_edges(2, [(0, 1)])
    st_ = state_from_colors([{0}, {0}], 2)
    for seed in range(20):
        row = local_color_step(0, st_, np.random.default_rng(seed), g.neighbors())
        assert list(row) == [False, True]


def test_triangle_step_cannot_clear_conflict():
    g = graph_from_edges(3, [(0, 1), (1, 2), (0, 2)])
    adj = g.neighbors()
    for colors in itertools.product(range(2), repeat=3):
        st_ = state_from_colors([{c} for c in colors], 2)
        for v in range(3):
            new = st_.copy()
            new.held[v] = local_color_step(v, st_, np.random.default_rng(v), adj)
            own = sum(bool((new.held[v] & new.held[u]).any()) for u in adj[v])
            assert own <= 1
            assert conflict_counts(g, new)[1] >= 1


def test_settled_vertex_cannot_improve():
    g = graph_from_edges(2, [(0, 1)])
    st_ = state_from_colors([{0}, {1}], 2)
    assert not can_improve(0, st_, g.neighbors())


# activation

def test_activation_probability_examples():
    assert activation_probability(0, 0, 1, 4, 1.0) == pytest.approx(0.75)
    assert activation_probability(3, 5, 4, 4, 1.0) == 0.0


def test_full_vertex_never_activates():
    g = graph_from_edges(1, [])
    st_ = state_from_colors([{0, 1}], 2)
    row = maybe_activate_extra_channel(0, st_, np.random.default_rng(0), g.neighbors(), 0, 1.0)
    assert row.sum() == 2


def test_activation_frequency():
    g = graph_from_edges(1, [])
    st_ = state_from_colors([{0}], 4)
    rng = np.random.default_rng(3)
    hits = sum(maybe_activate_extra_channel(0, st_, rng, g.neighbors(), 0, 1.0).sum() == 2 for _ in range(4000))
    assert abs(hits / 4000 - 0.75) < 0.03


def test_no_activation_keeps_single_channel():
    g = graph_from_edges(6, [(0, 1), (1, 2), (3, 4)])
    res = run_distributed_coloring(g, 4, 30, np.random.default_rng(1), p0=0.0)
    assert np.all(res.state.held.sum(axis=1) == 1)


# distributed colouring

def test_edgeless_graph_has_no_conflicts():
    res = run_distributed_coloring(graph_from_edges(5, []), 3, 10, np.random.default_rng(0), p0=0.0)
    assert res.conflicts == 0 and res.rounds == 1


def test_iterations_must_be_positive():
    with pytest.raises(ValueError):
        run_distributed_coloring(graph_from_edges(2, [(0, 1)]), 2, 0, np.random.default_rng(0))


def test_path_converges():
    g = graph_from_edges(3, [(0, 1), (1, 2)])
    ok = sum(run_distributed_coloring(g, 2, 10, np.random.default_rng(s), p0=0.0).conflicts == 0
             for s in range(1000))
    assert ok >= 990


def test_complete_graph_bound():
    g = graph_from_edges(4, list(itertools.combinations(range(4), 2)))
    assert min_conflicts(4, list(g.edges), 2) == 2
    for s in range(50):
        assert run_distributed_coloring(g, 2, 20, np.random.default_rng(s), p0=0.0).conflicts >= 2


def test_every_vertex_holds_a_color():
    g = graph_from_edges(7, [(0, 1), (1, 2), (2, 3), (3, 0), (4, 5)])
    res = run_distributed_coloring(g, 3, 20, np.random.default_rng(5), p0=0.5)
    assert np.all(res.state.held.sum(axis=1) >= 1)


def test_best_round_nonincreasing_in_budget():
    g = graph_from_edges(6, list(itertools.combinations(range(6), 2))[:11])
    for s in range(20):
        best = [run_distributed_coloring(g, 2, b, np.random.default_rng(s), p0=0.3).best_conflicts
                for b in (1, 2, 5, 10, 30)]
        assert best == sorted(best, reverse=True)


def test_deterministic():
    g = graph_from_edges(8, [(i, (i * 3 + 1) % 8) for i in range(8)])
    a = run_distributed_coloring(g, 3, 25, np.random.default_rng(9))
    b = run_distributed_coloring(g, 3, 25, np.random.default_rng(9))
    assert np.array_equal(a.state.held, b.state.held) and a.trace == b.trace


def test_matches_enumerated_minimum_on_small_graphs():
    rng = np.random.default_rng(2024)
    hits = 0
    runs = 1000
    for s in range(runs):
        n = int(rng.integers(2, 9))
        c = int(rng.integers(2, 4))
        edges = [e for e in itertools.combinations(range(n), 2) if rng.random() < 0.5]
        g = graph_from_edges(n, edges)
        best = min_conflicts(n, list(g.edges), c)
        res = run_distributed_coloring(g, c, 50, np.random.default_rng(s), p0=0.0)
        assert res.conflicts >= best
        hits += res.conflicts == best
    assert hits >= 0.9 * runs


# full reuse and exports

def test_full_reuse():
    assert full_reuse_assign([(0, 1)], 4).colors_of(0) == {0, 1, 2, 3}
    assert full_reuse_assign([], 4).held.shape == (0, 4)
    g = graph_from_edges(3, [(0, 1), (1, 2)])
    st_ = full_reuse_assign([0, 1, 2], 4)
    assert conflict_counts(g, st_) == (8, 2)


def test_exports(tmp_path):
    g = build_interference_graph([(10, 11), (12, 13), (14, 15)],
                                 np.array([[-60, -70, -200], [-70, -60, -200], [-200, -200, -60.0]]))
    g.write_adjacency(tmp_path / "adj.txt")
    assert (tmp_path / "adj.txt").read_text().splitlines() == ["10 12", "12 10", "14"]
    write_conflict_trace(tmp_path / "trace.csv", [3, 1, 0])
    assert (tmp_path / "trace.csv").read_text().splitlines() == ["round,conflicts", "1,3", "2,1", "3,0"]
