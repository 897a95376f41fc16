import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mpccolor.derand import TableCoinSource
from mpccolor.density import out_arc_mask
from mpccolor.instance import Graph, ListColoringInstance
from mpccolor.procedures import (
    CoinLayout, available, color_bidding, dense_step_v1, dense_step_v2, one_shot_coloring,
    slack_after, uncolored_degree,
)

from oracles import bidding_oracle, one_shot_oracle, v1_oracle, v2_oracle

SMALL = CoinLayout(w=2, extra=0)


def _inst(n, edges, pals):
    g = Graph.from_edges(n, edges)
    return ListColoringInstance(g, [np.array(p) for p in pals], mode="list")


def _all_seeds(b, n):
    src = TableCoinSource(b, n)
    return src.view(np.arange(1 << src.seed_bits)), b


TRIANGLE = _inst(3, [(0, 1), (1, 2), (0, 2)], [[0, 1, 2], [0, 1, 2, 3], [1, 2, 3]])
PATH = _inst(4, [(0, 1), (1, 2), (2, 3)], [[0, 1], [0, 1, 2], [1, 2, 3], [0, 2]])


@pytest.mark.parametrize("inst", [TRIANGLE, PATH], ids=["triangle", "path"])
@pytest.mark.parametrize("p", [0.25, 0.5, 1.0])
def test_one_shot_matches_oracle_on_every_seed(inst, p):
    b = 4 if inst.n == 3 else 3
    layout = SMALL if inst.n == 3 else CoinLayout(w=1, extra=0)
    coins, b = _all_seeds(b, inst.n)
    colors = np.full(inst.n, -1)
    got = one_shot_coloring(inst, colors, p, coins, layout=layout)
    for s in range(len(coins)):
        assert got[s].tolist() == one_shot_oracle(inst, colors, p, s, b, layout.w, layout.extra)


def test_one_shot_respects_precolored_neighbors():
    colors = np.array([-1, 1, -1])
    coins, b = _all_seeds(4, 3)
    got = one_shot_coloring(TRIANGLE, colors, 1.0, coins, layout=SMALL)
    for s in range(len(coins)):
        assert got[s].tolist() == one_shot_oracle(TRIANGLE, colors, 1.0, s, b, 2, 0)
    assert (got[:, 1] == 1).all()
    assert not (got[:, [0, 2]] == 1).any()


def test_v1_matches_oracle_on_every_seed():
    inst = TRIANGLE
    arcs = out_arc_mask(inst.graph, np.zeros(inst.n, dtype=np.int64))
    coins, b = _all_seeds(2, 3)
    colors = np.full(3, -1)
    got = dense_step_v1(inst, colors, [np.array([2, 0, 1])], arcs, coins, layout=SMALL)
    for s in range(len(coins)):
        assert got[s].tolist() == v1_oracle(inst, colors, [[2, 0, 1]], arcs, s, b, 0)
    # one cluster of a triangle always colors properly and completely
    assert (got >= 0).all()


def test_v1_two_clusters_with_cross_edges():
    inst = PATH
    arcs = out_arc_mask(inst.graph, np.array([0, 0, 1, 1]))
    coins, b = _all_seeds(2, 4)
    colors = np.full(4, -1)
    clusters = [[1, 0], [3, 2]]
    got = dense_step_v1(inst, colors, [np.array(c) for c in clusters], arcs, coins, layout=SMALL)
    for s in range(len(coins)):
        assert got[s].tolist() == v1_oracle(inst, colors, clusters, arcs, s, b, 0)


@pytest.mark.parametrize("deltas", [[0.0], [0.34], [0.5], [0.9]])
def test_v2_matches_oracle_on_every_seed(deltas):
    inst = _inst(3, [(0, 1), (1, 2), (0, 2)], [[0, 1, 2]] * 3)
    arcs = out_arc_mask(inst.graph, np.zeros(3, dtype=np.int64))
    layout = CoinLayout(w=1, extra=0)
    colors = np.full(3, -1)
    # 2 tentative bits, then at most 3 + 2 two-bit leader draws
    bits_needed = 12
    src = TableCoinSource(bits_needed, 3)
    seeds = np.random.default_rng(0).integers(0, 1 << 36, size=2000)
    coins = src.view(seeds)
    got = dense_step_v2(inst, colors, [np.array([2, 1, 0])], np.array(deltas), arcs, coins, layout=layout)
    for s, seed in enumerate(seeds.tolist()):
        want = v2_oracle(inst, colors, [[2, 1, 0]], deltas, arcs, seed, bits_needed, 0)
        assert got[s].tolist() == want


def test_v2_exhaustive_on_an_edge():
    inst = _inst(2, [(0, 1)], [[0, 1, 2], [0, 1, 2]])
    arcs = out_arc_mask(inst.graph, np.zeros(2, dtype=np.int64))
    layout = CoinLayout(w=1, extra=0)
    # 2 tentative bits then 2 + 1 one-bit leader draws
    coins, b = _all_seeds(5, 2)
    colors = np.full(2, -1)
    for deltas in ([0.0], [0.5]):
        got = dense_step_v2(inst, colors, [np.array([1, 0])], np.array(deltas), arcs, coins, layout=layout)
        for s in range(len(coins)):
            assert got[s].tolist() == v2_oracle(inst, colors, [[1, 0]], deltas, arcs, s, b, 0)


def test_v2_rejects_draws_past_the_coin_budget():
    inst = TRIANGLE
    arcs = out_arc_mask(inst.graph, np.zeros(3, dtype=np.int64))
    coins, _ = _all_seeds(4, 3)
    with pytest.raises(ValueError):
        dense_step_v2(inst, np.full(3, -1), [np.array([0, 1, 2])], np.array([0.3]), arcs, coins, layout=CoinLayout(w=1, extra=0))


def test_bidding_matches_oracle_on_every_seed():
    inst = PATH
    arcs = out_arc_mask(inst.graph, np.zeros(4, dtype=np.int64))
    layout = CoinLayout(w=1, extra=0)
    coins, b = _all_seeds(3, 4)
    colors = np.full(4, -1)
    p = np.array([2.0, 1.0, 2.0, 4.0])
    got = color_bidding(inst, colors, np.arange(4), arcs, p, 1.0, coins, layout=layout)
    for s in range(len(coins)):
        assert got[s].tolist() == bidding_oracle(inst, colors, range(4), arcs, p, 1.0, s, b, 1)


def test_bidding_two_bit_thresholds():
    inst = TRIANGLE
    arcs = out_arc_mask(inst.graph, np.zeros(3, dtype=np.int64))
    # node 2 is precolored, so only units 0 and 1 draw: three 2-bit slots each
    coins, b = _all_seeds(6, 2)
    colors = np.array([-1, -1, 3])
    p = np.array([1.0, 2.0, 1.0])
    got = color_bidding(inst, colors, np.array([0, 1]), arcs, p, 1.0, coins, layout=SMALL)
    for s in range(len(coins)):
        assert got[s].tolist() == bidding_oracle(inst, colors, [0, 1], arcs, p, 1.0, s, b, 2)


@st.composite
def small_instances(draw):
    n = draw(st.integers(2, 5))
    pairs = list(itertools.combinations(range(n), 2))
    edges = draw(st.lists(st.sampled_from(pairs), unique=True, max_size=len(pairs)))
    deg = [sum(v in e for e in edges) for v in range(n)]
    pals = [sorted(draw(st.sets(st.integers(0, 5), min_size=d + 1, max_size=d + 1))) for d in deg]
    colors = [draw(st.sampled_from([-1, -1, pals[v][0]])) for v in range(n)]
    return _inst(n, edges, pals), np.array(colors)


@settings(max_examples=40, deadline=None)
@given(small_instances(), st.integers(0, 2**40))
def test_procedures_stay_proper(case, seed):
    inst, colors = case
    e = inst.graph.edges()
    if len(e) and ((colors[e[:, 0]] >= 0) & (colors[e[:, 0]] == colors[e[:, 1]])).any():
        return
    src = TableCoinSource(40, inst.n)
    coins = src.view(np.array([seed]))
    arcs = out_arc_mask(inst.graph, np.zeros(inst.n, dtype=np.int64))
    layout = CoinLayout(w=2, extra=1)
    outs = [
        one_shot_coloring(inst, colors, 0.5, coins, layout=layout)[0],
        dense_step_v1(inst, colors, [np.arange(inst.n)], arcs, coins, layout=layout)[0],
        color_bidding(inst, colors, np.arange(inst.n), arcs, np.full(inst.n, 1.0), 1.0, coins, layout=layout)[0],
    ]
    for out in outs:
        assert ((out[e[:, 0]] < 0) | (out[e[:, 0]] != out[e[:, 1]])).all() if len(e) else True
        for v in range(inst.n):
            if out[v] >= 0:
                assert out[v] in inst.palettes[v]
            if colors[v] >= 0:
                assert out[v] == colors[v]


def test_available_and_slack():
    colors = np.array([-1, 1, -1, -1])
    av = available(PATH, colors)
    assert av.of(0).tolist() == [0]
    assert av.of(2).tolist() == [2, 3]
    assert av.of(1).tolist() == [0, 1, 2]
    assert uncolored_degree(PATH, colors).tolist() == [0, 2, 1, 1]
    after = np.array([[0, 1, -1, -1], [-1, 1, 2, -1]])
    assert slack_after(PATH, colors, after).tolist() == [[1, 1, 1, 1], [1, 1, 1, 1]]
