import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mpccolor.derand import KWiseFamily
from mpccolor.field import IRREDUCIBLE
from mpccolor.instance import PartialColoring, generate, validate_coloring
from mpccolor.mpc import Meter, MpcConfig
from mpccolor.partition import (
    ExpectationNotBelowOne, HashPair, PartitionConfig, ReduceTrace, bin_count, check_level,
    chunk_threshold, color_reduce, hash_family, leftover_instance, low_space_partition, make_chunks,
    partition_cost, reduction_depth, select_partition_hashes, to_range,
)

from oracles import poly_eval


def greedy(inst, meter):
    col = np.full(inst.n, -1)
    for v in range(inst.n):
        used = set(col[inst.graph.neighbors(v)].tolist())
        col[v] = next(c for c in inst.palettes[v].tolist() if c not in used)
    return col


def test_bin_count_and_depth():
    assert bin_count(10_000, 0.125) == 3
    assert bin_count(100, 0.125) == 2
    cfg = PartitionConfig(zeta=0.125, depth_offset=0)
    # log_n Delta / zeta = 0.5 / 0.125 = 4
    assert reduction_depth(10_000, 100, cfg) == 4
    assert reduction_depth(10_000, 101, cfg) == 5
    assert reduction_depth(10_000, 100, PartitionConfig(depth_offset=4)) == 0
    assert reduction_depth(1, 100, cfg) == 0


@settings(max_examples=100)
@given(st.integers(1, 24), st.integers(1, 50), st.data())
def test_to_range_is_floor_of_scaled_value(w, r, data):
    h = data.draw(st.lists(st.integers(0, (1 << w) - 1), min_size=1, max_size=20))
    got = to_range(np.array(h, dtype=np.uint64), r, w)
    assert got.tolist() == [x * r // (1 << w) for x in h]
    assert (got < r).all()


def test_chunks_tile_arcs_and_palettes():
    inst = generate("gnp", {"n": 80, "avg_degree": 12}, 3)
    ch = make_chunks(inst, 5)
    assert (ch.nb_sizes <= 5).all() and (ch.col_sizes <= 5).all()
    arcs = sorted(i for s, z in zip(ch.nb_starts, ch.nb_sizes) for i in range(s, s + z))
    assert arcs == list(range(len(inst.graph.indices)))
    for o, s, z in zip(ch.nb_owner, ch.nb_starts, ch.nb_sizes):
        assert inst.graph.indptr[o] <= s and s + z <= inst.graph.indptr[o + 1]
    total = sum(len(p) for p in inst.palettes)
    assert sorted(i for s, z in zip(ch.col_starts, ch.col_sizes) for i in range(s, s + z)) == list(range(total))


def _oracle_cost(inst, coeffs, fam, B, cap, thr):
    c = fam.k // 2
    mod = IRREDUCIBLE[fam.w]
    h1 = [poly_eval(coeffs[:c], v, mod) * B >> fam.w for v in range(inst.n)]
    h2 = {col: (poly_eval(coeffs[c:], col, mod) * (B - 1) >> fam.w) if B > 2 else 0
          for col in set(int(x) for p in inst.palettes for x in p)}
    cost = 0
    for v in range(inst.n):
        nb = inst.graph.neighbors(v).tolist()
        for s in range(0, len(nb), cap):
            piece = nb[s : s + cap]
            same = sum(h1[u] == h1[v] for u in piece)
            cost += abs(same - len(piece) / B) > thr + 1e-9
        pal = inst.palettes[v].tolist()
        if h1[v] < B - 1:
            for s in range(0, len(pal), cap):
                piece = pal[s : s + cap]
                match = sum(h2[x] == h1[v] for x in piece)
                cost += abs(match - len(piece) / (B - 1)) > thr + 1e-9
            dprime = sum(h1[u] == h1[v] for u in nb)
            pprime = sum(h2[x] == h1[v] for x in pal)
            cost += pprime <= dprime
    return cost


@pytest.mark.parametrize("seed", range(6))
@pytest.mark.parametrize("B", [2, 3, 5])
def test_partition_cost_matches_scalar_oracle(seed, B):
    inst = generate("gnp", {"n": 40, "avg_degree": 9}, seed)
    cfg = PartitionConfig(chunk_cap=4, slack_factor=0.5, independence=2)
    fam = hash_family(inst, cfg)
    rng = np.random.default_rng(seed * 10 + B)
    coeffs = rng.integers(0, 1 << fam.w, size=fam.k, dtype=np.uint64)
    hp = HashPair(fam, coeffs, B)
    want = _oracle_cost(inst, [int(c) for c in coeffs], fam, B, 4, chunk_threshold(cfg))
    assert partition_cost(inst, hp, cfg) == want


def test_selection_reaches_zero_cost_and_partition_invariants():
    inst = generate("gnp", {"n": 2000, "avg_degree": 60}, 1)
    cfg = PartitionConfig(depth_offset=0)
    meter = Meter(MpcConfig(n=inst.n))
    hp, res = select_partition_hashes(inst, cfg, meter=meter)
    assert res.expectation < 1
    assert res.value == 0 == partition_cost(inst, hp, cfg)
    assert meter.total_rounds > 0
    level = low_space_partition(inst, hp)
    g = inst.graph
    for v in range(inst.n):
        same = sum(level.bins[u] == level.bins[v] for u in g.neighbors(v))
        assert level.dprime[v] == same
    restricted = np.flatnonzero(level.bins < level.B - 1)
    assert check_level(level, restricted) == []
    for b in range(level.B - 1):
        sub = level.sub_instances[b]
        for local, v in enumerate(level.sub_nodes[b].tolist()):
            assert len(sub.palettes[local]) == level.pprime[v] > level.dprime[v]
    colors = np.full(inst.n, -1)
    colors[restricted] = 0  # anything; leftover palettes drop colors used by neighbors
    left, ids = leftover_instance(level, colors)
    for local, v in enumerate(ids.tolist()):
        used = {0} if any(level.bins[u] < level.B - 1 for u in g.neighbors(v)) else set()
        assert set(left.palettes[local].tolist()) == set(inst.palettes[v].tolist()) - used


def test_color_reduce_produces_valid_coloring():
    inst = generate("gnp", {"n": 6561, "avg_degree": 80}, 1)
    trace = ReduceTrace()
    meter = Meter(MpcConfig(n=inst.n))
    colors = color_reduce(inst, PartitionConfig(depth_offset=0), greedy, 1, meter, trace)
    assert validate_coloring(inst, PartialColoring(colors)).ok
    top = trace.levels[-1]
    assert top["level"] == 0 and top["cost"] == 0 and len(top["bins"]) == 3
    assert top["min_surplus"] > 0
    assert "partition" in meter.stages


def test_expectation_guard_triggers_fallback():
    inst = generate("gnp", {"n": 200, "avg_degree": 30}, 0)
    cfg = PartitionConfig(chunk_cap=2, slack_factor=0.01, depth_offset=0)
    with pytest.raises(ExpectationNotBelowOne):
        select_partition_hashes(inst, cfg)
    trace = ReduceTrace()
    colors = color_reduce(inst, cfg, greedy, 2, None, trace)
    assert validate_coloring(inst, PartialColoring(colors)).ok
    assert "fallback" in trace.levels[0]


def test_hash_family_width():
    inst = generate("gnp", {"n": 5000, "avg_degree": 4}, 0)
    fam = hash_family(inst, PartitionConfig(independence=4))
    assert fam.k == 8 and fam.w == math.ceil(math.log2(5000))
    assert isinstance(fam, KWiseFamily)
