"""Recursive degree reduction: hash nodes into bins and colors into the
restricted bins, recurse on the bins with disjoint palettes, then on the
leftover bin with palettes cut down to what its outside neighbors left."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .derand import CondExpectResult, KWiseFamily, SubFamily, cond_expect_select
from .field import poly_eval_tables
from .instance import UNCOLORED, Graph, ListColoringInstance
from .mpc import Meter


class ExpectationNotBelowOne(RuntimeError):
    """The enumerated hash family has mean cost >= 1, so cost 0 is not forced."""


@dataclass(frozen=True)
class PartitionConfig:
    zeta: float = 0.125
    chunk_cap: int = 256
    slack_factor: float = 3.0
    independence: int = 4
    enum_bits: int = 6
    chunk_bits: int = 4
    depth_offset: int = 4
    salt: int = 0x5EED
    seed_batch: int = 16


def bin_count(n: int, zeta: float) -> int:
    return max(2, math.floor(n**zeta + 1e-12))


def reduction_depth(n: int, delta: int, cfg: PartitionConfig) -> int:
    if n < 2 or delta < 2:
        return 0
    return max(0, math.ceil(math.log(delta) / math.log(n) / cfg.zeta - 1e-12) - cfg.depth_offset)


def to_range(h: np.ndarray, r: int, w: int) -> np.ndarray:
    """Split [0, 2^w) into r near-equal intervals."""
    return ((h.astype(np.uint64) * np.uint64(r)) >> np.uint64(w)).astype(np.int64)


# ---------------------------------------------------------------- chunks


@dataclass
class Chunks:
    """Neighbor chunks and color chunks of at most ``cap`` items each.

    ``starts`` index into the arc array (neighbor chunks) or the palette
    entry array (color chunks); every chunk has one owner node.
    """

    cap: int
    nb_owner: np.ndarray
    nb_starts: np.ndarray
    nb_sizes: np.ndarray
    col_owner: np.ndarray
    col_starts: np.ndarray
    col_sizes: np.ndarray

    @property
    def count(self) -> int:
        return len(self.nb_owner) + len(self.col_owner)


def _split(ptr: np.ndarray, cap: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    owners, starts, sizes = [], [], []
    lens = np.diff(ptr)
    for v in np.flatnonzero(lens).tolist():
        for s in range(int(ptr[v]), int(ptr[v + 1]), cap):
            owners.append(v)
            starts.append(s)
            sizes.append(min(cap, int(ptr[v + 1]) - s))
    return np.array(owners, dtype=np.int64), np.array(starts, dtype=np.int64), np.array(sizes, dtype=np.int64)


def make_chunks(instance: ListColoringInstance, cap: int) -> Chunks:
    pal_ptr = np.concatenate([[0], np.cumsum([len(p) for p in instance.palettes])]).astype(np.int64)
    a = _split(instance.graph.indptr, cap)
    b = _split(pal_ptr, cap)
    return Chunks(cap, *a, *b)


def chunk_threshold(cfg: PartitionConfig) -> float:
    return cfg.slack_factor * math.sqrt(cfg.chunk_cap)


# ------------------------------------------------------------------ cost


@dataclass
class HashPair:
    """Node hash h1 into [B] and color hash h2 into [B-1] (one seed row)."""

    family: KWiseFamily
    coeffs: np.ndarray
    B: int

    @property
    def c(self) -> int:
        return self.family.k // 2

    def node_bins(self, ids: np.ndarray) -> np.ndarray:
        return _bins(self.coeffs[None, : self.c], ids, self.family.w, self.B)[0]

    def color_bins(self, colors: np.ndarray) -> np.ndarray:
        return _bins(self.coeffs[None, self.c :], colors, self.family.w, self.B - 1)[0]

    def hex(self) -> str:
        w = self.family.w
        val = 0
        for i, c in enumerate(self.coeffs.tolist()):
            val |= int(c) << (i * w)
        return hex(val)


def _bins(coeffs: np.ndarray, xs: np.ndarray, w: int, r: int) -> np.ndarray:
    if r <= 1:
        return np.zeros((coeffs.shape[0], len(xs)), dtype=np.int64)
    return to_range(poly_eval_tables(coeffs, np.asarray(xs, dtype=np.uint64), w), r, w)


class _Evaluator:
    """Per-seed bad-chunk and palette-deficit counts, batched over seeds."""

    def __init__(self, instance: ListColoringInstance, chunks: Chunks, B: int, thr: float, w: int, c: int, batch: int):
        self.inst = instance
        self.chunks = chunks
        self.B = B
        self.thr = thr
        self.w = w
        self.c = c
        self.batch = batch
        g = instance.graph
        self.src = g.arc_sources()
        self.pal_flat = np.concatenate(instance.palettes) if instance.n else np.zeros(0, np.int64)
        self.pal_owner = np.repeat(np.arange(g.n), [len(p) for p in instance.palettes])
        self.universe, self.pal_idx = np.unique(self.pal_flat, return_inverse=True)

    def counts(self, coeffs: np.ndarray) -> dict[str, np.ndarray]:
        coeffs = np.asarray(coeffs, dtype=np.uint64)
        S = coeffs.shape[0]
        bad_nb = np.zeros(S, dtype=np.int64)
        bad_col = np.zeros(S, dtype=np.int64)
        deficit = np.zeros(S, dtype=np.int64)
        g = self.inst.graph
        ch = self.chunks
        pal_ptr = np.concatenate([[0], np.cumsum([len(p) for p in self.inst.palettes])]).astype(np.int64)
        for lo in range(0, S, self.batch):
            cf = coeffs[lo : lo + self.batch]
            h1 = _bins(cf[:, : self.c], np.arange(g.n), self.w, self.B)
            h2 = _bins(cf[:, self.c :], self.universe, self.w, self.B - 1)[:, self.pal_idx]
            # prefix sums let every node and chunk count be read off at its boundaries
            same = _prefix(h1[:, self.src] == h1[:, g.indices])
            own = h1[:, self.pal_owner]
            match = _prefix((h2 == own) & (own < self.B - 1))
            rows = slice(lo, lo + len(cf))
            if len(ch.nb_owner):
                d = same[:, ch.nb_starts + ch.nb_sizes] - same[:, ch.nb_starts]
                bad_nb[rows] = (np.abs(d - ch.nb_sizes / self.B) > self.thr + 1e-9).sum(axis=1)
            if len(ch.col_owner):
                p = match[:, ch.col_starts + ch.col_sizes] - match[:, ch.col_starts]
                restricted = h1[:, ch.col_owner] < self.B - 1
                far = np.abs(p - ch.col_sizes / max(self.B - 1, 1)) > self.thr + 1e-9
                bad_col[rows] = (far & restricted).sum(axis=1)
            # restricted-bin nodes need more colors than same-bin neighbors
            dprime = same[:, g.indptr[1:]] - same[:, g.indptr[:-1]]
            pprime = match[:, pal_ptr[1:]] - match[:, pal_ptr[:-1]]
            deficit[rows] = ((h1 < self.B - 1) & (pprime <= dprime)).sum(axis=1)
        return {"neighbor": bad_nb, "color": bad_col, "deficit": deficit}


def _prefix(mask: np.ndarray) -> np.ndarray:
    out = np.zeros((mask.shape[0], mask.shape[1] + 1), dtype=np.int32)
    np.cumsum(mask, axis=1, dtype=np.int32, out=out[:, 1:])
    return out


def partition_cost(instance: ListColoringInstance, hp: HashPair, cfg: PartitionConfig, chunks: Chunks | None = None) -> int:
    """Number of bad chunks (plus restricted nodes left without a palette
    surplus) under one hash pair."""
    chunks = chunks or make_chunks(instance, cfg.chunk_cap)
    ev = _Evaluator(instance, chunks, hp.B, chunk_threshold(cfg), hp.family.w, hp.c, cfg.seed_batch)
    res = ev.counts(hp.coeffs[None, :])
    return int(sum(int(v[0]) for v in res.values()))


def hash_family(instance: ListColoringInstance, cfg: PartitionConfig) -> KWiseFamily:
    top = max(instance.n, int(instance.color_universe().max(initial=0)) + 1, 2)
    w = max(8, math.ceil(math.log2(top)))
    return KWiseFamily(2 * cfg.independence, w, w)


def select_partition_hashes(
    instance: ListColoringInstance, cfg: PartitionConfig, level_salt: int = 0, meter: Meter | None = None, stage: str = "partition"
) -> tuple[HashPair, CondExpectResult]:
    """Conditional expectations over an enumerable slice of the pair family."""
    B = bin_count(instance.n, cfg.zeta)
    fam = hash_family(instance, cfg)
    sub = SubFamily(fam, cfg.enum_bits, cfg.salt ^ level_salt)
    chunks = make_chunks(instance, cfg.chunk_cap)
    ev = _Evaluator(instance, chunks, B, chunk_threshold(cfg), fam.w, cfg.independence, cfg.seed_batch)

    def term(coeffs: np.ndarray) -> np.ndarray:
        r = ev.counts(coeffs)
        return r["neighbor"] + r["color"] + r["deficit"]

    space = meter.S if meter else None
    chunk_bits = cfg.chunk_bits
    if space is not None:
        chunk_bits = max(1, min(chunk_bits, int(math.log2(space))))
    res = cond_expect_select(sub, [term], chunk_bits=chunk_bits, direction="minimize", space_words=space)
    if res.expectation >= 1:
        raise ExpectationNotBelowOne(f"mean cost {float(res.expectation):.3f} over {1 << cfg.enum_bits} seeds")
    if meter is not None:
        meter.cond_expect(stage, max(1, chunks.count + instance.n), cfg.enum_bits, chunk_bits)
    hp = HashPair(fam, np.array(res.seed, dtype=np.uint64), B)
    return hp, res


# ------------------------------------------------------------- partition


@dataclass
class PartitionLevel:
    parent: ListColoringInstance
    B: int
    bins: np.ndarray
    sub_nodes: list[np.ndarray]
    sub_instances: list[ListColoringInstance | None]
    hashes: HashPair
    dprime: np.ndarray
    pprime: np.ndarray

    @property
    def leftover(self) -> int:
        return self.B - 1


def low_space_partition(instance: ListColoringInstance, hp: HashPair) -> PartitionLevel:
    """Bins 0..B-2 get palettes restricted by h2; the leftover bin B-1 is
    built later by ``leftover_instance`` once its siblings are colored."""
    g = instance.graph
    B = hp.B
    bins = hp.node_bins(np.arange(g.n))
    universe = instance.color_universe()
    cbin = dict(zip(universe.tolist(), hp.color_bins(universe).tolist())) if len(universe) else {}
    src = g.arc_sources()
    dprime = np.bincount(src, weights=bins[src] == bins[g.indices], minlength=g.n).astype(np.int64)
    pprime = np.zeros(g.n, dtype=np.int64)
    subs: list[ListColoringInstance | None] = []
    nodes_by_bin = []
    for b in range(B):
        nodes = np.flatnonzero(bins == b)
        nodes_by_bin.append(nodes)
        if b == B - 1:
            subs.append(None)
            continue
        sg, ids = g.subgraph(nodes)
        pals = []
        for v in ids.tolist():
            pal = instance.palettes[v]
            keep = np.array([cbin[c] == b for c in pal.tolist()], dtype=bool) if len(pal) else np.zeros(0, bool)
            pals.append(pal[keep])
            pprime[v] = int(keep.sum())
        subs.append(ListColoringInstance(sg, pals, mode="list", check=False) if len(ids) else None)
    return PartitionLevel(instance, B, bins, nodes_by_bin, subs, hp, dprime, pprime)


def leftover_instance(level: PartitionLevel, colors: np.ndarray) -> tuple[ListColoringInstance | None, np.ndarray]:
    """Leftover bin with Pal(v) minus colors of v's colored neighbors."""
    inst = level.parent
    g = inst.graph
    nodes = level.sub_nodes[level.leftover]
    if len(nodes) == 0:
        return None, nodes
    sg, ids = g.subgraph(nodes)
    pals = []
    for v in ids.tolist():
        used = colors[g.neighbors(v)]
        pals.append(np.setdiff1d(inst.palettes[v], used[used >= 0]))
    for v, p in zip(ids.tolist(), pals):
        level.pprime[v] = len(p)
    return ListColoringInstance(sg, pals, mode="list", check=False), ids


def check_level(level: PartitionLevel, nodes: np.ndarray | None = None) -> list[str]:
    """Surplus p'(v) > d'(v) and pairwise-disjoint restricted palettes."""
    problems = []
    check = np.arange(level.parent.n) if nodes is None else nodes
    bad = check[level.pprime[check] <= level.dprime[check]]
    if len(bad):
        problems.append(f"{len(bad)} nodes with p' <= d' (first {int(bad[0])})")
    seen: dict[int, int] = {}
    for b, sub in enumerate(level.sub_instances):
        if sub is None:
            continue
        for c in sub.color_universe().tolist():
            if seen.setdefault(c, b) != b:
                problems.append(f"color {c} in bins {seen[c]} and {b}")
                break
    return problems


# ------------------------------------------------------------ recursion


@dataclass
class ReduceTrace:
    levels: list[dict] = field(default_factory=list)

    def to_json(self) -> list[dict]:
        return self.levels


Solver = Callable[[ListColoringInstance, Meter | None], np.ndarray]


def color_reduce(
    instance: ListColoringInstance,
    cfg: PartitionConfig,
    base_solver: Solver,
    depth: int,
    meter: Meter | None = None,
    trace: ReduceTrace | None = None,
    level_no: int = 0,
) -> np.ndarray:
    """Complete coloring (array of colors) of ``instance``."""
    if depth <= 0 or instance.n <= 1:
        return base_solver(instance, meter)
    try:
        hp, res = select_partition_hashes(instance, cfg, level_salt=level_no * 7919 + instance.n, meter=meter)
    except ExpectationNotBelowOne as exc:
        if trace is not None:
            trace.levels.append({"level": level_no, "n": instance.n, "fallback": str(exc)})
        return base_solver(instance, meter)
    level = low_space_partition(instance, hp)
    if meter is not None:
        meter.sort("partition", instance.n + instance.graph.m, width=2)
        meter.exchange("partition", 2 * instance.graph.m, width=1)
    restricted = np.concatenate([level.sub_nodes[b] for b in range(level.B - 1)]) if level.B > 1 else np.zeros(0, np.int64)
    problems = check_level(level, restricted)
    cost = int(res.value)
    assert cost == 0, f"selected hashes leave cost {cost}"
    assert not problems, problems
    colors = np.full(instance.n, UNCOLORED, dtype=np.int64)
    record = {
        "level": level_no,
        "n": instance.n,
        "delta": instance.delta,
        "bins": [int(len(x)) for x in level.sub_nodes],
        "hash_seed": hp.hex(),
        "cost": cost,
        "expectation": float(res.expectation),
        "restricted_ok": True,
    }
    if meter is not None:
        with meter.parallel() as fork:
            for b in range(level.B - 1):
                sub = level.sub_instances[b]
                if sub is not None:
                    colors[level.sub_nodes[b]] = color_reduce(sub, cfg, base_solver, depth - 1, fork(), trace, level_no + 1)
    else:
        for b in range(level.B - 1):
            sub = level.sub_instances[b]
            if sub is not None:
                colors[level.sub_nodes[b]] = color_reduce(sub, cfg, base_solver, depth - 1, None, trace, level_no + 1)
    left, ids = leftover_instance(level, colors)
    if left is not None:
        lp = check_level(level, ids)
        assert not lp, lp
        if meter is not None:
            meter.exchange("partition", 2 * instance.graph.m, width=1)
        colors[ids] = color_reduce(left, cfg, base_solver, depth - 1, meter, trace, level_no + 1)
    record["max_dprime"] = int(level.dprime.max(initial=0))
    record["min_pprime"] = int(level.pprime.min()) if instance.n else 0
    record["min_surplus"] = int((level.pprime - level.dprime).min()) if instance.n else 0
    if trace is not None:
        trace.levels.append(record)
    return colors
