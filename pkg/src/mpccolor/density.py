"""Sparse/dense decomposition: friend edges, dense nodes, almost-cliques,
layers, blocks with small/medium/large classes, orientations and short
ball-unique identifiers."""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .instance import Graph

GUARD = 1e-12


def floor_threshold(x: float) -> int:
    return math.floor(x + GUARD)


@dataclass(frozen=True)
class EpsSequence:
    values: tuple[float, ...]
    cap: float
    delta: int

    @property
    def ell(self) -> int:
        return len(self.values)


def eps_sequence(delta: int, eps_cap: float = 1 / 20, eps1_exponent: float = 0.1) -> EpsSequence:
    """eps_1 = Delta^-exponent, eps_i = sqrt(eps_{i-1}), kept while <= eps_cap."""
    if not 0 < eps_cap < 0.2:
        raise ValueError("eps_cap must lie in (0, 1/5)")
    vals: list[float] = []
    if delta >= 2:
        e = float(delta) ** (-eps1_exponent)
        while e <= eps_cap + GUARD:
            vals.append(e)
            e = math.sqrt(e)
    if delta >= 4 and eps1_exponent <= 0.1 + GUARD:
        assert len(vals) <= 2 * math.log2(math.log2(delta)) + 2
    return EpsSequence(tuple(vals), eps_cap, delta)


def adjacency_matrix(graph: Graph) -> sp.csr_matrix:
    data = np.ones(len(graph.indices), dtype=np.int32)
    return sp.csr_matrix((data, graph.indices, graph.indptr), shape=(graph.n, graph.n))


def common_neighbor_counts(graph: Graph, batch: int = 2048) -> np.ndarray:
    """|N(u) & N(v)| for every arc (u, v), aligned with ``graph.indices``."""
    A = adjacency_matrix(graph)
    out = np.zeros(len(graph.indices), dtype=np.int64)
    for lo in range(0, graph.n, batch):
        hi = min(graph.n, lo + batch)
        rows = A[lo:hi]
        prod = (rows @ A).multiply(rows).tocsr()
        prod.sort_indices()
        # prod has the same sparsity as rows except where the count is zero
        for r in range(hi - lo):
            v = lo + r
            s, e = graph.indptr[v], graph.indptr[v + 1]
            cols = prod.indices[prod.indptr[r] : prod.indptr[r + 1]]
            vals = prod.data[prod.indptr[r] : prod.indptr[r + 1]]
            pos = np.searchsorted(graph.indices[s:e], cols)
            out[s + pos] = vals
    return out


class DensityCache:
    """Common-neighbor counts shared by all epsilon levels of one graph."""

    def __init__(self, graph: Graph):
        self.graph = graph
        self._counts: np.ndarray | None = None

    @property
    def counts(self) -> np.ndarray:
        if self._counts is None:
            self._counts = common_neighbor_counts(self.graph)
        return self._counts


def friend_arcs(graph: Graph, eps: float, q: int = 0, cache: DensityCache | None = None) -> np.ndarray:
    counts = (cache or DensityCache(graph)).counts
    return counts >= floor_threshold((1 - eps) * (graph.max_degree - q))


def compute_friend_edges(graph: Graph, eps: float, q: int = 0, cache: DensityCache | None = None) -> np.ndarray:
    """Edges (u < v) whose endpoints share at least (1-eps)(Delta-q) neighbors."""
    mask = friend_arcs(graph, eps, q, cache)
    src = graph.arc_sources()
    keep = mask & (src < graph.indices)
    return np.stack([src[keep], graph.indices[keep]], axis=1)


def dense_nodes(graph: Graph, eps: float, q: int = 0, cache: DensityCache | None = None) -> np.ndarray:
    mask = friend_arcs(graph, eps, q, cache)
    friends = np.bincount(graph.arc_sources()[mask], minlength=graph.n)
    return friends >= floor_threshold((1 - eps) * (graph.max_degree - q))


def compute_almost_cliques(graph: Graph, eps: float, q: int = 0, cache: DensityCache | None = None) -> list[np.ndarray]:
    """Connected components of dense nodes joined by friend edges, ordered by min id."""
    dense = dense_nodes(graph, eps, q, cache)
    return _components(graph, dense, friend_arcs(graph, eps, q, cache))


def _components(graph: Graph, dense: np.ndarray, friend: np.ndarray) -> list[np.ndarray]:
    src = graph.arc_sources()
    keep = friend & dense[src] & dense[graph.indices]
    M = sp.csr_matrix((np.ones(int(keep.sum())), (src[keep], graph.indices[keep])), shape=(graph.n, graph.n))
    _, labels = connected_components(M, directed=False)
    nodes = np.flatnonzero(dense)
    groups: dict[int, list[int]] = {}
    for v in nodes.tolist():
        groups.setdefault(int(labels[v]), []).append(v)
    return sorted((np.array(g, dtype=np.int64) for g in groups.values()), key=lambda c: int(c[0]))


@dataclass
class CliqueReport:
    size: int
    max_external_dense: int
    max_antidegree: int
    weak_diameter_ok: bool
    far_pair: tuple[int, int] | None
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def verify_clique_props(graph: Graph, clique: np.ndarray, eps: float, q: int = 0, dense: np.ndarray | None = None) -> CliqueReport:
    """Check the four structural bounds of an almost-clique exactly."""
    clique = np.asarray(clique, dtype=np.int64)
    delta = graph.max_degree - q
    if dense is None:
        dense = dense_nodes(graph, eps, q)
    inside = np.zeros(graph.n, dtype=bool)
    inside[clique] = True
    A = adjacency_matrix(graph)
    rows = A[clique]
    ext = np.asarray(rows @ (dense & ~inside).astype(np.int64)).ravel()
    internal = np.asarray(rows @ inside.astype(np.int64)).ravel()
    anti = len(clique) - 1 - internal
    sub = rows[:, clique].toarray() > 0
    two = (rows @ rows.T).toarray() > 0
    near = sub | two | np.eye(len(clique), dtype=bool)
    far = np.argwhere(~near)
    rep = CliqueReport(
        size=len(clique),
        max_external_dense=int(ext.max(initial=0)),
        max_antidegree=int(anti.max(initial=0)),
        weak_diameter_ok=len(far) == 0,
        far_pair=(int(clique[far[0][0]]), int(clique[far[0][1]])) if len(far) else None,
    )
    if rep.max_external_dense > eps * delta + GUARD:
        rep.violations.append(f"external dense degree {rep.max_external_dense} > {eps * delta:.3f}")
    if not rep.max_antidegree < 3 * eps * delta - GUARD:
        rep.violations.append(f"antidegree {rep.max_antidegree} >= {3 * eps * delta:.3f}")
    if rep.size > (1 + 3 * eps) * delta + GUARD:
        rep.violations.append(f"size {rep.size} > {(1 + 3 * eps) * delta:.3f}")
    if not rep.weak_diameter_ok:
        rep.violations.append(f"nodes {rep.far_pair} are more than two hops apart")
    return rep


# ----------------------------------------------------------------- hierarchy


SMALL, MEDIUM, LARGE = "small", "medium", "large"


@dataclass
class Block:
    index: int
    layer: int
    clique: int
    nodes: np.ndarray
    eligible: bool
    kind: str = SMALL

    @property
    def size(self) -> int:
        return len(self.nodes)


@dataclass
class DensityHierarchy:
    eps: EpsSequence
    delta: int
    q: int
    vstar: np.ndarray
    layer: np.ndarray
    dense: list[np.ndarray]
    cliques: list[list[np.ndarray]]
    clique_of: list[np.ndarray]
    blocks: list[Block]
    ancestors: dict[int, set[int]]
    block_of: np.ndarray

    @property
    def ell(self) -> int:
        return self.eps.ell

    @property
    def sparse_layer(self) -> int:
        return self.ell + 1

    def class_mask(self, kind: str, layers: range | list[int] | None = None) -> np.ndarray:
        mask = np.zeros(len(self.layer), dtype=bool)
        for b in self.blocks:
            if b.kind == kind and (layers is None or b.layer in layers):
                mask[b.nodes] = True
        return mask

    @property
    def sparse_mask(self) -> np.ndarray:
        return self.vstar & (self.layer == self.sparse_layer)

    def eps_of_layer(self, i: int) -> float:
        return self.eps.values[i - 1]

    def to_json(self) -> str:
        levels = []
        for i, cl in enumerate(self.cliques, start=1):
            hist = Counter(len(c) for c in cl)
            levels.append({"level": i, "eps": self.eps.values[i - 1], "cliques": len(cl), "size_histogram": {str(k): v for k, v in sorted(hist.items())}})
        blocks = [{"layer": b.layer, "size": b.size, "class": b.kind} for b in self.blocks]
        return json.dumps({"levels": levels, "blocks": blocks, "sparse": int(self.sparse_mask.sum())}, sort_keys=True)


def eligibility_threshold(delta: int, eps: float) -> int:
    return floor_threshold(delta / math.log(1 / eps))


def build_hierarchy(graph: Graph, vstar: np.ndarray, eps: EpsSequence, q: int = 0, cache: DensityCache | None = None) -> DensityHierarchy:
    """Layers of V*, blocks per layer and the greedy large-block selection."""
    cache = cache or DensityCache(graph)
    vstar = np.asarray(vstar, dtype=bool)
    ell = eps.ell
    layer = np.zeros(graph.n, dtype=np.int64)
    dense_sets, clique_lists, clique_of = [], [], []
    for i, e in enumerate(eps.values, start=1):
        dense = dense_nodes(graph, e, q, cache)
        cl = _components(graph, dense, friend_arcs(graph, e, q, cache))
        owner = np.full(graph.n, -1, dtype=np.int64)
        for j, c in enumerate(cl):
            owner[c] = j
        dense_sets.append(dense)
        clique_lists.append(cl)
        clique_of.append(owner)
        newly = vstar & dense & (layer == 0)
        layer[newly] = i
    layer[vstar & (layer == 0)] = ell + 1
    blocks: list[Block] = []
    block_of = np.full(graph.n, -1, dtype=np.int64)
    for i in range(1, ell + 1):
        thr = eligibility_threshold(graph.max_degree - q, eps.values[i - 1])
        in_layer = layer == i
        for j, c in enumerate(clique_lists[i - 1]):
            members = c[in_layer[c]]
            if len(members):
                b = Block(index=len(blocks), layer=i, clique=j, nodes=members, eligible=len(members) >= thr)
                block_of[members] = b.index
                blocks.append(b)
    ancestors: dict[int, set[int]] = {b.index: set() for b in blocks}
    by_key = {(b.layer, b.clique): b.index for b in blocks}
    for b in blocks:
        for i2 in range(b.layer + 1, ell + 1):
            owner = clique_of[i2 - 1][b.nodes[0]]
            key = (i2, int(owner))
            if owner >= 0 and key in by_key:
                ancestors[b.index].add(by_key[key])
    select_large_blocks(blocks, ancestors)
    return DensityHierarchy(
        eps=eps, delta=graph.max_degree, q=q, vstar=vstar, layer=layer, dense=dense_sets,
        cliques=clique_lists, clique_of=clique_of, blocks=blocks, ancestors=ancestors, block_of=block_of,
    )


def related(a: int, b: int, ancestors: dict[int, set[int]]) -> bool:
    return b in ancestors[a] or a in ancestors[b]


def select_large_blocks(blocks: list[Block], ancestors: dict[int, set[int]]) -> None:
    """Greedy maximal independent set of eligible blocks, by (size desc,
    layer asc, min id asc); eligible losers become medium, the rest small."""
    order = sorted((b for b in blocks if b.eligible), key=lambda b: (-b.size, b.layer, int(b.nodes.min())))
    chosen: list[int] = []
    for b in order:
        if all(not related(b.index, c, ancestors) for c in chosen):
            chosen.append(b.index)
            b.kind = LARGE
        else:
            b.kind = MEDIUM
    for b in blocks:
        if not b.eligible:
            b.kind = SMALL


@dataclass
class ClassSlackReport:
    ok: bool
    small_checked: int
    medium_checked: int
    min_small_margin: float | None
    min_medium_margin: float | None
    violations: list[tuple[int, int, float]] = field(default_factory=list)


def check_class_slack(hierarchy: DensityHierarchy, graph: Graph) -> ClassSlackReport:
    """Neighbor counts of small and medium nodes towards later classes."""
    delta = hierarchy.delta
    small = hierarchy.class_mask(SMALL)
    medium = hierarchy.class_mask(MEDIUM)
    large = hierarchy.class_mask(LARGE)
    sparse = hierarchy.sparse_mask
    A = adjacency_matrix(graph)
    vstar_deg = A @ hierarchy.vstar.astype(np.int64)
    later_s = A @ (medium | large | sparse).astype(np.int64)
    later_m = A @ (large | sparse).astype(np.int64)
    viol = []
    ms, mm = None, None
    ns = nm = 0
    for v in np.flatnonzero(small).tolist():
        if vstar_deg[v] >= delta / 3 - GUARD:
            ns += 1
            margin = later_s[v] - delta / 4
            ms = margin if ms is None else min(ms, margin)
            if margin < -GUARD:
                viol.append((v, int(later_s[v]), delta / 4))
    for v in np.flatnonzero(medium).tolist():
        nm += 1
        bound = delta / (2 * math.log(1 / hierarchy.eps_of_layer(int(hierarchy.layer[v]))))
        margin = later_m[v] - bound
        mm = margin if mm is None else min(mm, margin)
        if margin < -GUARD:
            viol.append((v, int(later_m[v]), bound))
    return ClassSlackReport(ok=not viol, small_checked=ns, medium_checked=nm, min_small_margin=ms, min_medium_margin=mm, violations=viol)


# --------------------------------------------------------------- orientation


def out_arc_mask(graph: Graph, layer: np.ndarray, active: np.ndarray | None = None) -> np.ndarray:
    """Arc (v, u) is outgoing for v when u is denser (smaller layer) or equally
    dense with a smaller id; restricted to arcs inside ``active``."""
    src = graph.arc_sources()
    dst = graph.indices
    lv, lu = layer[src], layer[dst]
    out = (lv > lu) | ((lv == lu) & (src > dst))
    if active is not None:
        out &= active[src] & active[dst]
    return out


def star_arc_mask(graph: Graph, layer: np.ndarray, active: np.ndarray | None = None) -> np.ndarray:
    """Arc (v, u) with layer(u) <= layer(v)."""
    src = graph.arc_sources()
    out = layer[graph.indices] <= layer[src]
    if active is not None:
        out &= active[src] & active[graph.indices]
    return out


# ------------------------------------------------------------------- linial


def _primes_from(lo: int):
    p = max(2, lo)
    while True:
        if all(p % d for d in range(2, int(math.isqrt(p)) + 1)):
            yield p
        p += 1


def power_graph(graph: Graph, t: int) -> Graph:
    """Graph joining nodes at distance 1..t."""
    if t <= 1:
        return graph
    A = adjacency_matrix(graph).astype(bool).astype(np.int32)
    reach = A.copy()
    frontier = A.copy()
    for _ in range(t - 1):
        frontier = (frontier @ A).astype(bool).astype(np.int32)
        reach = (reach + frontier).astype(bool).astype(np.int32)
    reach.setdiag(0)
    reach.eliminate_zeros()
    coo = reach.tocoo()
    keep = coo.row < coo.col
    return Graph.from_edges(graph.n, np.stack([coo.row[keep], coo.col[keep]], axis=1))


def _linial_round(H: Graph, colors: np.ndarray) -> np.ndarray | None:
    """One polynomial set-system reduction; None when it cannot shrink."""
    m = int(colors.max()) + 1 if len(colors) else 1
    dH = H.max_degree
    best = None
    for k in (1, 2, 3):
        for q in _primes_from(k * dH + 1):
            if q ** (k + 1) >= m:
                break
        if best is None or q * q < best[1] * best[1]:
            best = (k, q)
    k, q = best
    if q * q >= m:
        return None
    # coefficients of each node's polynomial in base q
    coef = np.stack([(colors // q**j) % q for j in range(k + 1)], axis=1)
    xs = np.arange(q)
    vals = np.zeros((len(colors), q), dtype=np.int64)
    for j in range(k, -1, -1):
        vals = (vals * xs[None, :] + coef[:, j : j + 1]) % q
    src = H.arc_sources()
    clash = np.zeros((len(colors), q), dtype=bool)
    hit = vals[src] == vals[H.indices]
    np.logical_or.at(clash, src, hit)
    x = np.argmax(~clash, axis=1)
    assert np.all(~clash[np.arange(len(colors)), x])
    return x * q + vals[np.arange(len(colors)), x]


def linial_ids(graph: Graph, t: int = 2) -> np.ndarray:
    """Identifiers distinct for any two nodes within distance t.

    Starts from the node ids and repeats the polynomial reduction while it
    shrinks the id range; isolated nodes in the power graph get id 0.
    """
    if graph.n == 0:
        return np.zeros(0, dtype=np.int64)
    H = power_graph(graph, t)
    ids = np.arange(graph.n, dtype=np.int64)
    while True:
        nxt = _linial_round(H, ids)
        if nxt is None or int(nxt.max()) >= int(ids.max()):
            break
        ids = nxt
    ids = ids.copy()
    ids[H.degrees == 0] = 0
    return ids
