"""Coin-parameterized randomized coloring steps, vectorized over a seed axis.

Every procedure takes the current coloring (one row of colors, UNCOLORED for
free nodes) and a CoinView of S seeds, and returns an (S, n) array with the
extended coloring under each seed.  Coins are keyed by node id; a node's
draws use fixed offsets inside its own stream, so the outcome of v depends
only on coins of nodes within two hops of v.

Coin layout
-----------
one-shot      bits [0, w) participation, then one uniform draw of the color
v1 / v2       one uniform draw at offset 0 for the tentative color
v2 (leader)   after its color draw: m sample draws, then m-1 permutation draws
bidding       w bits per available color, in palette order
Uniform draws over a set of size s use ``ceil(log2 s_max) + extra`` bits
reduced mod s, where s_max is the largest set size of the invocation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .derand import CoinView
from .instance import UNCOLORED, ListColoringInstance


class ContextTooSmall(ValueError):
    """A predicate was handed a ball smaller than its locality radius."""


class EmptyTentativePalette(Warning):
    pass


@dataclass(frozen=True)
class CoinLayout:
    w: int = 16
    extra: int = 8


DEFAULT_LAYOUT = CoinLayout()


def dyadic(p: float, w: int) -> int:
    """Numerator a of the dyadic a / 2^w just below p (clamped to [0, 2^w])."""
    return int(min(1 << w, max(0, math.floor(p * (1 << w) + 1e-12))))


def draw_bits(max_size: int, layout: CoinLayout) -> int:
    return max(0, math.ceil(math.log2(max(max_size, 1)))) + layout.extra


# ------------------------------------------------------------- palettes


@dataclass
class PaletteIndex:
    universe: np.ndarray
    ptr: np.ndarray
    vals: np.ndarray

    @property
    def K(self) -> int:
        return len(self.universe)


def palette_index(instance: ListColoringInstance) -> PaletteIndex:
    cached = getattr(instance, "_palette_index", None)
    if cached is not None:
        return cached
    universe = instance.color_universe()
    sizes = np.array([len(p) for p in instance.palettes], dtype=np.int64)
    ptr = np.concatenate([[0], np.cumsum(sizes)])
    flat = np.concatenate([np.asarray(p, dtype=np.int64) for p in instance.palettes]) if instance.n else np.zeros(0, np.int64)
    vals = np.searchsorted(universe, flat)
    idx = PaletteIndex(universe, ptr, vals)
    object.__setattr__(instance, "_palette_index", idx)
    return idx


@dataclass
class Available:
    """Per-node available colors (color indices, sorted) in CSR form."""

    ptr: np.ndarray
    vals: np.ndarray
    K: int

    @property
    def sizes(self) -> np.ndarray:
        return np.diff(self.ptr)

    def of(self, v: int) -> np.ndarray:
        return self.vals[self.ptr[v] : self.ptr[v + 1]]


def color_indices(instance: ListColoringInstance, colors: np.ndarray) -> np.ndarray:
    """Map actual colors to universe indices (-1 stays -1)."""
    pi = palette_index(instance)
    out = np.full(colors.shape, -1, dtype=np.int64)
    m = colors >= 0
    out[m] = np.searchsorted(pi.universe, colors[m])
    return out


def available(instance: ListColoringInstance, colors: np.ndarray) -> Available:
    """Pal(v) minus the colors of v's colored neighbors."""
    pi = palette_index(instance)
    g = instance.graph
    K = max(pi.K, 1)
    cidx = color_indices(instance, np.asarray(colors))
    src = g.arc_sources()
    taken = cidx[g.indices]
    keep = taken >= 0
    forbidden = np.unique(src[keep] * K + taken[keep])
    owner = np.repeat(np.arange(g.n), np.diff(pi.ptr))
    ok = ~np.isin(owner * K + pi.vals, forbidden, assume_unique=False)
    sizes = np.bincount(owner[ok], minlength=g.n)
    return Available(np.concatenate([[0], np.cumsum(sizes)]), pi.vals[ok], K)


def uncolored_degree(instance: ListColoringInstance, colors: np.ndarray) -> np.ndarray:
    """Works on a single row (n,) or a batch (S, n)."""
    g = instance.graph
    unc = np.asarray(colors) < 0
    if unc.ndim == 1:
        return np.bincount(g.arc_sources(), weights=unc[g.indices], minlength=g.n).astype(np.int64)
    src = g.arc_sources()
    out = np.zeros(unc.shape, dtype=np.int64)
    for s in range(unc.shape[0]):
        out[s] = np.bincount(src, weights=unc[s, g.indices], minlength=g.n)
    return out


def slack_after(instance: ListColoringInstance, before: np.ndarray, after: np.ndarray, avail: Available | None = None) -> np.ndarray:
    """(S, n) slack = |available| - uncolored degree under each outcome row."""
    g = instance.graph
    avail = avail or available(instance, before)
    K = avail.K
    before = np.asarray(before)
    base_size = avail.sizes
    src, dst = g.arc_sources(), g.indices
    owner = np.repeat(np.arange(g.n), avail.sizes)
    avail_keys = owner * K + avail.vals
    after_idx = color_indices(instance, np.asarray(after))
    S = after.shape[0]
    out = np.zeros((S, g.n), dtype=np.int64)
    new = (after >= 0) & (before[None, :] < 0)
    for s in range(S):
        arcs = new[s, dst]
        v, c = src[arcs], after_idx[s, dst[arcs]]
        keys = np.unique(v * K + c)
        hit = keys[np.isin(keys, avail_keys)]
        lost = np.bincount(hit // K, minlength=g.n)
        unc = np.bincount(src, weights=(after[s, dst] < 0), minlength=g.n)
        out[s] = base_size - lost - unc
    return out


# ------------------------------------------------------------ coin draws


def uniform_draw(coins: CoinView, ids: np.ndarray, offset: int, sizes: np.ndarray, nbits: int) -> np.ndarray:
    """Index in [0, size) per (seed, unit); -1 where size is 0."""
    raw = coins.take(ids, offset, nbits)
    sizes = np.asarray(sizes, dtype=np.int64)
    safe = np.maximum(sizes, 1).astype(np.uint64)
    idx = (raw % safe[None, :]).astype(np.int64)
    idx[:, sizes <= 0] = -1
    return idx


# -------------------------------------------------------------- one-shot


def one_shot_coloring(
    instance: ListColoringInstance,
    colors: np.ndarray,
    p: float,
    coins: CoinView,
    nodes: np.ndarray | None = None,
    layout: CoinLayout = DEFAULT_LAYOUT,
) -> np.ndarray:
    """Participants pick a uniform available color and keep it unless a
    lower-id participating neighbor picked the same color."""
    g = instance.graph
    colors = np.asarray(colors, dtype=np.int64)
    S = len(coins)
    out = np.broadcast_to(colors, (S, g.n)).copy()
    cand = np.flatnonzero(colors < 0) if nodes is None else np.asarray(nodes, dtype=np.int64)
    cand = cand[colors[cand] < 0]
    if len(cand) == 0 or p <= 0:
        return out
    avail = available(instance, colors)
    a = dyadic(p, layout.w)
    part = coins.take(cand, 0, layout.w) < np.uint64(a)
    sizes = avail.sizes[cand]
    nb = draw_bits(int(sizes.max(initial=1)), layout)
    idx = uniform_draw(coins, cand, layout.w, sizes, nb)
    pick = np.full((S, g.n), -1, dtype=np.int64)
    chosen = np.where(part & (idx >= 0), avail.vals[avail.ptr[cand][None, :] + np.maximum(idx, 0)], -1)
    pick[:, cand] = chosen
    src, dst = g.arc_sources(), g.indices
    low = dst < src
    vs, us = src[low], dst[low]
    clash = (pick[:, vs] >= 0) & (pick[:, vs] == pick[:, us])
    lost = np.zeros((S, g.n), dtype=bool)
    for s in range(S):
        lost[s, vs[clash[s]]] = True
    keep = (pick >= 0) & ~lost
    universe = palette_index(instance).universe
    out[keep] = universe[pick[keep]]
    return out


# ----------------------------------------------------------- dense steps


@dataclass
class ClusterSet:
    """Clusters padded into a (J, Q) table with dense in-cluster adjacency."""

    members: np.ndarray
    sizes: np.ndarray
    adj: np.ndarray
    leaders: np.ndarray

    @classmethod
    def build(cls, instance: ListColoringInstance, clusters: list[np.ndarray]) -> "ClusterSet":
        J = len(clusters)
        Q = max((len(c) for c in clusters), default=0)
        members = np.full((J, Q), -1, dtype=np.int64)
        adj = np.zeros((J, Q, Q), dtype=bool)
        g = instance.graph
        for j, c in enumerate(clusters):
            c = np.asarray(c, dtype=np.int64)
            members[j, : len(c)] = c
            pos = {int(v): i for i, v in enumerate(c.tolist())}
            for i, v in enumerate(c.tolist()):
                for u in g.neighbors(v).tolist():
                    k = pos.get(u)
                    if k is not None:
                        adj[j, i, k] = True
        sizes = np.array([len(c) for c in clusters], dtype=np.int64)
        leaders = np.array([int(np.min(c)) if len(c) else -1 for c in clusters], dtype=np.int64)
        return cls(members, sizes, adj, leaders)


def pi_order(cluster: np.ndarray, layer: np.ndarray) -> np.ndarray:
    """Cluster members by increasing (layer, id)."""
    cluster = np.asarray(cluster, dtype=np.int64)
    return cluster[np.lexsort((cluster, layer[cluster]))]


def _tentative_picks(
    instance: ListColoringInstance,
    avail: Available,
    cs: ClusterSet,
    order: np.ndarray,
    coins: CoinView,
    layout: CoinLayout,
) -> tuple[np.ndarray, int]:
    """Sequential tentative colors along ``order`` (S, J, Q) of member slots.

    Returns (S, n) tentative color indices (-1 = none) and the number of
    (seed, node) pairs that found an empty tentative palette.
    """
    S, J, Q = order.shape
    n = instance.n
    K = avail.K
    tent = np.full((S, n), -1, dtype=np.int64)
    if J == 0 or Q == 0:
        return tent, 0
    slot_color = np.full((S, J, Q), K, dtype=np.int64)
    placed = np.zeros((S, J, Q), dtype=bool)
    all_members = cs.members[cs.members >= 0]
    nb = draw_bits(int(avail.sizes[all_members].max(initial=1)), layout)
    raw = coins.take(np.maximum(cs.members.reshape(-1), 0), 0, nb).reshape(S, J, Q)
    jj = np.broadcast_to(np.arange(J)[None, :], (S, J))
    ss = np.broadcast_to(np.arange(S)[:, None], (S, J))
    empty = 0
    for q in range(Q):
        slot = order[:, :, q]
        valid = slot >= 0
        if not valid.any():
            continue
        sl = np.maximum(slot, 0)
        v = cs.members[jj, sl]
        blocked = np.zeros((S, J, K + 1), dtype=bool)
        nbr = cs.adj[jj, sl] & placed
        np.put_along_axis(blocked, np.where(nbr, slot_color, K), True, axis=2)
        blocked[:, :, K] = False
        vv = v[valid]
        lens = avail.sizes[vv]
        starts = avail.ptr[vv]
        rows = np.repeat(np.arange(len(vv)), lens)
        offs = np.arange(lens.sum()) - np.repeat(np.cumsum(lens) - lens, lens)
        cols = avail.vals[starts[rows] + offs]
        sidx, jidx = ss[valid][rows], jj[valid][rows]
        free = ~blocked[sidx, jidx, cols]
        count = np.bincount(rows, weights=free, minlength=len(vv)).astype(np.int64)
        r = raw[ss[valid], jj[valid], sl[valid]]
        want = np.where(count > 0, (r % np.maximum(count, 1).astype(np.uint64)).astype(np.int64), -1)
        rank = np.cumsum(free) - np.repeat(np.cumsum(np.bincount(rows, weights=free, minlength=len(vv)).astype(np.int64)) - count, lens)
        hit = free & (rank - 1 == want[rows])
        choice = np.full(len(vv), -1, dtype=np.int64)
        choice[rows[hit]] = cols[hit]
        empty += int((count == 0).sum())
        sv, jv, qv = ss[valid], jj[valid], sl[valid]
        slot_color[sv, jv, qv] = np.where(choice >= 0, choice, K)
        placed[sv, jv, qv] = True
        tent[sv, vv] = choice
    return tent, empty


def _permanent(instance: ListColoringInstance, colors: np.ndarray, tent: np.ndarray, out_arcs: np.ndarray) -> np.ndarray:
    g = instance.graph
    S = tent.shape[0]
    out = np.broadcast_to(np.asarray(colors, dtype=np.int64), (S, g.n)).copy()
    src = g.arc_sources()[out_arcs]
    dst = g.indices[out_arcs]
    clash = (tent[:, src] >= 0) & (tent[:, src] == tent[:, dst])
    lost = np.zeros_like(tent, dtype=bool)
    for s in range(S):
        lost[s, src[clash[s]]] = True
    keep = (tent >= 0) & ~lost
    out[keep] = palette_index(instance).universe[tent[keep]]
    return out


@dataclass
class StepStats:
    empty_tentative: int = 0
    sampled: list = field(default_factory=list)


def dense_step_v1(
    instance: ListColoringInstance,
    colors: np.ndarray,
    clusters: list[np.ndarray],
    out_arcs: np.ndarray,
    coins: CoinView,
    layout: CoinLayout = DEFAULT_LAYOUT,
    stats: StepStats | None = None,
) -> np.ndarray:
    """Clusters are given in pi order; all uncolored members pick in turn."""
    colors = np.asarray(colors, dtype=np.int64)
    clusters = [np.asarray(c, dtype=np.int64)[colors[np.asarray(c, dtype=np.int64)] < 0] for c in clusters]
    cs = ClusterSet.build(instance, clusters)
    S = len(coins)
    J, Q = cs.members.shape
    order = np.where(cs.members >= 0, np.arange(Q)[None, :], -1)
    order = np.broadcast_to(order, (S, J, Q)).copy()
    tent, empty = _tentative_picks(instance, available(instance, colors), cs, order, coins, layout)
    if stats is not None:
        stats.empty_tentative += empty
    return _permanent(instance, colors, tent, out_arcs)


def sample_and_permute(
    cs: ClusterSet,
    keep: np.ndarray,
    coins: CoinView,
    offset: int,
    layout: CoinLayout,
) -> np.ndarray:
    """Leader-driven Fisher-Yates: ``keep[j]`` members sampled, then shuffled.

    Returns (S, J, Q) member slots in pick order, -1 padded.
    """
    S = len(coins)
    J, Q = cs.members.shape
    order = np.full((S, J, Q), -1, dtype=np.int64)
    if J == 0:
        return order
    nbs = draw_bits(int(cs.sizes.max(initial=1)), layout)
    leaders = np.maximum(cs.leaders, 0)
    perm = np.broadcast_to(np.arange(Q)[None, None, :], (S, J, Q)).copy()
    sizes = cs.sizes[None, :]
    m_max = int(keep.max(initial=0))
    pos = offset
    for i in range(m_max):
        span = np.maximum(sizes - i, 1)
        r = coins.take(leaders, pos, nbs)
        pos += nbs
        j = i + (r % span.astype(np.uint64)).astype(np.int64)
        act = (i < keep)[None, :] & np.ones((S, 1), dtype=bool)
        a = perm[:, np.arange(J), i].copy()
        b = np.take_along_axis(perm, j[:, :, None], axis=2)[:, :, 0]
        perm[:, :, i] = np.where(act, b, a)
        np.put_along_axis(perm, j[:, :, None], np.where(act, a, b)[:, :, None], axis=2)
    # the sampled set, sorted, then an independent shuffle of it
    sample = np.where(np.arange(Q)[None, None, :] < keep[None, :, None], perm, Q)
    sample = np.sort(sample, axis=2)
    for i in range(max(m_max - 1, 0)):
        span = np.maximum(keep[None, :] - i, 1)
        r = coins.take(leaders, pos, nbs)
        pos += nbs
        j = i + (r % span.astype(np.uint64)).astype(np.int64)
        act = (i < keep - 1)[None, :] & np.ones((S, 1), dtype=bool)
        a = sample[:, :, i].copy()
        b = np.take_along_axis(sample, np.minimum(j, Q - 1)[:, :, None], axis=2)[:, :, 0]
        sample[:, :, i] = np.where(act, b, a)
        np.put_along_axis(sample, np.minimum(j, Q - 1)[:, :, None], np.where(act, a, b)[:, :, None], axis=2)
    order[:] = np.where(sample < Q, sample, -1)
    return order


def dense_step_v2(
    instance: ListColoringInstance,
    colors: np.ndarray,
    clusters: list[np.ndarray],
    deltas: np.ndarray,
    out_arcs: np.ndarray,
    coins: CoinView,
    layout: CoinLayout = DEFAULT_LAYOUT,
    stats: StepStats | None = None,
) -> np.ndarray:
    """Each cluster samples floor((1 - delta_j)|S_j|) uncolored members, shuffles
    them and runs the sequential pick of version 1 on the sample."""
    colors = np.asarray(colors, dtype=np.int64)
    clusters = [np.sort(np.asarray(c, dtype=np.int64)[colors[np.asarray(c, dtype=np.int64)] < 0]) for c in clusters]
    cs = ClusterSet.build(instance, clusters)
    deltas = np.clip(np.asarray(deltas, dtype=float), 0.0, 1.0)
    keep = np.floor((1 - deltas) * cs.sizes + 1e-12).astype(np.int64) if len(clusters) else np.zeros(0, np.int64)
    avail = available(instance, colors)
    members = cs.members[cs.members >= 0]
    nb = draw_bits(int(avail.sizes[members].max(initial=1)), layout)
    order = sample_and_permute(cs, keep, coins, nb, layout)
    if stats is not None:
        stats.sampled.append(int(keep.sum()))
    tent, empty = _tentative_picks(instance, avail, cs, order, coins, layout)
    if stats is not None:
        stats.empty_tentative += empty
    return _permanent(instance, colors, tent, out_arcs)


# --------------------------------------------------------------- bidding


def color_bidding(
    instance: ListColoringInstance,
    colors: np.ndarray,
    nodes: np.ndarray,
    out_arcs: np.ndarray,
    p: np.ndarray,
    C: float,
    coins: CoinView,
    layout: CoinLayout = DEFAULT_LAYOUT,
) -> np.ndarray:
    """Each available color joins S_v with probability C/(2 p_v); v takes the
    smallest color of S_v that no out-neighbor also selected."""
    g = instance.graph
    colors = np.asarray(colors, dtype=np.int64)
    S = len(coins)
    out = np.broadcast_to(colors, (S, g.n)).copy()
    nodes = np.asarray(nodes, dtype=np.int64)
    nodes = nodes[colors[nodes] < 0]
    if len(nodes) == 0:
        return out
    avail = available(instance, colors)
    K = avail.K
    p = np.asarray(p, dtype=float)
    thresh = np.array([dyadic(C / (2 * p[v]) if p[v] > 0 else 1.0, layout.w) for v in nodes.tolist()], dtype=np.uint64)
    sizes = avail.sizes[nodes]
    per_word = max(1, 64 // layout.w)
    n_words = math.ceil(int(sizes.max(initial=0)) / per_word)
    lens = sizes
    rows = np.repeat(np.arange(len(nodes)), lens)
    offs = np.arange(lens.sum()) - np.repeat(np.cumsum(lens) - lens, lens)
    cols = avail.vals[avail.ptr[nodes][rows] + offs]
    sel = np.zeros((S, len(rows)), dtype=bool)
    mask = np.uint64((1 << layout.w) - 1)
    max_size = int(sizes.max(initial=0))
    for wd in range(n_words):
        in_word = min(per_word, max_size - wd * per_word)
        raw = coins.take(nodes, wd * per_word * layout.w, in_word * layout.w)
        for k in range(in_word):
            pos = wd * per_word + k
            which = offs == pos
            if not which.any():
                continue
            piece = (raw >> np.uint64(k * layout.w)) & mask
            sel[:, which] = piece[:, rows[which]] < thresh[rows[which]][None, :]
    # out-neighbor conflicts
    local = np.full(g.n, -1, dtype=np.int64)
    local[nodes] = np.arange(len(nodes))
    src, dst = g.arc_sources()[out_arcs], g.indices[out_arcs]
    both = (local[src] >= 0) & (local[dst] >= 0)
    src, dst = src[both], dst[both]
    universe = palette_index(instance).universe
    for s in range(S):
        picked = sel[s]
        owner = nodes[rows[picked]]
        keys = owner * K + cols[picked]
        # a color selected by v is blocked if some out-neighbor u selected it too
        key_set = np.unique(keys)
        blocked = np.zeros(len(keys), dtype=bool)
        if len(src):
            order = np.argsort(src, kind="stable")
            s_sorted, d_sorted = src[order], dst[order]
            starts = np.searchsorted(s_sorted, owner, side="left")
            ends = np.searchsorted(s_sorted, owner, side="right")
            cnt = ends - starts
            if cnt.sum():
                rep = np.repeat(np.arange(len(keys)), cnt)
                arc = np.arange(cnt.sum()) - np.repeat(np.cumsum(cnt) - cnt, cnt) + np.repeat(starts, cnt)
                probe = d_sorted[arc] * K + cols[picked][rep]
                hit = np.isin(probe, key_set)
                blocked[rep[hit]] = True
        good = ~blocked
        best = np.full(g.n, K, dtype=np.int64)
        np.minimum.at(best, owner[good], cols[picked][good])
        win = best[nodes] < K
        out[s, nodes[win]] = universe[best[nodes[win]]]
    return out


# ------------------------------------------------------------- contexts


@dataclass
class BallContext:
    """What a predicate may look at: a ball of ``radius`` hops around the
    units, or the whole instance (radius None)."""

    instance: ListColoringInstance
    colors: np.ndarray
    radius: int | None = None
    extra: dict = field(default_factory=dict)

    def require(self, r: int) -> None:
        if self.radius is not None and self.radius < r:
            raise ContextTooSmall(f"predicate needs radius {r}, context has {self.radius}")
