"""Independent reference implementations used as test oracles.

Everything here is scalar Python over sets and dicts, written from the
definitions rather than from the vectorized code paths.
"""

from __future__ import annotations

import itertools
import math

import networkx as nx
import numpy as np


# ------------------------------------------------------------ GF(2^w)


def clmul(a: int, b: int) -> int:
    out = 0
    i = 0
    while b >> i:
        if (b >> i) & 1:
            out ^= a << i
        i += 1
    return out


def polymod(a: int, mod: int) -> int:
    dm = mod.bit_length() - 1
    while a.bit_length() - 1 >= dm:
        a ^= mod << (a.bit_length() - 1 - dm)
    return a


def is_irreducible(mod: int) -> bool:
    """Trial division by every polynomial of degree 1..deg/2."""
    d = mod.bit_length() - 1
    for q in range(2, 1 << (d // 2 + 1)):
        if q.bit_length() - 1 >= 1 and polymod(mod, q) == 0 and q != mod:
            return False
    return True


def _pmod_gcd(a: int, b: int) -> int:
    while b:
        a, b = b, polymod(a, b)
    return a


def _frobenius(x: int, times: int, mod: int) -> int:
    for _ in range(times):
        x = polymod(clmul(x, x), mod)
    return x


def rabin_irreducible(mod: int) -> bool:
    """Rabin's test: x^(2^d) = x mod f and gcd(x^(2^(d/p)) - x, f) = 1."""
    d = mod.bit_length() - 1
    if _frobenius(2, d, mod) != polymod(2, mod):
        return False
    primes = [p for p in range(2, d + 1) if d % p == 0 and all(p % q for q in range(2, p))]
    for p in primes:
        h = _frobenius(2, d // p, mod) ^ polymod(2, mod)
        if _pmod_gcd(mod, h).bit_length() > 1:
            return False
    return True


def poly_eval(coeffs, x: int, mod: int) -> int:
    acc, power = 0, 1
    for c in coeffs:
        acc ^= polymod(clmul(c, power), mod)
        power = polymod(clmul(power, x), mod)
    return acc


# ------------------------------------------------------------- graphs


def to_nx(graph) -> nx.Graph:
    G = nx.Graph()
    G.add_nodes_from(range(graph.n))
    G.add_edges_from(map(tuple, graph.edges().tolist()))
    return G


def friend_edges(G: nx.Graph, eps: float) -> set[tuple[int, int]]:
    delta = max((d for _, d in G.degree), default=0)
    need = math.floor((1 - eps) * delta + 1e-9)
    out = set()
    for u, v in G.edges:
        if len(set(G[u]) & set(G[v])) >= need:
            out.add((min(u, v), max(u, v)))
    return out


def dense_set(G: nx.Graph, eps: float) -> set[int]:
    delta = max((d for _, d in G.degree), default=0)
    need = math.floor((1 - eps) * delta + 1e-9)
    fr = friend_edges(G, eps)
    count = {v: 0 for v in G}
    for u, v in fr:
        count[u] += 1
        count[v] += 1
    return {v for v, c in count.items() if c >= need}


def almost_cliques(G: nx.Graph, eps: float) -> list[list[int]]:
    dense = dense_set(G, eps)
    H = nx.Graph()
    H.add_nodes_from(dense)
    H.add_edges_from((u, v) for u, v in friend_edges(G, eps) if u in dense and v in dense)
    return sorted(sorted(c) for c in nx.connected_components(H))


def distinct_within(graph, ids: np.ndarray, t: int) -> bool:
    G = to_nx(graph)
    for v in G:
        for u, d in nx.single_source_shortest_path_length(G, v, cutoff=t).items():
            if u != v and ids[u] == ids[v]:
                return False
    return True


# ------------------------------------------------------------ coins


def bits(seed: int, bits_per_unit: int, unit: int, offset: int, nbits: int) -> int:
    """Coins of a raw table seed: unit u owns bits [u*b, (u+1)*b)."""
    return (seed >> (unit * bits_per_unit + offset)) & ((1 << nbits) - 1)


def dyadic_num(p: float, w: int) -> int:
    return int(min(1 << w, max(0, math.floor(p * (1 << w) + 1e-12))))


def avail_list(inst, colors, v: int) -> list[int]:
    taken = {int(colors[u]) for u in inst.graph.neighbors(v) if colors[u] >= 0}
    return [int(c) for c in sorted(inst.palettes[v].tolist()) if c not in taken]


def ceil_log2(x: int) -> int:
    return max(0, math.ceil(math.log2(max(x, 1))))


def one_shot_oracle(inst, colors, p, seed, b, w, extra, nodes=None):
    n = inst.n
    cand = [v for v in (range(n) if nodes is None else nodes) if colors[v] < 0]
    out = list(int(c) for c in colors)
    if not cand or p <= 0:
        return out
    av = {v: avail_list(inst, colors, v) for v in cand}
    nb = ceil_log2(max(len(av[v]) for v in cand)) + extra
    a = dyadic_num(p, w)
    pick = {}
    for v in cand:
        if bits(seed, b, v, 0, w) < a and av[v]:
            pick[v] = av[v][bits(seed, b, v, w, nb) % len(av[v])]
    for v, c in pick.items():
        if not any(u < v and pick.get(int(u)) == c for u in inst.graph.neighbors(v)):
            out[v] = c
    return out


def _sequential(inst, order_per_cluster, av, nb, seed, b):
    """Tentative colors for members taken in the given order per cluster."""
    adj = {v: set(int(u) for u in inst.graph.neighbors(v)) for v in range(inst.n)}
    tent = {}
    for order in order_per_cluster:
        placed = {}
        for v in order:
            used = {placed[u] for u in placed if u in adj[v] and placed[u] is not None}
            free = [c for c in av[v] if c not in used]
            if free:
                tent[v] = free[bits(seed, b, v, 0, nb) % len(free)]
            else:
                tent[v] = None
            placed[v] = tent[v]
    return tent


def _finalize(inst, colors, tent, out_arcs):
    out = list(int(c) for c in colors)
    src = inst.graph.arc_sources()
    dst = inst.graph.indices
    outs = {}
    for s, d, o in zip(src.tolist(), dst.tolist(), out_arcs.tolist()):
        if o:
            outs.setdefault(s, []).append(d)
    for v, c in tent.items():
        if c is None:
            continue
        if any(tent.get(u) == c for u in outs.get(v, [])):
            continue
        out[v] = c
    return out


def v1_oracle(inst, colors, clusters, out_arcs, seed, b, extra):
    clusters = [[int(v) for v in c if colors[v] < 0] for c in clusters]
    members = [v for c in clusters for v in c]
    av = {v: avail_list(inst, colors, v) for v in members}
    nb = ceil_log2(max((len(av[v]) for v in members), default=1)) + extra
    tent = _sequential(inst, clusters, av, nb, seed, b)
    return _finalize(inst, colors, tent, out_arcs)


def v2_oracle(inst, colors, clusters, deltas, out_arcs, seed, b, extra):
    clusters = [sorted(int(v) for v in c if colors[v] < 0) for c in clusters]
    members = [v for c in clusters for v in c]
    av = {v: avail_list(inst, colors, v) for v in members}
    nb = ceil_log2(max((len(av[v]) for v in members), default=1)) + extra
    nbs = ceil_log2(max((len(c) for c in clusters), default=1)) + extra
    keep = [math.floor((1 - min(max(d, 0.0), 1.0)) * len(c) + 1e-12) for c, d in zip(clusters, deltas)]
    m_max = max(keep, default=0)
    orders = []
    for c, kj in zip(clusters, keep):
        if not c:
            orders.append([])
            continue
        leader = min(c)
        pos = nb
        perm = list(range(len(c)))
        for i in range(m_max):
            r = bits(seed, b, leader, pos, nbs)
            pos += nbs
            if i < kj:
                j = i + r % max(len(c) - i, 1)
                perm[i], perm[j] = perm[j], perm[i]
        sample = sorted(perm[:kj])
        for i in range(max(m_max - 1, 0)):
            r = bits(seed, b, leader, pos, nbs)
            pos += nbs
            if i < kj - 1:
                j = i + r % (kj - i)
                sample[i], sample[j] = sample[j], sample[i]
        orders.append([c[s] for s in sample])
    tent = _sequential(inst, orders, av, nb, seed, b)
    return _finalize(inst, colors, tent, out_arcs)


def bidding_oracle(inst, colors, nodes, out_arcs, p, C, seed, b, w):
    nodes = [int(v) for v in nodes if colors[v] < 0]
    out = list(int(c) for c in colors)
    sel = {}
    for v in nodes:
        thr = dyadic_num(C / (2 * p[v]) if p[v] > 0 else 1.0, w)
        av = avail_list(inst, colors, v)
        sel[v] = {c for i, c in enumerate(av) if bits(seed, b, v, i * w, w) < thr}
    src, dst = inst.graph.arc_sources(), inst.graph.indices
    outs = {}
    for s, d, o in zip(src.tolist(), dst.tolist(), out_arcs.tolist()):
        if o and s in sel and d in sel:
            outs.setdefault(s, []).append(d)
    for v in nodes:
        ok = [c for c in sel[v] if not any(c in sel[u] for u in outs.get(v, []))]
        if ok:
            out[v] = min(ok)
    return out


# --------------------------------------------------------- selection


def flat_argmax(units, predicate, source) -> int:
    """Seed maximizing the happy count, evaluated one seed at a time."""
    best, best_count = 0, -1
    for s in range(1 << source.seed_bits):
        count = int(np.asarray(predicate(units, None, source.view(np.array([s])))).sum())
        if count > best_count:
            best, best_count = s, count
    return best


def kwise_uniform(table: np.ndarray, k: int, b: int) -> bool:
    """Every k-tuple of distinct inputs hits each output tuple equally often."""
    n_seeds, n_inputs = table.shape
    for combo in itertools.combinations(range(n_inputs), k):
        counts: dict[tuple, int] = {}
        for s in range(n_seeds):
            key = tuple(int(table[s, x]) for x in combo)
            counts[key] = counts.get(key, 0) + 1
        if len(counts) != (1 << (k * b)) or len(set(counts.values())) != 1:
            return False
    return True
