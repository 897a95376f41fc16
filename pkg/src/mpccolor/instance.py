"""Graphs, list-coloring instances, partial colorings, validity checks,
generators and plain-text I/O."""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

UNCOLORED = -1


class ParseError(ValueError):
    pass


class PaletteError(ValueError):
    pass


class PaletteTooSmall(PaletteError):
    pass


class DuplicateEdge(ValueError):
    pass


class UnknownNode(KeyError):
    pass


class BadParams(ValueError):
    pass


# ------------------------------------------------------------------ graph


class Graph:
    """Undirected simple graph in CSR form with sorted neighbor lists."""

    def __init__(self, n: int, indptr: np.ndarray, indices: np.ndarray):
        self.n = int(n)
        self.indptr = np.asarray(indptr, dtype=np.int64)
        self.indices = np.asarray(indices, dtype=np.int64)
        self.degrees = np.diff(self.indptr)
        self.max_degree = int(self.degrees.max()) if self.n else 0

    @classmethod
    def from_edges(cls, n: int, edges: np.ndarray | Sequence[tuple[int, int]]) -> "Graph":
        e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        if len(e) and (e.min() < 0 or e.max() >= n):
            raise ValueError("edge endpoint out of range")
        if np.any(e[:, 0] == e[:, 1]):
            raise ValueError("self-loop")
        lo, hi = np.minimum(e[:, 0], e[:, 1]), np.maximum(e[:, 0], e[:, 1])
        key = np.unique(lo * max(n, 1) + hi)
        lo, hi = key // max(n, 1), key % max(n, 1)
        src = np.concatenate([lo, hi])
        dst = np.concatenate([hi, lo])
        order = np.lexsort((dst, src))
        src, dst = src[order], dst[order]
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.add.at(indptr, src + 1, 1)
        return cls(n, np.cumsum(indptr), dst)

    def neighbors(self, v: int) -> np.ndarray:
        return self.indices[self.indptr[v] : self.indptr[v + 1]]

    @property
    def adjacency(self) -> list[np.ndarray]:
        return [self.neighbors(v) for v in range(self.n)]

    def edges(self) -> np.ndarray:
        """Edge array (m, 2) with u < v, sorted."""
        src = np.repeat(np.arange(self.n), self.degrees)
        keep = src < self.indices
        return np.stack([src[keep], self.indices[keep]], axis=1)

    @property
    def m(self) -> int:
        return int(len(self.indices) // 2)

    def arc_sources(self) -> np.ndarray:
        return np.repeat(np.arange(self.n), self.degrees)

    def subgraph(self, nodes: np.ndarray) -> tuple["Graph", np.ndarray]:
        """Induced subgraph on ``nodes``; returns (graph, original ids)."""
        nodes = np.unique(np.asarray(nodes, dtype=np.int64))
        local = np.full(self.n, -1, dtype=np.int64)
        local[nodes] = np.arange(len(nodes))
        e = self.edges()
        keep = (local[e[:, 0]] >= 0) & (local[e[:, 1]] >= 0)
        return Graph.from_edges(len(nodes), local[e[keep]]), nodes

    def __eq__(self, other: object) -> bool:
        return (
            isinstance(other, Graph)
            and self.n == other.n
            and np.array_equal(self.indptr, other.indptr)
            and np.array_equal(self.indices, other.indices)
        )

    def __repr__(self) -> str:
        return f"Graph(n={self.n}, m={self.m}, max_degree={self.max_degree})"


# -------------------------------------------------------------- instances


def relaxed_floor(delta: int) -> int:
    return delta - math.ceil(delta ** 0.6) if delta > 0 else 0


def palette_floor(degrees: np.ndarray, delta: int, mode: str) -> np.ndarray:
    """Smallest allowed palette size per node."""
    if mode == "standard":
        return np.full(len(degrees), delta + 1, dtype=np.int64)
    if mode == "relaxed":
        return np.maximum(degrees + 1, relaxed_floor(delta))
    if mode == "list":
        return degrees + 1
    raise ValueError(f"unknown palette mode {mode!r}")


@dataclass(eq=False)
class ListColoringInstance:
    """A graph with one sorted color list per node.

    ``mode`` is ``standard`` (exactly Delta+1 colors), ``relaxed``
    (at least max(deg+1, Delta - ceil(Delta^0.6))) or ``list`` (deg+1, used
    for intermediate sub-instances).
    """

    graph: Graph
    palettes: list[np.ndarray]
    mode: str = "standard"
    check: bool = True

    def __post_init__(self) -> None:
        self.palettes = [np.unique(np.asarray(p, dtype=np.int64)) for p in self.palettes]
        if len(self.palettes) != self.graph.n:
            raise PaletteError("one palette per node required")
        if self.check:
            sizes = self.palette_sizes
            floor = palette_floor(self.graph.degrees, self.delta, self.mode)
            short = np.flatnonzero(sizes < floor)
            if len(short):
                v = int(short[0])
                raise PaletteTooSmall(f"node {v}: palette size {sizes[v]} < {floor[v]} ({self.mode})")
            if self.mode == "standard" and np.any(sizes != self.delta + 1):
                v = int(np.flatnonzero(sizes != self.delta + 1)[0])
                raise PaletteError(f"node {v}: standard mode needs exactly {self.delta + 1} colors")

    @property
    def n(self) -> int:
        return self.graph.n

    @property
    def delta(self) -> int:
        return self.graph.max_degree

    @property
    def palette_sizes(self) -> np.ndarray:
        return np.array([len(p) for p in self.palettes], dtype=np.int64)

    def color_universe(self) -> np.ndarray:
        if not self.palettes:
            return np.zeros(0, dtype=np.int64)
        return np.unique(np.concatenate(self.palettes))

    def __eq__(self, other: object) -> bool:
        return (
            isinstance(other, ListColoringInstance)
            and self.mode == other.mode
            and self.graph == other.graph
            and all(np.array_equal(a, b) for a, b in zip(self.palettes, other.palettes))
        )


class PartialColoring:
    """Node -> color or UNCOLORED, stored as an int64 array."""

    def __init__(self, colors: np.ndarray | Sequence[int] | int):
        if isinstance(colors, (int, np.integer)):
            colors = np.full(int(colors), UNCOLORED, dtype=np.int64)
        self.colors = np.array(colors, dtype=np.int64)

    @classmethod
    def empty(cls, n: int) -> "PartialColoring":
        return cls(n)

    def copy(self) -> "PartialColoring":
        return PartialColoring(self.colors.copy())

    @property
    def colored(self) -> np.ndarray:
        return self.colors != UNCOLORED

    @property
    def uncolored_nodes(self) -> np.ndarray:
        return np.flatnonzero(self.colors == UNCOLORED)

    def __getitem__(self, v: int) -> int | None:
        c = int(self.colors[v])
        return None if c == UNCOLORED else c

    def __len__(self) -> int:
        return len(self.colors)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, PartialColoring) and np.array_equal(self.colors, other.colors)


# ------------------------------------------------------------- validation


@dataclass
class ValidityReport:
    proper: bool
    feasible: bool
    complete: bool
    conflict_edges: list[tuple[int, int]] = field(default_factory=list)
    infeasible_nodes: list[int] = field(default_factory=list)
    uncolored_nodes: list[int] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.proper and self.feasible and self.complete


def palette_membership(instance: ListColoringInstance, nodes: np.ndarray, colors: np.ndarray) -> np.ndarray:
    """Whether colors[i] lies in the palette of nodes[i]."""
    out = np.zeros(len(nodes), dtype=bool)
    for i, (v, c) in enumerate(zip(nodes.tolist(), colors.tolist())):
        pal = instance.palettes[v]
        j = np.searchsorted(pal, c)
        out[i] = j < len(pal) and pal[j] == c
    return out


def validate_coloring(instance: ListColoringInstance, coloring: PartialColoring) -> ValidityReport:
    col = coloring.colors
    if len(col) != instance.n:
        raise ValueError("coloring size does not match the instance")
    e = instance.graph.edges()
    clash = (col[e[:, 0]] != UNCOLORED) & (col[e[:, 0]] == col[e[:, 1]])
    bad_edges = [tuple(map(int, x)) for x in e[clash]]
    assigned = np.flatnonzero(col != UNCOLORED)
    member = palette_membership(instance, assigned, col[assigned])
    bad_nodes = assigned[~member].tolist()
    missing = np.flatnonzero(col == UNCOLORED).tolist()
    return ValidityReport(
        proper=not bad_edges,
        feasible=not bad_nodes,
        complete=not missing,
        conflict_edges=bad_edges,
        infeasible_nodes=bad_nodes,
        uncolored_nodes=missing,
    )


@dataclass(frozen=True)
class SlackView:
    node: int
    available: int
    uncolored_degree: int

    @property
    def slack(self) -> int:
        return self.available - self.uncolored_degree


def slack_view(instance: ListColoringInstance, coloring: PartialColoring, v: int) -> SlackView:
    if not 0 <= v < instance.n:
        raise UnknownNode(v)
    nbrs = instance.graph.neighbors(v)
    nc = coloring.colors[nbrs]
    used = set(nc[nc != UNCOLORED].tolist())
    available = sum(1 for c in instance.palettes[v].tolist() if c not in used)
    return SlackView(node=v, available=available, uncolored_degree=int(np.sum(nc == UNCOLORED)))


# --------------------------------------------------------------------- I/O


def _parse_ints(line: str, lineno: int) -> list[int]:
    try:
        return [int(tok) for tok in line.split()]
    except ValueError:
        raise ParseError(f"line {lineno}: expected integers, got {line!r}") from None


def parse_edges(text: str) -> Graph:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ParseError("empty edge list")
    head = _parse_ints(lines[0], 1)
    if len(head) != 2 or head[0] < 0 or head[1] < 0:
        raise ParseError("first line must be 'n m'")
    n, m = head
    if len(lines) - 1 != m:
        raise ParseError(f"header announces {m} edges, found {len(lines) - 1}")
    seen: set[tuple[int, int]] = set()
    edges = []
    for i, ln in enumerate(lines[1:], start=2):
        uv = _parse_ints(ln, i)
        if len(uv) != 2:
            raise ParseError(f"line {i}: expected 'u v'")
        u, v = uv
        if not (0 <= u < n and 0 <= v < n):
            raise ParseError(f"line {i}: node out of range")
        if u == v:
            raise ParseError(f"line {i}: self-loop")
        key = (min(u, v), max(u, v))
        if key in seen:
            raise DuplicateEdge(f"line {i}: edge {key} repeated")
        seen.add(key)
        edges.append(key)
    return Graph.from_edges(n, edges)


def format_edges(graph: Graph) -> str:
    e = graph.edges()
    rows = [f"{graph.n} {len(e)}"] + [f"{u} {v}" for u, v in e.tolist()]
    return "\n".join(rows) + "\n"


def parse_palettes(text: str, n: int) -> list[np.ndarray]:
    pals: list[np.ndarray | None] = [None] * n
    for i, ln in enumerate(text.splitlines(), start=1):
        if not ln.strip():
            continue
        if ":" not in ln:
            raise ParseError(f"palette line {i}: expected 'v: c1 c2 ...'")
        head, tail = ln.split(":", 1)
        (v,) = _parse_ints(head, i) or [None]
        if v is None or not 0 <= v < n:
            raise ParseError(f"palette line {i}: node out of range")
        if pals[v] is not None:
            raise ParseError(f"palette line {i}: node {v} listed twice")
        pals[v] = np.array(_parse_ints(tail, i), dtype=np.int64)
    missing = [v for v, p in enumerate(pals) if p is None]
    if missing:
        raise ParseError(f"no palette for node {missing[0]}")
    return pals  # type: ignore[return-value]


def format_palettes(instance: ListColoringInstance) -> str:
    return "".join(f"{v}: {' '.join(map(str, p.tolist()))}\n" for v, p in enumerate(instance.palettes))


def load_instance(edge_list_text: str, palette_spec: str, mode: str = "standard") -> ListColoringInstance:
    """Parse an edge list plus ``uniform:K``, a palette file path, or palette text."""
    graph = parse_edges(edge_list_text)
    if palette_spec.startswith("uniform:"):
        try:
            k = int(palette_spec.split(":", 1)[1])
        except ValueError:
            raise ParseError(f"bad palette spec {palette_spec!r}") from None
        if k < 0:
            raise ParseError("palette size must be non-negative")
        pals = [np.arange(k, dtype=np.int64) for _ in range(graph.n)]
    elif os.path.isfile(palette_spec):
        with open(palette_spec) as fh:
            pals = parse_palettes(fh.read(), graph.n)
    else:
        pals = parse_palettes(palette_spec, graph.n)
    return ListColoringInstance(graph, pals, mode=mode)


def save_instance(instance: ListColoringInstance) -> tuple[str, str]:
    return format_edges(instance.graph), format_palettes(instance)


def format_coloring(coloring: PartialColoring) -> str:
    return "".join(f"{v} {c}\n" for v, c in enumerate(coloring.colors.tolist()) if c != UNCOLORED)


def parse_coloring(text: str, n: int) -> PartialColoring:
    col = PartialColoring(n)
    for i, ln in enumerate(text.splitlines(), start=1):
        if not ln.strip():
            continue
        vals = _parse_ints(ln, i)
        if len(vals) != 2 or not 0 <= vals[0] < n:
            raise ParseError(f"coloring line {i}: expected 'v c' with v < {n}")
        col.colors[vals[0]] = vals[1]
    return col


# -------------------------------------------------------------- generators


def _rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.PCG64(seed))


def _need(params: dict, *keys: str) -> list:
    try:
        return [params[k] for k in keys]
    except KeyError as exc:
        raise BadParams(f"missing parameter {exc.args[0]!r}") from None


def _uniform_instance(graph: Graph, mode: str, extra: int = 0) -> ListColoringInstance:
    k = graph.max_degree + 1 + extra
    return ListColoringInstance(graph, [np.arange(k, dtype=np.int64)] * graph.n, mode=mode)


def _random_pairs(n: int, m: int, rng: np.random.Generator) -> np.ndarray:
    """m distinct unordered pairs of distinct nodes, in draw order."""
    if n < 2 or m <= 0:
        return np.zeros((0, 2), dtype=np.int64)
    m = min(m, n * (n - 1) // 2)
    got = np.zeros((0, 2), dtype=np.int64)
    while len(got) < m:
        draw = rng.integers(0, n, size=(int((m - len(got)) * 1.2) + 16, 2))
        draw = draw[draw[:, 0] != draw[:, 1]]
        draw = np.sort(draw, axis=1)
        allp = np.concatenate([got, draw])
        _, first = np.unique(allp[:, 0] * n + allp[:, 1], return_index=True)
        got = allp[np.sort(first)]
    return got[:m]


def _gnp(params: dict, rng: np.random.Generator) -> Graph:
    (n,) = _need(params, "n")
    if n < 0:
        raise BadParams("n must be non-negative")
    if "p" in params:
        p = float(params["p"])
    elif "avg_degree" in params:
        p = float(params["avg_degree"]) / max(n - 1, 1)
    else:
        raise BadParams("gnp needs p or avg_degree")
    if not 0 <= p <= 1:
        raise BadParams("p must be in [0, 1]")
    pairs = n * (n - 1) // 2
    m = int(rng.binomial(pairs, p)) if pairs else 0
    g = Graph.from_edges(n, _random_pairs(n, m, rng))
    cap = params.get("max_degree")
    if cap is not None:
        g = _cap_degree(g, int(cap))
    return g


def _cap_degree(g: Graph, cap: int) -> Graph:
    """Drop edges (in edge order) touching nodes above ``cap``."""
    deg = np.zeros(g.n, dtype=np.int64)
    keep = []
    for u, v in g.edges().tolist():
        if deg[u] < cap and deg[v] < cap:
            deg[u] += 1
            deg[v] += 1
            keep.append((u, v))
    return Graph.from_edges(g.n, keep)


def _clique_planted(params: dict, rng: np.random.Generator) -> Graph:
    k, delta = _need(params, "k", "delta")
    noise = int(params.get("noise", 0))
    if k < 0 or delta < 0 or noise < 0:
        raise BadParams("k, delta, noise must be non-negative")
    size = delta + 1
    edges = []
    for c in range(k):
        base = c * size
        iu, iv = np.triu_indices(size, 1)
        edges.append(np.stack([iu + base, iv + base], axis=1))
    n = k * size
    if noise and k > 1:
        pairs = _random_pairs(n, noise * 4, rng)
        pairs = pairs[pairs[:, 0] // size != pairs[:, 1] // size][:noise]
        edges.append(pairs)
    return Graph.from_edges(n, np.concatenate(edges) if edges else np.zeros((0, 2)))


def _grid(params: dict, rng: np.random.Generator) -> Graph:
    rows, cols = _need(params, "rows", "cols")
    if rows < 0 or cols < 0:
        raise BadParams("rows, cols must be non-negative")
    diag = bool(params.get("diagonals", False))
    idx = np.arange(rows * cols).reshape(rows, cols) if rows * cols else np.zeros((rows, cols), dtype=np.int64)
    parts = [
        np.stack([idx[:, :-1].ravel(), idx[:, 1:].ravel()], axis=1),
        np.stack([idx[:-1, :].ravel(), idx[1:, :].ravel()], axis=1),
    ]
    if diag:
        parts.append(np.stack([idx[:-1, :-1].ravel(), idx[1:, 1:].ravel()], axis=1))
        parts.append(np.stack([idx[:-1, 1:].ravel(), idx[1:, :-1].ravel()], axis=1))
    return Graph.from_edges(rows * cols, np.concatenate(parts))


@dataclass
class Testbed:
    """Ground truth recorded by the cluster testbed generator."""

    cliques: list[np.ndarray]
    sparse_nodes: np.ndarray


def _cluster_testbed(params: dict, rng: np.random.Generator) -> tuple[Graph, Testbed]:
    eps, delta, n_cliques = _need(params, "eps", "delta", "cliques")
    if not 0 < eps < 0.2 or delta < 4 or n_cliques < 0:
        raise BadParams("need 0 < eps < 0.2, delta >= 4, cliques >= 0")
    ext = int(params.get("external", max(0, math.floor(eps * delta / 2))))
    anti = params.get("anti", 0)
    antis = list(anti) if isinstance(anti, (list, tuple)) else [int(anti)] * n_cliques
    if len(antis) != n_cliques:
        raise BadParams("one anti value per clique")
    n_sparse = int(params.get("sparse", 0))
    sparse_deg = float(params.get("sparse_degree", min(delta / 2, 8)))
    size = delta + 1 - ext
    if size < 2:
        raise BadParams("external degree leaves no room for a clique")
    edges: list[tuple[int, int]] = []
    cliques = []
    for c in range(n_cliques):
        members = np.arange(c * size, (c + 1) * size)
        cliques.append(members)
        missing: set[tuple[int, int]] = set()
        for _ in range(int(antis[c])):
            perm = rng.permutation(members)
            for i in range(0, len(perm) - 1, 2):
                a, b = int(perm[i]), int(perm[i + 1])
                missing.add((min(a, b), max(a, b)))
        iu, iv = np.triu_indices(size, 1)
        for a, b in zip((iu + c * size).tolist(), (iv + c * size).tolist()):
            if (a, b) not in missing:
                edges.append((a, b))
    n_dense = n_cliques * size
    n = n_dense + n_sparse
    deg = np.zeros(n, dtype=np.int64)
    for a, b in edges:
        deg[a] += 1
        deg[b] += 1
    present = set(edges)
    # external edges: each clique node gets up to ``ext`` edges to other cliques or sparse nodes
    ext_deg = np.zeros(n, dtype=np.int64)
    if n > size:
        for v in rng.permutation(n_dense).tolist():
            tries = 0
            while ext_deg[v] < ext and deg[v] < delta and tries < 8 * (ext + 1):
                tries += 1
                u = int(rng.integers(0, n))
                if u == v or (u < n_dense and u // size == v // size) or deg[u] >= delta:
                    continue
                if u < n_dense and ext_deg[u] >= ext:
                    continue
                key = (min(u, v), max(u, v))
                if key in present:
                    continue
                present.add(key)
                edges.append(key)
                for x in (u, v):
                    deg[x] += 1
                    ext_deg[x] += 1
    if n_sparse > 1:
        for a, b in _random_pairs(n_sparse, int(n_sparse * sparse_deg / 2), rng).tolist():
            a, b = a + n_dense, b + n_dense
            if deg[a] < delta and deg[b] < delta and (a, b) not in present:
                present.add((a, b))
                edges.append((a, b))
                deg[a] += 1
                deg[b] += 1
    g = Graph.from_edges(n, edges)
    return g, Testbed(cliques=cliques, sparse_nodes=np.arange(n_dense, n))


GENERATORS = ("gnp", "clique_planted", "grid", "cluster_testbed")


def generate(kind: str, params: dict, rng_seed: int = 0, mode: str = "standard") -> ListColoringInstance:
    """Deterministic instance generator; palettes are uniform {0..Delta}.

    ``params['palette_extra']`` widens the uniform palettes (relaxed/list modes).
    """
    rng = _rng(rng_seed)
    if kind == "gnp":
        g = _gnp(params, rng)
    elif kind == "clique_planted":
        g = _clique_planted(params, rng)
    elif kind == "grid":
        g = _grid(params, rng)
    elif kind == "cluster_testbed":
        g, truth = _cluster_testbed(params, rng)
        inst = _finish(g, params, mode, rng)
        inst.testbed = truth  # type: ignore[attr-defined]
        return inst
    else:
        raise BadParams(f"unknown generator kind {kind!r}")
    return _finish(g, params, mode, rng)


def _finish(g: Graph, params: dict, mode: str, rng: np.random.Generator) -> ListColoringInstance:
    if mode == "standard":
        return _uniform_instance(g, mode)
    # relaxed: random palettes of the minimum allowed size from a wider universe
    delta = g.max_degree
    floor = palette_floor(g.degrees, delta, "relaxed")
    universe = delta + 1 + int(params.get("palette_extra", max(2, delta // 4)))
    pals = [np.sort(rng.choice(universe, size=min(universe, int(f)), replace=False)) for f in floor]
    return ListColoringInstance(g, pals, mode=mode)
