"""Simulated low-space MPC: word-budgeted machines, barrier rounds, sorting,
ball collection, cluster placement, and a cost meter for staged pipelines."""

from __future__ import annotations

import dataclasses
import json
import math
from collections import Counter
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Protocol, Sequence

import numpy as np


class SpaceExceeded(RuntimeError):
    def __init__(self, machine: int, round_no: int, used: int = 0, limit: int = 0):
        super().__init__(f"machine {machine} uses {used} > {limit} words in round {round_no}")
        self.machine = machine
        self.round = round_no
        self.used = used
        self.limit = limit


class RoundCapExceeded(RuntimeError):
    pass


class BallTooLarge(RuntimeError):
    def __init__(self, node: int, detail: str = ""):
        super().__init__(f"ball of node {node} does not fit one machine {detail}".strip())
        self.node = node


@dataclass
class MpcConfig:
    n: int
    delta_exp: float = 0.5
    space_override: int | None = None
    machine_count: int | None = None
    word_const: int = 2

    def __post_init__(self) -> None:
        if not 0 < self.delta_exp < 1:
            raise ValueError("delta_exp must lie in (0, 1)")

    @property
    def space_words(self) -> int:
        if self.space_override is not None:
            return int(self.space_override)
        return max(4, math.ceil(max(self.n, 1) ** self.delta_exp))

    @property
    def word_bits(self) -> int:
        return max(1, math.ceil(self.word_const * math.log2(max(self.n, 2))))

    def machines_for(self, total_words: int) -> int:
        if self.machine_count is not None:
            return self.machine_count
        return max(1, math.ceil(total_words / self.space_words))


def words(obj: Any, word_bits: int = 64) -> int:
    """Words needed to store ``obj``; every scalar costs one word."""
    if obj is None:
        return 0
    if isinstance(obj, (bool, int, float, np.integer, np.floating)):
        return 1
    if isinstance(obj, (str, bytes)):
        return math.ceil(len(obj) * 8 / word_bits)
    if isinstance(obj, np.ndarray):
        return int(obj.size)
    if isinstance(obj, dict):
        return sum(words(k, word_bits) + words(v, word_bits) for k, v in obj.items())
    if dataclasses.is_dataclass(obj):
        return sum(words(getattr(obj, f.name), word_bits) for f in dataclasses.fields(obj))
    if isinstance(obj, (list, tuple, set, frozenset)):
        return sum(words(x, word_bits) for x in obj)
    raise TypeError(f"cannot size {type(obj).__name__}")


# ------------------------------------------------------------------ rounds


class MpcProgram(Protocol):
    def step(self, machine: int, state: Any, inbox: list[tuple[int, Any]], round_no: int) -> tuple[Any, dict[int, list], bool]:
        """Return (new state, {destination: [payload, ...]}, halt)."""


@dataclass
class RoundRecord:
    index: int
    stored: list[int]
    received: list[int]
    sent: list[int]


@dataclass
class RoundLog:
    space_words: int
    rounds: list[RoundRecord] = field(default_factory=list)

    @property
    def peak_words(self) -> int:
        return max((max(s + r for s, r in zip(rec.stored, rec.received)) for rec in self.rounds if rec.stored), default=0)

    def per_machine_peaks(self) -> list[int]:
        if not self.rounds:
            return []
        m = len(self.rounds[0].stored)
        return [max(rec.stored[i] + rec.received[i] for rec in self.rounds) for i in range(m)]

    def to_json(self) -> str:
        return json.dumps(
            {
                "rounds": [dataclasses.asdict(r) for r in self.rounds],
                "peak_words": self.peak_words,
                "per_machine": [{"machine": i, "peak_words": p} for i, p in enumerate(self.per_machine_peaks())],
            },
            sort_keys=True,
        )


def run_rounds(
    program: MpcProgram,
    placement: Sequence[Any],
    round_cap: int,
    config: MpcConfig,
) -> tuple[list[Any], RoundLog]:
    """Execute barrier rounds until every machine halts with nothing in flight."""
    S = config.space_words
    wb = config.word_bits
    states = list(placement)
    M = len(states)
    for i, st in enumerate(states):
        if words(st, wb) > S:
            raise SpaceExceeded(i, 0, words(st, wb), S)
    log = RoundLog(space_words=S)
    inboxes: list[list[tuple[int, Any]]] = [[] for _ in range(M)]
    for r in range(1, round_cap + 1):
        stored = [words(st, wb) for st in states]
        received = [sum(words(p, wb) for _, p in box) for box in inboxes]
        for i in range(M):
            if stored[i] + received[i] > S:
                raise SpaceExceeded(i, r, stored[i] + received[i], S)
        sent = [0] * M
        next_boxes: list[list[tuple[int, Any]]] = [[] for _ in range(M)]
        all_halt = True
        new_states = []
        for i in range(M):
            st, outbox, halt = program.step(i, states[i], inboxes[i], r)
            all_halt &= bool(halt)
            for dest in sorted(outbox):
                if not 0 <= dest < M:
                    raise ValueError(f"machine {i} addressed unknown machine {dest}")
                for payload in outbox[dest]:
                    sent[i] += words(payload, wb)
                    next_boxes[dest].append((i, payload))
            if sent[i] > S:
                raise SpaceExceeded(i, r, sent[i], S)
            new_states.append(st)
        log.rounds.append(RoundRecord(index=r, stored=stored, received=received, sent=sent))
        states = new_states
        inboxes = next_boxes
        if all_halt and not any(next_boxes):
            return states, log
    raise RoundCapExceeded(f"program still running after {round_cap} rounds")


# ------------------------------------------------------------------- sorting


def tree_depth(items: int, width: int, S: int) -> int:
    """Levels of an aggregation tree over ``items`` values of ``width`` words."""
    per_leaf = max(1, (S // 2) // max(width, 1))
    leaves = math.ceil(max(items, 1) / per_leaf)
    fan = max(2, S // (2 * max(width, 1)))
    depth = 0
    while leaves > 1:
        leaves = math.ceil(leaves / fan)
        depth += 1
    return depth


def sort_rounds(n_records: int, width: int, S: int) -> int:
    """Rounds charged for a rank computation plus delivery: up and down a
    counting tree, then one routing round."""
    return 2 * tree_depth(n_records, width, S) + 1


@dataclass
class GroupedRecords:
    machines: list[list[tuple]]
    rounds: int
    log: RoundLog

    def flat(self) -> list[tuple]:
        return [rec for shard in self.machines for rec in shard]

    def groups(self) -> list[tuple[Any, list[tuple]]]:
        out: list[tuple[Any, list[tuple]]] = []
        for rec in self.flat():
            if out and out[-1][0] == rec[0]:
                out[-1][1].append(rec)
            else:
                out.append((rec[0], [rec]))
        return out


class _Deliver:
    def __init__(self, dest: dict[int, list[tuple[int, tuple]]]):
        self.dest = dest

    def step(self, machine, state, inbox, round_no):
        if round_no == 1:
            out: dict[int, list] = {}
            for d, (rank, rec) in self.dest.get(machine, []):
                out.setdefault(d, []).append((rank, rec))
            return [], out, False
        got = sorted(inbox, key=lambda x: x[1][0])
        return [p[1] for _, p in got], {}, True


def sort_and_group(records: Sequence[tuple], config: MpcConfig, width: int | None = None) -> GroupedRecords:
    """Sort ``(key, ...)`` records so equal keys are contiguous across machines.

    Ranks come from a counting tree whose rounds are charged; the records
    themselves move through ``run_rounds`` so every machine's load is checked.
    """
    S = config.space_words
    if not records:
        return GroupedRecords(machines=[], rounds=0, log=RoundLog(space_words=S))
    width = width or max(len(r) for r in records)
    cap = max(1, (S // 2) // (width + 1))
    M = math.ceil(len(records) / cap)
    placement = [list(records[i * cap : (i + 1) * cap]) for i in range(M)]
    order = sorted(range(len(records)), key=lambda i: (records[i][0], i))
    rank = {idx: r for r, idx in enumerate(order)}
    dest: dict[int, list[tuple[int, tuple[int, tuple]]]] = {}
    for m, shard in enumerate(placement):
        for j, rec in enumerate(shard):
            r = rank[m * cap + j]
            dest.setdefault(m, []).append((r // cap, (r, rec)))
    states, log = run_rounds(_Deliver(dest), placement, round_cap=4, config=config)
    rounds = 2 * tree_depth(len(records), width, S) + len(log.rounds)
    return GroupedRecords(machines=states, rounds=rounds, log=log)


# ------------------------------------------------------------- ball growth


class _BallProgram:
    """Machine v keeps dist (node -> hop distance) and the edges incident to
    every node within ``radius``; each round grows the radius by ``step``."""

    def __init__(self, steps: list[int]):
        self.steps = steps

    def step(self, machine, state, inbox, round_no):
        dist, edges, radius = state
        dist = dict(dist)
        if inbox:
            edges = set(edges)
            for _, (du, eu, src) in inbox:
                base = dist[src]
                for x, dx in du.items():
                    if base + dx < dist.get(x, 1 << 30):
                        dist[x] = base + dx
                edges |= set(eu)
            radius += self.steps[round_no - 2]
            edges = tuple(sorted(edges))
        # distances up to ``radius`` are exact; one relaxation gives radius + 1
        for a, b in edges:
            for x, y in ((a, b), (b, a)):
                if dist.get(x, 1 << 30) <= radius and dist[x] + 1 < dist.get(y, 1 << 30):
                    dist[y] = dist[x] + 1
        state = (dist, edges, radius)
        if round_no > len(self.steps):
            return state, {}, True
        s = self.steps[round_no - 1]
        share = ({x: d for x, d in dist.items() if d <= radius + 1}, edges, machine)
        out = {w: [share] for w, d in dist.items() if d <= s}
        return state, out, False


@dataclass
class Ball:
    center: int
    nodes: np.ndarray
    edges: np.ndarray
    dist: dict[int, int]


def ball_steps(r: int) -> list[int]:
    steps: list[int] = []
    radius = 0
    while radius < r:
        s = min(max(radius, 1), r - radius)
        steps.append(s)
        radius += s
    return steps


def collect_balls(graph, r: int, config: MpcConfig) -> tuple[list[Ball], RoundLog]:
    """Induced radius-r ball of every node, one machine per node, by doubling."""
    if r < 0:
        raise ValueError("radius must be non-negative")
    placement = []
    for v in range(graph.n):
        inc = tuple(sorted((min(v, int(u)), max(v, int(u))) for u in graph.neighbors(v)))
        placement.append(({v: 0}, inc, 0))
    steps = ball_steps(r)
    try:
        states, log = run_rounds(_BallProgram(steps), placement, round_cap=len(steps) + 2, config=config)
    except SpaceExceeded as exc:
        raise BallTooLarge(exc.machine, f"(round {exc.round}, {exc.used} > {exc.limit} words)") from exc
    balls = []
    for v, (dist, edges, _) in enumerate(states):
        inside = {x: d for x, d in dist.items() if d <= r}
        nodes = np.array(sorted(inside), dtype=np.int64)
        keep = [(a, b) for a, b in edges if a in inside and b in inside]
        balls.append(Ball(center=v, nodes=nodes, edges=np.array(sorted(keep), dtype=np.int64).reshape(-1, 2), dist=inside))
    return balls, log


# --------------------------------------------------------- cluster machines


def cluster_graph(graph, clusters: Sequence[np.ndarray]):
    """Contracted graph on clusters (adjacent iff some edge joins them)."""
    from .instance import Graph

    owner = np.full(graph.n, -1, dtype=np.int64)
    for j, members in enumerate(clusters):
        owner[np.asarray(members, dtype=np.int64)] = j
    e = graph.edges()
    cu, cv = owner[e[:, 0]], owner[e[:, 1]]
    keep = (cu >= 0) & (cv >= 0) & (cu != cv)
    return Graph.from_edges(len(clusters), np.stack([cu[keep], cv[keep]], axis=1))


def allocate_cluster_machines(graph, clusters: Sequence[np.ndarray], h: int, config: MpcConfig) -> tuple[dict[int, list[int]], int]:
    """Machine per cluster holding the cluster and its h-hop neighbor clusters.

    Returns (cluster -> held cluster ids, rounds used).
    """
    cg = cluster_graph(graph, clusters)
    big = MpcConfig(cg.n, config.delta_exp, space_override=1 << 40)
    balls, log = collect_balls(cg, h, big)
    S = config.space_words
    holdings = {}
    for j, ball in enumerate(balls):
        held = ball.nodes.tolist()
        payload = sum(len(clusters[c]) for c in held)
        if payload > S:
            raise SpaceExceeded(j, len(log.rounds), payload, S)
        holdings[j] = held
    return holdings, len(log.rounds)


# -------------------------------------------------------------------- meter


@dataclass
class StageCost:
    stage: str
    rounds: int = 0
    peak_words: int = 0
    ops: Counter = field(default_factory=Counter)


class Meter:
    """Round and load accounting for stage computations evaluated centrally.

    Every primitive shards its data so no machine holds more than S words and
    charges rounds by the formulas below; the formulas are calibrated against
    executed ``run_rounds`` programs in the tests.
    """

    def __init__(self, config: MpcConfig):
        self.config = config
        self.S = config.space_words
        self.stages: dict[str, StageCost] = {}
        self.order: list[str] = []
        self.global_words = 0

    def _stage(self, stage: str) -> StageCost:
        if stage not in self.stages:
            self.stages[stage] = StageCost(stage)
            self.order.append(stage)
        return self.stages[stage]

    def charge(self, stage: str, op: str, rounds: int, load: int) -> None:
        if load > self.S:
            raise SpaceExceeded(-1, self.total_rounds + rounds, load, self.S)
        st = self._stage(stage)
        st.rounds += rounds
        st.peak_words = max(st.peak_words, load)
        st.ops[op] += 1

    def note_global(self, total_words: int) -> None:
        self.global_words = max(self.global_words, int(total_words))

    @property
    def total_rounds(self) -> int:
        return sum(s.rounds for s in self.stages.values())

    @property
    def peak_words(self) -> int:
        return max((s.peak_words for s in self.stages.values()), default=0)

    # primitives -------------------------------------------------------
    def exchange(self, stage: str, n_arcs: int, width: int = 1) -> None:
        """Every arc carries ``width`` words between its endpoints' shards."""
        half = self.S // 2
        rounds = max(1, math.ceil((width + 2) / half))
        per = min(width + 2, half)
        load = min(self.S, 2 * per * max(1, min(n_arcs, half // max(per, 1))))
        self.charge(stage, "exchange", rounds, max(per, min(load, self.S)))

    def aggregate(self, stage: str, items: int, width: int = 1, broadcast: bool = True) -> None:
        width = max(1, min(width, self.S // 4))
        depth = tree_depth(items, width, self.S)
        fan = max(2, self.S // (2 * width))
        load = min(self.S, width * (fan + 1))
        self.charge(stage, "aggregate", depth * (2 if broadcast else 1), load)

    def vote(self, stage: str, n_units: int, seed_bits: int, locality: int = 2) -> None:
        """Seed vote: ``locality`` exchanges of per-seed outcomes, a per-seed
        tally tree, an argmax over seeds and a broadcast of the winner."""
        n_seeds = 1 << seed_bits
        half = self.S // 2
        for _ in range(locality):
            self.exchange(stage, n_units, width=min(n_seeds, 4 * half))
        group = max(1, self.S // 4)
        width = min(n_seeds, group)
        packed = max(1, math.ceil(n_seeds / self.config.word_bits))
        leaves = math.ceil(max(n_units, 1) * packed / half)
        self.charge(stage, "vote-tally", tree_depth(leaves, width, self.S) + 1, min(self.S, width * (max(2, self.S // (2 * width)) + 1)))
        self.charge(stage, "vote-argmax", tree_depth(n_seeds, 2, self.S) + 1, min(self.S, 2 * n_seeds if n_seeds <= half else self.S))
        self.charge(stage, "vote-broadcast", tree_depth(n_units, 1, self.S), min(self.S, half))

    def cond_expect(self, stage: str, n_terms: int, seed_bits: int, chunk_bits: int) -> None:
        phases = math.ceil(seed_bits / chunk_bits)
        width = min(1 << chunk_bits, self.S // 4)
        for _ in range(phases):
            self.charge(stage, "cond-expect", tree_depth(n_terms, width, self.S) * 2 + 1, min(self.S, 2 * width * max(2, self.S // (2 * width))))

    def sort(self, stage: str, n_records: int, width: int = 2) -> None:
        self.charge(stage, "sort", sort_rounds(n_records, width, self.S), self.S // 2)

    @contextmanager
    def parallel(self) -> Any:
        """Sub-meters whose rounds combine by maximum (concurrent execution)."""
        branches: list[Meter] = []

        def fork() -> Meter:
            m = Meter(self.config)
            branches.append(m)
            return m

        yield fork
        per_stage: dict[str, StageCost] = {}
        for b in branches:
            for name in b.order:
                st = b.stages[name]
                cur = per_stage.setdefault(name, StageCost(name))
                cur.rounds = max(cur.rounds, st.rounds)
                cur.peak_words = max(cur.peak_words, st.peak_words)
                cur.ops.update(st.ops)
            self.global_words = max(self.global_words, b.global_words)
        for name, st in per_stage.items():
            mine = self._stage(name)
            mine.rounds += st.rounds
            mine.peak_words = max(mine.peak_words, st.peak_words)
            mine.ops.update(st.ops)

    def to_dict(self) -> dict:
        return {
            "space_words": self.S,
            "total_rounds": self.total_rounds,
            "peak_words": self.peak_words,
            "global_words": self.global_words,
            "stages": [
                {"stage": s, "rounds": self.stages[s].rounds, "peak_words": self.stages[s].peak_words, "ops": dict(sorted(self.stages[s].ops.items()))}
                for s in self.order
            ],
        }
