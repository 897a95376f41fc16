"""Deterministic coloring stages: each randomized step is replaced by a vote
over the seeds of a short coin source, keeping the seed that makes the most
units happy."""

from __future__ import annotations

import math
import zlib
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp

from .config import PipelineConfig
from .density import (
    LARGE, MEDIUM, SMALL, DensityCache, DensityHierarchy, EpsSequence, dense_nodes,
    linial_ids, out_arc_mask, star_arc_mask,
)
from .derand import CoinView, KWiseFamily, StretchedCoinSource, SubFamily, cond_expect_select, seed_vote
from .instance import UNCOLORED, ListColoringInstance, PartialColoring, validate_coloring
from .mpc import Meter
from .partition import to_range
from .procedures import (
    BallContext, available, color_bidding, dense_step_v1, dense_step_v2,
    one_shot_coloring, pi_order, slack_after, uncolored_degree,
)

TOL = 1e-9


class StageFailed(RuntimeError):
    def __init__(self, stage: str, detail: str, nodes=None):
        super().__init__(f"{stage}: {detail}")
        self.stage = stage
        self.detail = detail
        self.nodes = [] if nodes is None else [int(x) for x in np.asarray(nodes).ravel()[:64]]


class ContentionHypothesisViolated(StageFailed):
    def __init__(self, node: int, total: float, bound: float):
        super().__init__("dense_u", f"node {node}: contention {total:.4g} exceeds {bound:.4g}", [node])
        self.node = node
        self.total = total
        self.bound = bound


# ------------------------------------------------------------------ tracing


@dataclass
class VoteRecord:
    stage: str
    units: int
    seed_bits: int
    best_seed: int
    best_count: int
    total: int
    n_seeds: int
    required: int

    @property
    def dominates_mean(self) -> bool:
        return self.best_count * self.n_seeds >= self.total


@dataclass
class StageTrace:
    stage: str
    votes: list[VoteRecord] = field(default_factory=list)
    happy: list[float] = field(default_factory=list)
    margins: dict = field(default_factory=dict)
    rollbacks: int = 0
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "stage": self.stage,
            "votes": [asdict(v) for v in self.votes],
            "seed_bits": [v.seed_bits for v in self.votes],
            "happy": self.happy,
            "margins": _jsonable(self.margins),
            "rollbacks": self.rollbacks,
            "notes": self.notes,
        }


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else str(x)
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    return x


class Voter:
    """Seed votes with escalation of the seed length.

    A vote needs ceil((1 - n^-alpha) * units) happy units; short of that the
    seed length grows by ``vote_escalation`` bits up to floor(delta log2 n).
    """

    def __init__(self, cfg: PipelineConfig, n_model: int, meter: Meter | None = None):
        self.cfg = cfg
        self.n_model = n_model
        self.meter = meter
        self.records: list[VoteRecord] = []
        self._count = 0

    def required(self, m: int) -> int:
        return math.ceil(self.cfg.required_fraction(self.n_model) * m - TOL)

    def vote(self, trace: StageTrace, units, context, predicate, locality: int = 2, strict: bool = False):
        """Returns (SeedVote, CoinView of the winning seed, reached target)."""
        units = np.asarray(units)
        d = self.cfg.vote_seed_bits
        d_max = self.cfg.seed_bits_cap(self.n_model)
        need = self.required(len(units))
        while True:
            self._count += 1
            salt = zlib.crc32(f"{trace.stage}/{self._count}".encode())
            src = StretchedCoinSource(d, salt)
            res = seed_vote(units, context, predicate, src)
            rec = VoteRecord(
                trace.stage, len(units), d, res.best_seed, res.best_count,
                int(res.happy_counts.sum()), len(res.happy_counts), need,
            )
            self.records.append(rec)
            trace.votes.append(rec)
            if self.meter is not None:
                self.meter.vote(trace.stage, max(1, len(units)), d, locality)
            if res.best_count >= need or d >= d_max:
                break
            d = min(d + self.cfg.vote_escalation, d_max)
        ok = res.best_count >= need
        if not ok:
            trace.notes.append(f"vote short of target: {res.best_count}/{need} happy at {d} seed bits")
            if strict:
                raise StageFailed(trace.stage, f"seed vote reached {res.best_count} of {need} required happy units", units[~res.happy])
        return res, src.view(np.array([res.best_seed])), ok


@dataclass
class StageEnv:
    instance: ListColoringInstance
    cfg: PipelineConfig
    voter: Voter
    meter: Meter | None = None
    traces: list[StageTrace] = field(default_factory=list)

    def trace(self, stage: str) -> StageTrace:
        t = StageTrace(stage)
        self.traces.append(t)
        return t

    def charge_exchange(self, stage: str, arcs: int, width: int = 1) -> None:
        if self.meter is not None:
            self.meter.exchange(stage, max(1, arcs), width)


def make_env(instance: ListColoringInstance, cfg: PipelineConfig | None = None, n_model: int | None = None, meter: Meter | None = None) -> StageEnv:
    cfg = cfg or PipelineConfig()
    return StageEnv(instance, cfg, Voter(cfg, n_model or instance.n, meter), meter)


def check_partial(instance: ListColoringInstance, colors: np.ndarray, stage: str) -> None:
    rep = validate_coloring(instance, PartialColoring(np.asarray(colors)))
    if not (rep.proper and rep.feasible):
        raise AssertionError(f"stage boundary after {stage}: improper or infeasible partial coloring")


def _arc_matrix(graph, keep: np.ndarray) -> sp.csr_matrix:
    src = graph.arc_sources()[keep]
    dst = graph.indices[keep]
    return sp.csr_matrix((np.ones(len(src), dtype=np.int64), (src, dst)), shape=(graph.n, graph.n))


def _count(A: sp.csr_matrix, rows: np.ndarray) -> np.ndarray:
    """(S, n) neighbor counts of the True entries of ``rows``."""
    rows = np.atleast_2d(rows)
    return np.asarray(A @ rows.T.astype(np.int64)).T


# -------------------------------------------------------- slack generation


def node_sparsity(graph, eps: EpsSequence, cache: DensityCache | None = None) -> np.ndarray:
    """Largest epsilon of the sequence (cap included) at which v is sparse; 0 if none."""
    cache = cache or DensityCache(graph)
    levels = sorted(set(eps.values) | {eps.cap})
    out = np.zeros(graph.n)
    for e in levels:
        out[~dense_nodes(graph, e, 0, cache)] = e
    return out


@dataclass
class SlackReport:
    groups: int
    z: int
    bad_pairs: int
    expectation: float
    groups_run: int
    min_slack_margin: float | None
    min_p1_margin: float | None
    psi_violations: int
    psi_min_margin: float | None
    group_of: np.ndarray = field(repr=False, default=None)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("group_of")
        return _jsonable(d)


def slack_targets(instance: ListColoringInstance, cfg: PipelineConfig, eps: EpsSequence, cache: DensityCache | None = None) -> np.ndarray:
    sparsity = node_sparsity(instance.graph, eps, cache)
    raw = cfg.c_slack * sparsity**2 * instance.delta
    return np.where(sparsity > 0, np.ceil(raw - TOL), 0).astype(np.int64)


def select_groups(instance: ListColoringInstance, cfg: PipelineConfig, meter: Meter | None = None, stage: str = "slack"):
    """Group hash with few (node, group) degree deviations; returns (groups, result, z)."""
    g = instance.graph
    n, delta = g.n, max(instance.delta, 2)
    G4 = 4 * cfg.C
    z = max(1, math.ceil(cfg.z_mult * math.log(max(n, 2)) / math.log(delta)))
    w = max(8, math.ceil(math.log2(max(n, 2))))
    fam = KWiseFamily(4 * z, w, w)
    sub = SubFamily(fam, cfg.slack_enum_bits, cfg.part_salt ^ (n * 31 + delta))
    deg = g.degrees.astype(float)
    thr = np.sqrt(deg) * delta**0.01
    src, dst = g.arc_sources(), g.indices
    ids = np.arange(n, dtype=np.uint64)
    active = deg > 0

    def term(coeffs: np.ndarray) -> np.ndarray:
        grp = to_range(fam.evaluate(coeffs, ids), G4, w).astype(np.int64)
        out = np.zeros(len(coeffs))
        for s in range(len(coeffs)):
            d = np.bincount(src * G4 + grp[s, dst], minlength=n * G4).reshape(n, G4)
            bad = np.abs(d - deg[:, None] / G4) > thr[:, None]
            out[s] = bad[active].sum()
        return out

    chunk = cfg.slack_chunk_bits
    space = meter.S if meter is not None else None
    if space is not None:
        chunk = max(1, min(chunk, int(math.log2(space))))
    res = cond_expect_select(sub, [term], chunk_bits=chunk, direction="minimize", space_words=space)
    if meter is not None:
        meter.cond_expect(stage, max(1, n * G4), cfg.slack_enum_bits, chunk)
    coeffs = np.array([res.seed], dtype=np.uint64)
    groups = to_range(fam.evaluate(coeffs, ids), G4, w).astype(np.int64)[0]
    return groups, res, z


def psi_margins(instance: ListColoringInstance, groups: np.ndarray, sparsity: np.ndarray, C: int, cache: DensityCache | None = None):
    """Per (node, group): neighbors in the group with many anti-edges to the
    node's other neighbors there, against the required fraction of the
    node's non-friend count.  Returns (violations, min margin)."""
    g = instance.graph
    n, delta = g.n, instance.delta
    G4 = 4 * C
    if n == 0 or g.m == 0:
        return 0, None
    cache = cache or DensityCache(g)
    src, dst = g.arc_sources(), g.indices
    counts = cache.counts
    eps_arc = sparsity[src]
    friend = counts >= np.floor((1 - eps_arc) * delta + TOL)
    psi = np.bincount(src, weights=(~friend) & (eps_arc > 0), minlength=n)
    same = groups[src] == groups[dst]
    B = _arc_matrix(g, same)
    A = _arc_matrix(g, np.ones(len(src), dtype=bool))
    common_same = np.asarray((A @ B)[src, dst]).ravel()
    d_group = np.bincount(src * G4 + groups[dst], minlength=n * G4).reshape(n, G4)
    anti = d_group[src, groups[dst]] - 1 - common_same
    thr = sparsity[src] * delta / (96 * C * C)
    heavy = (anti >= thr - TOL) & (thr > 0)
    psi_i = np.bincount(src * G4 + groups[dst], weights=heavy, minlength=n * G4).reshape(n, G4)
    need = psi / (96 * C * C)
    rows = (psi > 0) & (sparsity > 0)
    if not rows.any():
        return 0, None
    margin = psi_i[rows] - need[rows, None]
    return int((margin < -TOL).sum()), float(margin.min())


def generate_slack(env: StageEnv, colors: np.ndarray, eps: EpsSequence, cache: DensityCache | None = None) -> tuple[np.ndarray, SlackReport]:
    inst, cfg = env.instance, env.cfg
    g = inst.graph
    trace = env.trace("slack")
    colors = np.asarray(colors, dtype=np.int64).copy()
    cache = cache or DensityCache(g)
    C = cfg.C
    groups, res, z = select_groups(inst, cfg, env.meter)
    sparsity = node_sparsity(g, eps, cache)
    target = slack_targets(inst, cfg, eps, cache)
    psi_bad, psi_min = psi_margins(inst, groups, sparsity, C, cache)

    def happy_rows(before: np.ndarray, rows: np.ndarray, avail=None) -> np.ndarray:
        return (rows >= 0) | (slack_after(inst, before, rows, avail) >= target[None, :])

    unhappy = ~happy_rows(colors, colors[None, :])[0]
    groups_run = 0
    for gi in range(C):
        units = np.flatnonzero(unhappy)
        if gi > 0 and len(units) == 0:
            break
        members = np.flatnonzero((groups == gi) & (colors < 0))
        groups_run += 1
        before = colors.copy()
        avail = available(inst, before)

        def outcome(coins: CoinView) -> np.ndarray:
            return one_shot_coloring(inst, before, cfg.p_slack, coins, members, cfg.layout)

        def pred(u, ctx, coins):
            return happy_rows(before, outcome(coins), avail)[:, u]

        if len(units):
            _, best, _ = env.voter.vote(trace, units, BallContext(inst, before, radius=1), pred, locality=2)
        else:
            best = StretchedCoinSource(cfg.vote_seed_bits, 0).view(np.array([0]))
        colors = outcome(best)[0]
        env.charge_exchange("slack", g.m)
        unhappy = ~happy_rows(colors, colors[None, :])[0]
        trace.happy.append(1.0 - float(unhappy.mean()) if g.n else 1.0)
    if unhappy.any():
        raise StageFailed("slack", f"{int(unhappy.sum())} nodes lack slack after {C} groups", np.flatnonzero(unhappy))
    slack = slack_after(inst, colors, colors[None, :])[0]
    unc_deg = uncolored_degree(inst, colors)
    with_target = target > 0
    slack_margin = float((slack - target)[with_target].min()) if with_target.any() else None
    heavy = g.degrees >= 5 / 6 * inst.delta - TOL
    p1 = unc_deg[heavy] - inst.delta / 2
    p1_margin = float(p1.min()) if heavy.any() else None
    if heavy.any() and p1.min() < -TOL:
        bad = np.flatnonzero(heavy)[p1 < -TOL]
        raise StageFailed("slack", "high-degree nodes kept fewer than Delta/2 uncolored neighbors", bad)
    report = SlackReport(
        groups=4 * C, z=z, bad_pairs=int(res.value), expectation=float(res.expectation), groups_run=groups_run,
        min_slack_margin=slack_margin, min_p1_margin=p1_margin, psi_violations=psi_bad, psi_min_margin=psi_min,
        group_of=groups,
    )
    trace.margins.update(report.to_dict())
    return colors, report


# ------------------------------------------------- small and medium blocks


def sm_bound(eps_i: float, delta: int, k: int) -> float:
    """Uncolored layer-i neighbor bound entering the k-th phase."""
    d_i = 2 * eps_i * math.log(1 / eps_i)
    return max((2 * d_i) ** (k - 1) * delta, eps_i**5 * delta)


def _clusters_pi(hier: DensityHierarchy, blocks, colors: np.ndarray, nodes_mask: np.ndarray) -> list[np.ndarray]:
    blocks = sorted(blocks, key=lambda b: (b.layer, int(b.nodes.min())))
    out = []
    for b in blocks:
        c = b.nodes[nodes_mask[b.nodes] & (colors[b.nodes] < 0)]
        if len(c):
            out.append(pi_order(c, hier.layer))
    return out


def color_small_medium_2plus(env: StageEnv, hier: DensityHierarchy, colors: np.ndarray) -> np.ndarray:
    inst, cfg = env.instance, env.cfg
    g = inst.graph
    trace = env.trace("sm2")
    colors = np.asarray(colors, dtype=np.int64).copy()
    layers = list(range(2, hier.ell + 1))
    blocks = [b for b in hier.blocks if b.kind in (SMALL, MEDIUM) and b.layer >= 2]
    in_S = np.zeros(g.n, dtype=bool)
    for b in blocks:
        in_S[b.nodes] = True
    in_S &= colors < 0
    if not in_S.any():
        trace.notes.append("empty class")
        return colors
    out_arcs = out_arc_mask(g, hier.layer, in_S)
    A = _arc_matrix(g, np.ones(g.m * 2, dtype=bool))
    layer_masks = {i: in_S & (hier.layer == i) for i in layers}

    def bounds_ok(rows: np.ndarray, k: int) -> np.ndarray:
        ok = np.ones(rows.shape, dtype=bool)
        for i in layers:
            cnt = _count(A, (rows < 0) & layer_masks[i][None, :])
            ok &= cnt <= sm_bound(hier.eps_of_layer(i), inst.delta, k) + TOL
        return ok

    Q = cfg.C
    worst = {}
    for k in range(1, cfg.sm_phases + 1):
        units = np.flatnonzero(in_S & (colors < 0))
        if len(units) == 0:
            break
        participants = units
        for q in range(1, Q + 1):
            before = colors.copy()
            clusters = _clusters_pi(hier, blocks, before, np.isin(np.arange(g.n), participants))

            def outcome(coins, before=before, clusters=clusters):
                return dense_step_v1(inst, before, clusters, out_arcs, coins, cfg.layout)

            def pred(u, ctx, coins, outcome=outcome):
                rows = outcome(coins)
                return ((rows >= 0) | bounds_ok(rows, k + 1))[:, u]

            res, best, _ = env.voter.vote(trace, units, BallContext(inst, before, radius=2), pred, locality=2)
            colors = outcome(best)[0]
            env.charge_exchange("sm2", g.m)
            happy = res.happy
            trace.happy.append(float(happy.mean()))
            units = units[~happy]
            participants = units
            if len(units) == 0:
                break
        if len(units):
            raise StageFailed("sm2", f"phase {k}: {len(units)} nodes above the layer bound", units)
        for i in layers:
            cnt = _count(A, (colors < 0) & layer_masks[i])[0][hier.vstar]
            t = sm_bound(hier.eps_of_layer(i), inst.delta, k + 1)
            worst[f"phase{k}_layer{i}"] = {"max_count": int(cnt.max(initial=0)), "bound": t}
    trace.margins["layer_counts"] = worst
    return colors


def color_small_medium_1(env: StageEnv, hier: DensityHierarchy, colors: np.ndarray) -> np.ndarray:
    inst, cfg = env.instance, env.cfg
    g = inst.graph
    trace = env.trace("sm1")
    colors = np.asarray(colors, dtype=np.int64).copy()
    blocks = [b for b in hier.blocks if b.kind in (SMALL, MEDIUM) and b.layer == 1]
    in_S = np.zeros(g.n, dtype=bool)
    for b in blocks:
        in_S[b.nodes] = True
    in_S &= colors < 0
    if not in_S.any():
        trace.notes.append("empty class")
        return colors
    delta = max(inst.delta, 2)
    threshold = cfg.c9 * delta**0.9 * math.log(delta)
    out_arcs = out_arc_mask(g, hier.layer, in_S)
    A_S = _arc_matrix(g, in_S[g.arc_sources()] & in_S[g.indices])
    units = np.flatnonzero(in_S)
    for q in range(1, cfg.C + 1):
        before = colors.copy()
        clusters = _clusters_pi(hier, blocks, before, np.isin(np.arange(g.n), units))

        def outcome(coins, before=before, clusters=clusters):
            return dense_step_v1(inst, before, clusters, out_arcs, coins, cfg.layout)

        def pred(u, ctx, coins, outcome=outcome):
            rows = outcome(coins)
            deg = _count(A_S, rows < 0)
            return ((rows >= 0) | (deg <= threshold + TOL))[:, u]

        res, best, _ = env.voter.vote(trace, units, BallContext(inst, before, radius=2), pred, locality=2)
        colors = outcome(best)[0]
        env.charge_exchange("sm1", g.m)
        trace.happy.append(float(res.happy.mean()))
        units = units[~res.happy]
        if len(units) == 0:
            break
    if len(units):
        raise StageFailed("sm1", f"{len(units)} nodes keep a large uncolored degree", units)
    rest = np.flatnonzero(in_S & (colors < 0))
    deg = _count(A_S, colors < 0)[0]
    trace.margins["phase1_max_degree"] = int(deg[rest].max(initial=0))
    trace.margins["phase1_threshold"] = threshold
    return sparse_gap_color(env, colors, rest, stage="sm1_gap")


# ------------------------------------------------------- sparse coloring


@dataclass
class ContentionSchedule:
    values: list[float]
    p_star: float
    lam: float
    degenerate: bool

    @property
    def Q(self) -> int:
        return len(self.values)


def contention_schedule(C: float, p_star: float, lam: float = 0.1, max_len: int = 64) -> ContentionSchedule:
    """C^(1) = min{C, sqrt p*}; C^(k) = min{sqrt p*, C^(k-1) / ((1+lam) exp(-C^(k-1)/6))}."""
    cap = math.sqrt(max(p_star, 0.0))
    vals = [min(C, cap)]
    degenerate = False
    while vals[-1] < cap - TOL and len(vals) < max_len:
        nxt = min(cap, vals[-1] / ((1 + lam) * math.exp(-vals[-1] / 6)))
        if nxt <= vals[-1] + TOL:
            degenerate = True
            break
        vals.append(nxt)
    if vals[-1] < cap - TOL:
        degenerate = True
    return ContentionSchedule(vals, p_star, lam, degenerate)


def contention(instance: ListColoringInstance, rows: np.ndarray, A_out: sp.csr_matrix, inv_p: np.ndarray) -> np.ndarray:
    """(S, n): sum of 1/p_u over uncolored out-neighbors u."""
    rows = np.atleast_2d(rows)
    w = (rows < 0) * inv_p[None, :]
    return np.asarray(A_out @ w.T).T


def color_sparse(
    env: StageEnv,
    colors: np.ndarray,
    nodes: np.ndarray,
    out_arcs: np.ndarray,
    p: np.ndarray,
    C_nominal: float | None,
    p_star: float,
    stage: str = "sparse",
    trace: StageTrace | None = None,
) -> np.ndarray:
    """Bidding along the contention schedule, then repetitions until every
    node of ``nodes`` is colored; leftovers go to the low-degree routine."""
    inst, cfg = env.instance, env.cfg
    g = inst.graph
    trace = trace or env.trace(stage)
    colors = np.asarray(colors, dtype=np.int64).copy()
    nodes = np.asarray(nodes, dtype=np.int64)
    nodes = nodes[colors[nodes] < 0]
    if len(nodes) == 0:
        trace.notes.append("empty class")
        return colors
    in_set = np.zeros(g.n, dtype=bool)
    in_set[nodes] = True
    arcs = out_arcs & in_set[g.arc_sources()] & in_set[g.indices]
    A_out = _arc_matrix(g, arcs)
    p = np.asarray(p, dtype=float)
    inv_p = np.where(in_set, 1.0 / np.maximum(p, TOL), 0.0)
    con0 = contention(inst, colors, A_out, inv_p)[0]
    max_con = float(con0[nodes].max())
    derived = 1.0 / max_con if max_con > 0 else math.inf
    if C_nominal is not None and C_nominal > derived + TOL:
        trace.notes.append(f"nominal C {C_nominal:.4g} above derived {derived:.4g}")
    C = derived if math.isfinite(derived) else (C_nominal or math.sqrt(p_star))
    sched = contention_schedule(C, p_star, cfg.lam)
    trace.margins.update({"C_nominal": C_nominal, "C_derived": derived, "p_star": p_star, "schedule": sched.values, "degenerate": sched.degenerate})
    boundaries = []
    con_prev = con0

    def record_boundary(k: int, cval: float, cur: np.ndarray) -> None:
        con = contention(inst, cur, A_out, inv_p)[0]
        unc = in_set & (cur < 0)
        worst = float(con[unc].max(initial=0.0))
        boundaries.append({"k": k, "bound": 1.0 / cval, "max_con": worst, "ok": bool(worst <= 1.0 / cval + TOL)})

    def monotone(cur: np.ndarray) -> None:
        nonlocal con_prev
        con = contention(inst, cur, A_out, inv_p)[0]
        assert np.all(con <= con_prev + TOL), "contention increased"
        con_prev = con

    record_boundary(1, sched.values[0], colors)
    Q = cfg.C
    aborted = False
    for k in range(len(sched.values) - 1):
        c_now, c_next = sched.values[k], sched.values[k + 1]
        units = np.flatnonzero(in_set & (colors < 0))
        for q in range(1, Q + 1):
            if len(units) == 0:
                break
            before = colors.copy()
            bidders = units

            def outcome(coins, before=before, bidders=bidders, c_now=c_now):
                return color_bidding(inst, before, bidders, arcs, p, c_now, coins, cfg.layout)

            def pred(u, ctx, coins, outcome=outcome, c_next=c_next):
                rows = outcome(coins)
                con = contention(inst, rows, A_out, inv_p)
                return ((rows >= 0) | (con <= 1.0 / c_next + TOL))[:, u]

            res, best, _ = env.voter.vote(trace, units, BallContext(inst, before, radius=1), pred, locality=2)
            colors = outcome(best)[0]
            env.charge_exchange(trace.stage, int(arcs.sum()))
            monotone(colors)
            trace.happy.append(float(res.happy.mean()))
            units = units[~res.happy]
        if len(units):
            trace.notes.append(f"schedule stopped at iteration {k + 1}: {len(units)} nodes above the contention bound")
            aborted = True
            break
        record_boundary(k + 2, c_next, colors)
    c_final = math.sqrt(max(p_star, TOL))
    for rep in range(cfg.reps):
        units = np.flatnonzero(in_set & (colors < 0))
        if len(units) == 0:
            break
        before = colors.copy()

        def outcome(coins, before=before, units=units):
            return color_bidding(inst, before, units, arcs, p, c_final, coins, cfg.layout)

        def pred(u, ctx, coins, outcome=outcome):
            return (outcome(coins) >= 0)[:, u]

        res, best, _ = env.voter.vote(trace, units, BallContext(inst, before, radius=1), pred, locality=2)
        colors = outcome(best)[0]
        env.charge_exchange(trace.stage, int(arcs.sum()))
        monotone(colors)
        trace.happy.append(float(res.happy.mean()))
    trace.margins["boundaries"] = boundaries
    trace.margins["schedule_aborted"] = aborted
    rest = np.flatnonzero(in_set & (colors < 0))
    trace.margins["residue"] = int(len(rest))
    if len(rest):
        if not cfg.safety_net:
            raise StageFailed(trace.stage, f"{len(rest)} nodes uncolored after the final repetitions", rest)
        trace.notes.append(f"safety net colors {len(rest)} nodes")
        colors = low_degree_color(env, colors, rest, stage="safety_net")
    return colors


def sparse_gap_color(env: StageEnv, colors: np.ndarray, nodes: np.ndarray, rho: float | None = None, stage: str = "gap") -> np.ndarray:
    """Nodes whose available palettes exceed (1 + rho) times their max degree
    inside ``nodes``: p_v = rho Delta, C = rho, arbitrary orientation."""
    inst = env.instance
    g = inst.graph
    colors = np.asarray(colors, dtype=np.int64).copy()
    nodes = np.asarray(nodes, dtype=np.int64)
    nodes = nodes[colors[nodes] < 0]
    trace = env.trace(stage)
    if len(nodes) == 0:
        trace.notes.append("empty class")
        return colors
    in_set = np.zeros(g.n, dtype=bool)
    in_set[nodes] = True
    inner = in_set[g.arc_sources()] & in_set[g.indices]
    deg = np.bincount(g.arc_sources()[inner], minlength=g.n)
    d_max = int(deg[nodes].max(initial=0))
    avail = available(inst, colors)
    if d_max == 0:
        colors[nodes] = _min_available(inst, avail, nodes)
        trace.notes.append("no inner edges")
        return colors
    if rho is None:
        rho = float(avail.sizes[nodes].min()) / d_max - 1
    trace.margins["rho"] = rho
    trace.margins["inner_max_degree"] = d_max
    if rho <= 0:
        raise StageFailed(stage, f"palette gap {rho:.3g} is not positive", nodes)
    p = np.full(g.n, rho * d_max)
    out_arcs = g.arc_sources() > g.indices
    return color_sparse(env, colors, nodes, out_arcs, p, rho, rho * d_max, stage=stage, trace=trace)


def _min_available(inst: ListColoringInstance, avail, nodes: np.ndarray) -> np.ndarray:
    from .procedures import palette_index

    universe = palette_index(inst).universe
    sizes = avail.sizes[nodes]
    assert np.all(sizes > 0), "empty available palette"
    return universe[avail.vals[avail.ptr[nodes]]]


def finish_dense_U(env: StageEnv, hier: DensityHierarchy, colors: np.ndarray) -> np.ndarray:
    inst, cfg = env.instance, env.cfg
    g = inst.graph
    colors = np.asarray(colors, dtype=np.int64).copy()
    dense = hier.vstar & (hier.layer >= 1) & (hier.layer <= hier.ell)
    U = np.flatnonzero(dense & (colors < 0))
    trace = env.trace("dense_u")
    if len(U) == 0:
        trace.notes.append("empty class")
        return colors
    if np.any(hier.layer[U] == 1):
        raise StageFailed("dense_u", "layer-1 nodes still uncolored", U[hier.layer[U] == 1])
    in_U = np.zeros(g.n, dtype=bool)
    in_U[U] = True
    out_arcs = out_arc_mask(g, hier.layer, in_U)
    p = np.zeros(g.n)
    for v_layer in range(2, hier.ell + 1):
        sel = in_U & (hier.layer == v_layer)
        p[sel] = cfg.c_slack * hier.eps_of_layer(v_layer - 1) ** 2 * inst.delta
    avail = available(inst, colors)
    outdeg = np.bincount(g.arc_sources()[out_arcs], minlength=g.n)
    room = avail.sizes - outdeg
    over = np.flatnonzero(in_U & (p > room + TOL))
    if len(over):
        v = int(over[0])
        raise ContentionHypothesisViolated(v, float(p[v]), float(room[v]))
    A_out = _arc_matrix(g, out_arcs)
    con = contention(inst, colors, A_out, np.where(in_U, 1.0 / np.maximum(p, TOL), 0.0))[0]
    v = int(U[np.argmax(con[U])])
    total = float(con[v])
    C = 1.0 / total if total > 0 else math.inf
    if not np.all(con[U] <= 1.0 / C + TOL):
        raise ContentionHypothesisViolated(v, total, 1.0 / C)
    trace.margins["max_contention"] = total
    p_star = float(p[U].min())
    return color_sparse(env, colors, U, out_arcs, p, C if math.isfinite(C) else None, p_star, stage="dense_u", trace=trace)


def finish_sparse(env: StageEnv, hier: DensityHierarchy, colors: np.ndarray) -> np.ndarray:
    inst = env.instance
    g = inst.graph
    colors = np.asarray(colors, dtype=np.int64).copy()
    V = np.flatnonzero(hier.sparse_mask & (colors < 0))
    trace = env.trace("sparse")
    if len(V) == 0:
        trace.notes.append("empty class")
        return colors
    in_V = np.zeros(g.n, dtype=bool)
    in_V[V] = True
    out_arcs = out_arc_mask(g, hier.layer, in_V)
    avail = available(inst, colors)
    outdeg = np.bincount(g.arc_sources()[out_arcs], minlength=g.n)
    p = (avail.sizes - outdeg).astype(float)
    if np.any(p[V] < 1):
        raise StageFailed("sparse", "a sparse node has no palette room over its out-degree", V[p[V] < 1])
    gamma_sp = float(p[V].min()) / max(inst.delta, 1)
    trace.margins["gamma_sp"] = gamma_sp
    trace.margins["min_room"] = float(p[V].min())
    return color_sparse(env, colors, V, out_arcs, p, gamma_sp, float(p[V].min()), stage="sparse", trace=trace)


# --------------------------------------------------------- low degree


def low_degree_color(env: StageEnv, colors: np.ndarray, nodes: np.ndarray | None = None, stage: str = "low_degree", radius: int | None = None) -> np.ndarray:
    """Waves over Linial classes: a node takes its smallest available color
    once all its pending neighbors have larger class."""
    inst = env.instance
    g = inst.graph
    colors = np.asarray(colors, dtype=np.int64).copy()
    nodes = np.flatnonzero(colors < 0) if nodes is None else np.asarray(nodes, dtype=np.int64)
    nodes = nodes[colors[nodes] < 0]
    trace = next((t for t in env.traces if t.stage == stage), None) or env.trace(stage)
    if len(nodes) == 0:
        return colors
    H, orig = g.subgraph(np.sort(nodes))
    classes = linial_ids(H, t=radius or env.cfg.linial_radius)
    if env.meter is not None:
        for _ in range(_log_star(max(H.n, 2)) + 1):
            env.meter.exchange(stage, max(1, H.m * 2), width=2)
    pending = np.ones(H.n, dtype=bool)
    src, dst = H.arc_sources(), H.indices
    key = classes * H.n + np.arange(H.n)
    waves = 0
    while pending.any():
        waves += 1
        blocker = pending[src] & pending[dst] & (key[dst] < key[src])
        blocked = np.zeros(H.n, dtype=bool)
        blocked[src[blocker]] = True
        ready = pending & ~blocked
        avail = available(inst, colors)
        colors[orig[ready]] = _min_available(inst, avail, orig[ready])
        pending &= ~ready
        env.charge_exchange(stage, g.m)
    trace.margins.setdefault("waves", []).append(waves)
    trace.margins.setdefault("classes", []).append(int(classes.max(initial=0)) + 1)
    return colors


def _log_star(n: int) -> int:
    k, x = 0, float(n)
    while x > 1:
        x = math.log2(x)
        k += 1
    return k


# ---------------------------------------------- invariant framework (large)


@dataclass
class InvariantSchedule:
    """Bounds per layer and step k (index 0 unused)."""

    kind: str
    applications: int
    D: dict[int, list[float]]
    L: dict[int, list[float]]
    U: dict[int, list[float]]
    delta_raw: dict[int, list[float]]
    delta: dict[int, list[float]]
    t: dict[int, list[float]] | None
    gamma: float

    @property
    def steps(self) -> int:
        return 2 * self.applications + 1

    def to_dict(self) -> dict:
        return _jsonable(asdict(self))


def _raw_delta(D: float, L: float, U: float) -> float:
    if D <= 0 or L <= 0 or U <= D:
        return float("nan")
    return D * math.log(U / D) / L


def _clip_delta(raw: float, cfg: PipelineConfig) -> float:
    if not math.isfinite(raw):
        return cfg.delta_min
    return min(cfg.delta_max, max(cfg.delta_min, raw))


def schedule_layer2plus(hier: DensityHierarchy, cfg: PipelineConfig, populated: set[int] | None = None) -> InvariantSchedule:
    delta = hier.delta
    layers = list(range(2, hier.ell + 1))
    populated = set(layers) if populated is None else populated
    K = cfg.layer2_iterations
    steps = 2 * K + 1
    D, L, U, draw, dcl, t = {}, {}, {}, {}, {}, {}
    for i in layers:
        e = hier.eps_of_layer(i)
        D[i] = [0.0] * (steps + 1)
        L[i] = [0.0] * (steps + 1)
        U[i] = [0.0] * (steps + 1)
        draw[i] = [float("nan")] * (steps + 1)
        dcl[i] = [float("nan")] * (steps + 1)
        t[i] = [0.0] * (steps + 1)
        D[i][1], U[i][1], L[i][1], t[i][1] = 3 * e * delta, (1 + 3 * e) * delta, delta / math.log(1 / e), float(delta)
    for q in range(1, K + 1):
        k = 2 * q - 1
        for i in layers:
            draw[i][k] = _raw_delta(D[i][k], L[i][k], U[i][k])
            dcl[i][k] = _clip_delta(draw[i][k], cfg)
        for i in layers:
            dl = dcl[i][k]
            D[i][k + 1] = cfg.beta * dl * D[i][k]
            L[i][k + 1] = dl * L[i][k]
            U[i][k + 1] = cfg.beta * dl * U[i][k]
            d_star = dl if i in populated else 1.0
            t[i][k + 1] = max(d_star * t[i][k], hier.eps_of_layer(i) ** 6 * delta)
            D[i][k + 2] = cfg.gamma * D[i][k + 1]
            L[i][k + 2] = L[i][k + 1]
            U[i][k + 2] = U[i][k + 1]
            t[i][k + 2] = cfg.gamma * t[i][k + 1]
    return InvariantSchedule("layer2plus", K, D, L, U, draw, dcl, t, cfg.gamma)


def schedule_layer1(hier: DensityHierarchy, cfg: PipelineConfig, n_model: int) -> InvariantSchedule:
    if hier.ell == 0:
        return InvariantSchedule("layer1", 0, {}, {}, {}, {}, {}, None, cfg.gamma)
    delta = max(hier.delta, 2)
    e = hier.eps_of_layer(1)
    K = cfg.layer1_iterations
    steps = 2 * K + 1
    D = [0.0] * (steps + 1)
    L = [0.0] * (steps + 1)
    U = [0.0] * (steps + 1)
    draw = [float("nan")] * (steps + 1)
    dcl = [float("nan")] * (steps + 1)
    D[1], U[1], L[1] = 3 * e * delta, (1 + 3 * e) * delta, delta / math.log(1 / e)
    lnD, lnn = math.log(delta), math.log(max(n_model, 2))
    pw = 5 * cfg.log_power_c
    for q in range(1, K + 1):
        k = 2 * q - 1
        if q == 10:
            D[k] = cfg.theta_d19 * max(lnD**18, lnn)
            L[k] = min(cfg.theta_l19 * delta**0.1 * lnD**17, L[k - 1])
            U[k] = cfg.theta_u19 * delta**0.1 * lnD**18
        draw[k] = _raw_delta(D[k], L[k], U[k])
        dcl[k] = _clip_delta(draw[k], cfg)
        dl = dcl[k]
        D[k + 1] = cfg.beta * dl * D[k]
        L[k + 1] = dl * L[k]
        U[k + 1] = cfg.beta * dl * U[k]
        if q == 10:
            D[k + 1] = cfg.theta_d20 * lnn
            L[k + 1] = min(cfg.theta_l20 * delta**0.05 * lnD, L[k + 1])
            U[k + 1] = cfg.theta_u20 * delta**-0.05 * lnD**pw
        elif q == 11:
            D[k + 1] = cfg.theta_d22 * lnn
            L[k + 1] = min(cfg.theta_l22 * lnn**pw / lnD, L[k + 1])
            U[k + 1] = cfg.theta_u22 * lnn**pw
        elif q == 12:
            D[k + 1] = cfg.theta_d24 * lnn
        if k + 2 <= steps:
            D[k + 2] = cfg.gamma * D[k + 1]
            L[k + 2] = L[k + 1]
            U[k + 2] = U[k + 1]
    return InvariantSchedule("layer1", K, {1: D}, {1: L}, {1: U}, {1: draw}, {1: dcl}, None, cfg.gamma)


class ClusterGeometry:
    """Per-cluster invariant quantities of a cluster collection, evaluated on
    batches of colorings."""

    def __init__(self, instance: ListColoringInstance, clusters: list[np.ndarray], layer: np.ndarray, t_layers: list[int]):
        g = instance.graph
        self.n = g.n
        self.J = len(clusters)
        self.cid = np.full(g.n, -1, dtype=np.int64)
        for j, c in enumerate(clusters):
            self.cid[c] = j
        self.in_S = self.cid >= 0
        self.order = np.concatenate(clusters) if clusters else np.zeros(0, np.int64)
        self.starts = np.concatenate([[0], np.cumsum([len(c) for c in clusters])[:-1]]).astype(np.int64) if clusters else np.zeros(0, np.int64)
        self.clayer = np.array([int(layer[c[0]]) for c in clusters], dtype=np.int64)
        src, dst = g.arc_sources(), g.indices
        both = self.in_S[src] & self.in_S[dst]
        same = both & (self.cid[src] == self.cid[dst])
        self.A_in = _arc_matrix(g, same)
        star = star_arc_mask(g, layer)
        self.A_ext = _arc_matrix(g, both & ~same & star)
        self.A_layer = {i: _arc_matrix(g, self.in_S[dst] & (layer[dst] == i)) for i in t_layers}
        cs, cd = self.cid[src[both & ~same]], self.cid[dst[both & ~same]]
        self.CA = sp.csr_matrix((np.ones(len(cs)), (cs, cd)), shape=(self.J, self.J))
        self.CA.data[:] = 1
        self.members = clusters

    def _reduce_max(self, vals: np.ndarray) -> np.ndarray:
        if self.J == 0:
            return np.zeros((vals.shape[0], 0))
        return np.maximum.reduceat(vals[:, self.order], self.starts, axis=1)

    def stats(self, rows: np.ndarray) -> dict[str, np.ndarray]:
        rows = np.atleast_2d(rows)
        unc = (rows < 0) & self.in_S[None, :]
        size = np.zeros((rows.shape[0], self.J))
        if self.J:
            size = np.add.reduceat(unc[:, self.order].astype(np.int64), self.starts, axis=1)
        in_nbr = _count(self.A_in, unc)
        own = np.where(self.in_S, self.cid, 0)
        anti = size[:, own] - 1 - in_nbr
        neg = -np.inf
        out = {
            "size": size,
            "anti": self._reduce_max(np.where(unc, anti, neg)),
            "ext": self._reduce_max(np.where(unc, _count(self.A_ext, unc), neg)),
        }
        for i, A in self.A_layer.items():
            out[f"layer{i}"] = self._reduce_max(np.where(unc, _count(A, unc), neg))
        return out

    def status(self, rows: np.ndarray, sched: InvariantSchedule, k: int) -> tuple[np.ndarray, np.ndarray]:
        """(self-invariant ok (S, J), neighbor ratio (S, J)) against invariant k."""
        st = self.stats(rows)
        D = np.array([sched.D[int(l)][k] for l in self.clayer])
        L = np.array([sched.L[int(l)][k] for l in self.clayer])
        U = np.array([sched.U[int(l)][k] for l in self.clayer])
        size = st["size"]
        self_ok = (size == 0) | ((size >= np.floor(L + TOL)[None, :]) & (size <= U[None, :] + TOL) & (st["anti"] <= D[None, :] + TOL))
        ratio = np.maximum(st["ext"] / D[None, :], 0.0)
        if sched.t is not None:
            for i in sched.t:
                key = f"layer{i}"
                if key in st:
                    ratio = np.maximum(ratio, st[key] / sched.t[i][k])
        ratio = np.where(size == 0, 0.0, ratio)
        return self_ok, ratio

    def satisfied(self, rows: np.ndarray, sched: InvariantSchedule, k: int, factor: float) -> np.ndarray:
        self_ok, ratio = self.status(rows, sched, k)
        return self_ok & (ratio <= factor + TOL)

    def nbr_bad(self, bad: np.ndarray) -> np.ndarray:
        """(S, J) count of neighboring clusters flagged in ``bad``."""
        if self.J == 0:
            return np.zeros_like(bad, dtype=np.int64)
        return np.asarray(self.CA @ bad.T.astype(np.int64)).T


@dataclass
class FrameworkReport:
    kind: str
    clusters: int
    transitions: list[dict] = field(default_factory=list)
    rollbacks: int = 0
    max_factor: float = 0.0

    def to_dict(self) -> dict:
        return _jsonable(asdict(self))


def color_large_framework(
    env: StageEnv,
    hier: DensityHierarchy,
    colors: np.ndarray,
    clusters: list[np.ndarray],
    sched: InvariantSchedule,
    stage: str,
) -> tuple[np.ndarray, FrameworkReport]:
    inst, cfg = env.instance, env.cfg
    g = inst.graph
    trace = env.trace(stage)
    colors = np.asarray(colors, dtype=np.int64).copy()
    clusters = [np.sort(c[colors[c] < 0]) for c in clusters]
    clusters = [c for c in clusters if len(c)]
    report = FrameworkReport(sched.kind, len(clusters))
    if not clusters:
        trace.notes.append("empty class")
        trace.margins.update(report.to_dict())
        return colors, report
    t_layers = list(sched.t) if sched.t is not None else []
    geo = ClusterGeometry(inst, clusters, hier.layer, t_layers)
    out_arcs = out_arc_mask(g, hier.layer, geo.in_S)
    Q = cfg.C
    J = geo.J
    if not geo.satisfied(colors, sched, 1, 1.0)[0].all():
        bad = np.flatnonzero(~geo.satisfied(colors, sched, 1, 1.0)[0])
        raise StageFailed(stage, f"clusters {bad.tolist()[:8]} violate the first invariant", clusters[int(bad[0])])
    for app in range(1, sched.applications + 1):
        k = 2 * app - 1
        pending = np.ones(J, dtype=bool)
        record = {"k": k, "votes": 0, "kept": [], "rollbacks": 0}
        for q in range(1, Q + 1):
            r = q - 1
            units = np.flatnonzero(pending)
            if len(units) == 0:
                break
            before = colors.copy()
            step_clusters = [geo.members[j][before[geo.members[j]] < 0] for j in units]
            deltas = np.array([sched.delta[int(geo.clayer[j])][k] for j in units])
            in_step = np.zeros(g.n, dtype=bool)
            for j in units:
                in_step[geo.members[j]] = True

            def outcome(coins, before=before, step_clusters=step_clusters, deltas=deltas):
                return dense_step_v2(inst, before, step_clusters, deltas, out_arcs, coins, cfg.layout)

            def closure(rows: np.ndarray, pending=pending, before=before, in_step=in_step, r=r) -> tuple[np.ndarray, np.ndarray]:
                sat = geo.satisfied(rows, sched, k + 1, r + 1)
                kept = pending[None, :] & sat & (geo.nbr_bad(~sat) == 0)
                while True:
                    drop = pending[None, :] & ~kept
                    node_drop = drop[:, np.where(geo.in_S, geo.cid, 0)] & geo.in_S[None, :] & in_step[None, :]
                    cur = np.where(node_drop, before[None, :], rows)
                    sat = geo.satisfied(cur, sched, k + 1, r + 1)
                    exempt = pending[None, :] & ~kept
                    bad = ~sat & ~exempt
                    nxt = kept & sat & (geo.nbr_bad(bad) == 0)
                    if np.array_equal(nxt, kept):
                        return kept, cur
                    kept = nxt

            def pred(u, ctx, coins, outcome=outcome, closure=closure):
                kept, _ = closure(outcome(coins))
                return kept[:, u]

            res, best, _ = env.voter.vote(trace, units, BallContext(inst, before, radius=3), pred, locality=3)
            kept, cur = closure(outcome(best))
            kept = kept[0]
            colors = cur[0]
            env.charge_exchange(stage, g.m)
            dropped = int((pending & ~kept).sum())
            record["votes"] += 1
            record["kept"].append(int((pending & kept).sum()))
            record["rollbacks"] += dropped
            report.rollbacks += dropped
            trace.rollbacks += dropped
            # rollback safety: everything outside the dropped set still (r+1)-satisfies
            sat = geo.satisfied(colors, sched, k + 1, r + 1)[0]
            must = ~(pending & ~kept)
            assert np.all(sat[must]), f"rollback safety violated at k={k}, q={q}"
            trace.happy.append(float(kept[units].mean()))
            pending = pending & ~kept
        if pending.any():
            raise StageFailed(stage, f"transition {k}->{k + 1}: {int(pending.sum())} clusters unhappy after {Q} applications", clusters[int(np.flatnonzero(pending)[0])])
        self_ok, ratio = geo.status(colors, sched, k + 1)
        factor = float(ratio.max(initial=0.0))
        assert self_ok.all() and factor <= Q + TOL, f"invariant {k + 1} not reached within factor {Q}"
        next_ok = geo.satisfied(colors, sched, k + 2, 1.0)[0] if k + 2 <= sched.steps else np.ones(J, dtype=bool)
        assert next_ok.all(), f"invariant {k + 2} does not follow from invariant {k + 1}"
        record["factor"] = factor
        report.max_factor = max(report.max_factor, factor)
        report.transitions.append(record)
        if not np.any(colors[geo.order] < 0):
            break
    trace.margins.update(report.to_dict())
    return colors, report


def large_clusters(hier: DensityHierarchy, layers: list[int]) -> list[np.ndarray]:
    return [b.nodes for b in sorted(hier.blocks, key=lambda b: (b.layer, int(b.nodes.min()))) if b.kind == LARGE and b.layer in layers]
