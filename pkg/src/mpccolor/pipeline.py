"""End-to-end run: degree reduction, per-instance stage sequence, report."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .config import PipelineConfig
from .density import (
    LARGE, MEDIUM, SMALL, DensityCache, build_hierarchy, eps_sequence, linial_ids, verify_clique_props,
)
from .instance import UNCOLORED, ListColoringInstance, PartialColoring, validate_coloring
from .mpc import Meter, MpcConfig
from .partition import ReduceTrace, color_reduce, reduction_depth
from .stages import (
    StageEnv, Voter, VoteRecord, _jsonable, _log_star, check_partial, color_large_framework,
    color_small_medium_1, color_small_medium_2plus, finish_dense_U, finish_sparse, generate_slack,
    large_clusters, low_degree_color, schedule_layer1, schedule_layer2plus,
)


@dataclass
class RunReport:
    n: int
    m: int
    delta: int
    mode: str
    route: str
    depth: int
    low_degree_floor: float
    space_words: int
    total_rounds: int
    peak_words: int
    round_cap: int
    valid: dict
    stages: list[dict]
    traces: list[dict]
    instances: list[dict]
    partition: list[dict]
    votes: dict
    bounds: list[dict]
    config: dict
    notes: list[str] = field(default_factory=list)

    @property
    def within_round_cap(self) -> bool:
        return self.total_rounds <= self.round_cap

    @property
    def ok(self) -> bool:
        return all(self.valid.values())

    def stage_rounds(self) -> dict[str, int]:
        return {s["stage"]: s["rounds"] for s in self.stages}

    def to_dict(self) -> dict:
        d = asdict(self)
        d["within_round_cap"] = self.within_round_cap
        return _jsonable(d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)

    def summary(self) -> str:
        lines = [
            f"n={self.n} m={self.m} delta={self.delta} mode={self.mode} route={self.route} depth={self.depth}",
            f"total rounds: {self.total_rounds} (cap {self.round_cap})",
            f"peak words: {self.peak_words} (S = {self.space_words})",
            "valid: " + ", ".join(f"{k}={v}" for k, v in self.valid.items()),
        ]
        for s in self.stages:
            lines.append(f"  {s['stage']:<14} rounds={s['rounds']:<5} peak={s['peak_words']}")
        return "\n".join(lines)


class _Run:
    """Mutable state shared by the base solver calls of one pipeline run."""

    def __init__(self, cfg: PipelineConfig, n_model: int):
        self.cfg = cfg
        self.n_model = n_model
        self.records: list[VoteRecord] = []
        self.traces: list = []
        self.instances: list[dict] = []

    def env(self, instance: ListColoringInstance, meter: Meter | None) -> StageEnv:
        voter = Voter(self.cfg, self.n_model, meter)
        voter.records = self.records
        env = StageEnv(instance, self.cfg, voter, meter)
        env.traces = self.traces
        return env

    def solve(self, instance: ListColoringInstance, meter: Meter | None) -> np.ndarray:
        cfg = self.cfg
        env = self.env(instance, meter)
        info: dict = {"n": instance.n, "m": instance.graph.m, "delta": instance.delta, "mode": instance.mode}
        self.instances.append(info)
        colors = np.full(instance.n, UNCOLORED, dtype=np.int64)
        if instance.delta <= cfg.low_degree_floor(self.n_model):
            info["route"] = "low_degree"
            return low_degree_color(env, colors)
        info["route"] = "clp"
        return clp_solve(env, colors, info, self.n_model)


def _boundary(env: StageEnv, colors: np.ndarray, stage: str) -> None:
    if env.cfg.check_boundaries:
        check_partial(env.instance, colors, stage)


def clp_solve(env: StageEnv, colors: np.ndarray, info: dict, n_model: int) -> np.ndarray:
    inst, cfg, meter = env.instance, env.cfg, env.meter
    g = inst.graph
    if meter is not None:
        for _ in range(_log_star(max(g.n, 2)) + 1):
            meter.exchange("linial", max(1, 2 * g.m), width=2)
    ids = linial_ids(g, t=cfg.linial_radius)
    info["linial_classes"] = int(ids.max(initial=0)) + 1

    eps = eps_sequence(inst.delta, cfg.eps_cap, cfg.eps1_exponent)
    info["eps"] = list(eps.values)
    cache = DensityCache(g)
    if meter is not None:
        meter.exchange("hierarchy", max(1, 2 * g.m), width=max(1, inst.delta))
        meter.aggregate("hierarchy", max(1, g.n), width=1)

    colors, slack = generate_slack(env, colors, eps, cache)
    info["slack"] = slack.to_dict()
    _boundary(env, colors, "slack")

    vstar = colors < 0
    hier = build_hierarchy(g, vstar, eps, 0, cache)
    kinds = {k: sum(1 for b in hier.blocks if b.kind == k) for k in (SMALL, MEDIUM, LARGE)}
    info["hierarchy"] = {
        "ell": hier.ell,
        "cliques": sum(len(c) for c in hier.cliques),
        "blocks": kinds,
        "dense_nodes": int(((hier.layer >= 1) & (hier.layer <= hier.ell)).sum()),
        "sparse_nodes": int(hier.sparse_mask.sum()),
    }
    if cfg.check_boundaries:
        checked = failed = 0
        for i, cl in enumerate(hier.cliques):
            for c in cl:
                rep = verify_clique_props(g, c, eps.values[i], 0, hier.dense[i])
                checked += 1
                failed += not rep.ok
        info["hierarchy"]["clique_checks"] = {"checked": checked, "failed": failed}

    colors = color_small_medium_2plus(env, hier, colors)
    _boundary(env, colors, "sm2")
    colors = color_small_medium_1(env, hier, colors)
    _boundary(env, colors, "sm1")

    layers2 = list(range(2, hier.ell + 1))
    cl2 = large_clusters(hier, layers2)
    populated = {b.layer for b in hier.blocks if b.kind == LARGE and b.layer >= 2}
    sched2 = schedule_layer2plus(hier, cfg, populated)
    colors, rep2 = color_large_framework(env, hier, colors, cl2, sched2, "large2")
    _boundary(env, colors, "large2")

    cl1 = large_clusters(hier, [1])
    sched1 = schedule_layer1(hier, cfg, n_model)
    colors, rep1 = color_large_framework(env, hier, colors, cl1, sched1, "large1")
    residue = np.concatenate(cl1)[colors[np.concatenate(cl1)] < 0] if cl1 else np.zeros(0, np.int64)
    info["large1_residue"] = int(len(residue))
    colors = low_degree_color(env, colors, residue, stage="large1_residue")
    _boundary(env, colors, "large1")
    info["framework"] = {"large2": rep2.to_dict(), "large1": rep1.to_dict()}
    info["schedules"] = {"large2": _schedule_summary(sched2), "large1": _schedule_summary(sched1)}

    colors = finish_dense_U(env, hier, colors)
    _boundary(env, colors, "dense_u")
    colors = finish_sparse(env, hier, colors)
    _boundary(env, colors, "sparse")

    rest = np.flatnonzero(colors < 0)
    info["final_residue"] = int(len(rest))
    if len(rest):
        colors = low_degree_color(env, colors, rest, stage="safety_net")
    return colors


def _schedule_summary(sched) -> dict:
    out = {}
    for layer in sched.D:
        out[layer] = {
            "D": sched.D[layer][1:], "L": sched.L[layer][1:], "U": sched.U[layer][1:],
            "delta_raw": sched.delta_raw[layer][1:], "delta": sched.delta[layer][1:],
        }
        if sched.t is not None:
            out[layer]["t"] = sched.t[layer][1:]
    return out


def run_pipeline(instance: ListColoringInstance, config: PipelineConfig | None = None) -> tuple[np.ndarray, RunReport]:
    cfg = config or PipelineConfig()
    cfg.validate()
    n = instance.n
    meter = Meter(MpcConfig(max(n, 1), cfg.delta_exp))
    meter.note_global(n + 2 * instance.graph.m + int(instance.palette_sizes.sum()))
    run = _Run(cfg, n)
    floor = cfg.low_degree_floor(n)
    ptrace = ReduceTrace()
    if instance.delta <= floor:
        route, depth = "low_degree", 0
        colors = run.solve(instance, meter)
    else:
        route = "clp"
        depth = reduction_depth(n, instance.delta, cfg.partition())
        colors = color_reduce(instance, cfg.partition(), run.solve, depth, meter, ptrace)
    rep = validate_coloring(instance, PartialColoring(colors))
    valid = {"proper": rep.proper, "feasible": rep.feasible, "complete": rep.complete}
    report = RunReport(
        n=n, m=instance.graph.m, delta=instance.delta, mode=instance.mode, route=route, depth=depth,
        low_degree_floor=floor, space_words=meter.S, total_rounds=meter.total_rounds, peak_words=meter.peak_words,
        round_cap=cfg.round_cap, valid=valid, stages=meter.to_dict()["stages"],
        traces=[t.to_dict() for t in run.traces], instances=run.instances, partition=ptrace.to_json(),
        votes=_vote_summary(run.records, cfg, n), bounds=[], config=cfg.to_dict(),
    )
    report.bounds = bounds_table(report, cfg, n)
    if route == "clp" or any(i.get("route") == "low_degree" for i in run.instances):
        report.notes.append("low-degree stage: Linial-class waves substitute for shattering plus network decomposition")
    return colors, report


def _vote_summary(records: list[VoteRecord], cfg: PipelineConfig, n: int) -> dict:
    fractions = [r.best_count / r.units for r in records if r.units]
    return {
        "count": len(records),
        "all_dominate_mean": all(r.dominates_mean for r in records),
        "max_seed_bits": max((r.seed_bits for r in records), default=0),
        "escalations": sum(1 for r in records if r.seed_bits > cfg.vote_seed_bits),
        "shortfalls": sum(1 for r in records if r.best_count < r.required),
        "min_fraction": min(fractions, default=1.0),
        "required_fraction": cfg.required_fraction(n),
    }


def bounds_table(report: RunReport, cfg: PipelineConfig, n: int) -> list[dict]:
    """Target bound, configured constant and observed margin per quantity."""
    rows = []

    def add(quantity: str, bound: str, constant, observed, margin):
        rows.append({"quantity": quantity, "bound": bound, "constant": constant, "observed": observed, "margin": margin})

    slack = [i["slack"] for i in report.instances if "slack" in i]
    sm = [s["min_slack_margin"] for s in slack if s["min_slack_margin"] is not None]
    add("slack after generation", "slack(v) >= c_slack * eps_v^2 * Delta", cfg.c_slack, None, min(sm) if sm else None)
    p1 = [s["min_p1_margin"] for s in slack if s["min_p1_margin"] is not None]
    add("uncolored neighbors of high-degree nodes", ">= Delta/2 when deg >= 5/6 Delta", 0.5, None, min(p1) if p1 else None)
    psi = [s["psi_min_margin"] for s in slack if s["psi_min_margin"] is not None]
    add("heavy anti-edge neighbors per group", "psi_i >= psi / (96 C^2)", 96 * cfg.C**2, sum(s["psi_violations"] for s in slack), min(psi) if psi else None)
    v = report.votes
    add("happy fraction per vote", "1 - n^-alpha", cfg.alpha, v["min_fraction"], v["min_fraction"] - v["required_fraction"])
    factors = [i["framework"][k]["max_factor"] for i in report.instances if "framework" in i for k in ("large2", "large1")]
    add("framework neighbor factor", "<= ceil(1/alpha)", cfg.C, max(factors, default=0.0), cfg.C - max(factors, default=0.0))
    con = [b["bound"] - b["max_con"] for t in report.traces for b in t["margins"].get("boundaries", [])]
    add("contention at schedule boundaries", "con(v) <= 1/C^(k)", cfg.lam, len(con), min(con) if con else None)
    if report.partition:
        dmax = max((lv.get("max_dprime", 0) for lv in report.partition), default=0)
        ref = n ** (23 * cfg.zeta)
        add("final-level degree", "d*(v) < n^(23 zeta) + O(n^(13 zeta))", cfg.zeta, dmax, ref - dmax)
    add("simulated rounds", "<= round_cap", cfg.round_cap, report.total_rounds, cfg.round_cap - report.total_rounds)
    add("machine words", "<= ceil(n^delta)", cfg.delta_exp, report.peak_words, report.space_words - report.peak_words)
    return _jsonable(rows)
