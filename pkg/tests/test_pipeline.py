import json

import numpy as np
import pytest

from mpccolor.config import PipelineConfig
from mpccolor.instance import Graph, ListColoringInstance, PartialColoring, generate, load_instance, validate_coloring
from mpccolor.pipeline import run_pipeline


def test_complete_bipartite_three_three():
    edges = [(a, b) for a in range(3) for b in range(3, 6)]
    inst = ListColoringInstance(Graph.from_edges(6, edges), [np.arange(4)] * 6, mode="standard")
    colors, rep = run_pipeline(inst, PipelineConfig(depth_offset=8))
    assert validate_coloring(inst, PartialColoring(colors)).ok
    assert rep.ok and rep.route == "clp" and rep.depth == 0
    assert rep.total_rounds > 0 and rep.peak_words <= rep.space_words


def test_edgeless_graph_takes_the_low_degree_route():
    inst = load_instance("1000 0\n", "uniform:1")
    colors, rep = run_pipeline(inst)
    assert rep.route == "low_degree" and rep.ok
    assert (colors == 0).all()


@pytest.mark.parametrize("avg,route", [(1.5, "low_degree"), (40, "clp")])
def test_routing_follows_the_degree_floor(avg, route):
    inst = generate("gnp", {"n": 1000, "avg_degree": avg}, 0)
    cfg = PipelineConfig()
    _, rep = run_pipeline(inst, cfg)
    assert (inst.delta <= cfg.low_degree_floor(inst.n)) == (route == "low_degree")
    assert rep.route == route and rep.ok


def test_reports_are_byte_identical_across_runs():
    inst = generate("clique_planted", {"k": 6, "delta": 30, "noise": 200}, 3)
    a = run_pipeline(inst)
    b = run_pipeline(inst)
    assert (a[0] == b[0]).all()
    assert a[1].to_json() == b[1].to_json()


def test_report_contents():
    inst = generate("gnp", {"n": 2000, "avg_degree": 50}, 4, "relaxed")
    colors, rep = run_pipeline(inst, PipelineConfig(mode="relaxed"))
    assert rep.ok and rep.mode == "relaxed"
    data = json.loads(rep.to_json())
    assert data["total_rounds"] == sum(s["rounds"] for s in data["stages"])
    assert data["peak_words"] <= data["space_words"]
    assert {"partition"} <= set(rep.stage_rounds())
    assert data["votes"]["all_dominate_mean"]
    assert {r["quantity"] for r in data["bounds"]} >= {"simulated rounds", "machine words"}
    assert rep.summary().splitlines()[1].startswith(f"total rounds: {rep.total_rounds}")


def test_run_with_a_tiny_round_cap_still_colors():
    inst = generate("gnp", {"n": 500, "avg_degree": 30}, 1)
    colors, rep = run_pipeline(inst, PipelineConfig(round_cap=5))
    assert rep.ok and not rep.within_round_cap
