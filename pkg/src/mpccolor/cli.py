"""Command line: gen, run, verify, report.

Exit codes: 0 success, 1 invalid input or invalid coloring, 2 stage failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import ConfigError, PipelineConfig
from .instance import (
    BadParams, ParseError, PaletteError, format_coloring, format_edges, format_palettes, generate,
    load_instance, parse_coloring, validate_coloring, PartialColoring, DuplicateEdge,
)
from .pipeline import run_pipeline
from .stages import StageFailed

INPUT_ERRORS = (ParseError, PaletteError, DuplicateEdge, BadParams, ConfigError, OSError)


def _param(text: str) -> tuple[str, object]:
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mpccolor", description="Deterministic (Delta+1) list coloring in a simulated low-space MPC runtime")
    sub = p.add_subparsers(dest="cmd", required=True)

    g = sub.add_parser("gen", help="generate an instance")
    g.add_argument("--kind", required=True, choices=["gnp", "clique_planted", "grid", "cluster_testbed"])
    for name, typ in [("n", int), ("p", float), ("avg-degree", float), ("max-degree", int), ("k", int), ("delta", int),
                      ("noise", int), ("rows", int), ("cols", int), ("eps", float), ("cliques", int), ("sparse", int)]:
        g.add_argument(f"--{name}", type=typ)
    g.add_argument("--param", type=_param, action="append", default=[], help="extra generator parameter key=value")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--mode", choices=["standard", "relaxed"], default="standard")
    g.add_argument("-o", "--output", required=True)
    g.add_argument("--palettes-out", help="also write the palettes file")

    r = sub.add_parser("run", help="color an instance")
    r.add_argument("-i", "--input", required=True)
    r.add_argument("--palette", default=None, help="uniform:K or a palette file (default uniform:Delta+1)")
    r.add_argument("-o", "--output")
    r.add_argument("--report")
    r.add_argument("--config")
    r.add_argument("--delta-exp", type=float)
    r.add_argument("--alpha", type=float)
    r.add_argument("--zeta", type=float)
    r.add_argument("--seed-bits", type=int)
    r.add_argument("--round-cap", type=int)
    r.add_argument("--mode", choices=["standard", "relaxed"])

    v = sub.add_parser("verify", help="check a coloring")
    v.add_argument("-i", "--input", required=True)
    v.add_argument("-c", "--coloring", required=True)
    v.add_argument("--palette", default=None)
    v.add_argument("--mode", choices=["standard", "relaxed", "list"], default="list")

    rep = sub.add_parser("report", help="print a run report")
    rep.add_argument("path")
    rep.add_argument("--summary", action="store_true")
    return p


def _config(args) -> PipelineConfig:
    cfg = PipelineConfig.load(args.config) if args.config else PipelineConfig()
    changes = {}
    for arg, key in [("delta_exp", "delta_exp"), ("alpha", "alpha"), ("zeta", "zeta"), ("seed_bits", "vote_seed_bits"), ("round_cap", "round_cap"), ("mode", "mode")]:
        val = getattr(args, arg)
        if val is not None:
            changes[key] = val
    return cfg.replace(**changes) if changes else cfg


def _load(path: str, palette: str | None, mode: str):
    text = Path(path).read_text()
    if palette is None:
        from .instance import parse_edges

        palette = f"uniform:{parse_edges(text).max_degree + 1}"
    return load_instance(text, palette, mode=mode)


def cmd_gen(args) -> int:
    keys = {"n": "n", "p": "p", "avg_degree": "avg_degree", "max_degree": "max_degree", "k": "k", "delta": "delta", "noise": "noise",
            "rows": "rows", "cols": "cols", "eps": "eps", "cliques": "cliques", "sparse": "sparse"}
    params = {k: getattr(args, a) for a, k in keys.items() if getattr(args, a) is not None}
    params.update(dict(args.param))
    inst = generate(args.kind, params, args.seed, args.mode)
    Path(args.output).write_text(format_edges(inst.graph))
    if args.palettes_out:
        Path(args.palettes_out).write_text(format_palettes(inst))
    print(f"wrote n={inst.n} m={inst.graph.m} delta={inst.delta} to {args.output}")
    return 0


def cmd_run(args) -> int:
    cfg = _config(args)
    inst = _load(args.input, args.palette, cfg.mode)
    colors, report = run_pipeline(inst, cfg)
    if args.output:
        Path(args.output).write_text(format_coloring(PartialColoring(colors)))
    if args.report:
        Path(args.report).write_text(report.to_json())
    print(report.summary())
    if not report.within_round_cap:
        print(f"warning: {report.total_rounds} rounds exceed the cap of {report.round_cap}", file=sys.stderr)
    return 0 if report.ok else 1


def cmd_verify(args) -> int:
    inst = _load(args.input, args.palette, args.mode)
    col = parse_coloring(Path(args.coloring).read_text(), inst.n)
    rep = validate_coloring(inst, col)
    print(f"proper={rep.proper} feasible={rep.feasible} complete={rep.complete}")
    for u, w in rep.conflict_edges[:10]:
        print(f"  conflict on edge {u}-{w}")
    for v in rep.infeasible_nodes[:10]:
        print(f"  node {v} colored outside its palette")
    if rep.uncolored_nodes:
        print(f"  {len(rep.uncolored_nodes)} uncolored nodes")
    return 0 if rep.ok else 1


def cmd_report(args) -> int:
    data = json.loads(Path(args.path).read_text())
    if args.summary:
        print(f"total rounds: {data['total_rounds']}")
        print(f"peak words: {data['peak_words']}")
        print(f"space words: {data['space_words']}")
        print("valid: " + " ".join(f"{k}={v}" for k, v in data["valid"].items()))
        for s in data["stages"]:
            print(f"  {s['stage']}: rounds={s['rounds']} peak={s['peak_words']}")
    else:
        print(json.dumps(data, indent=1, sort_keys=True))
    return 0


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    handler = {"gen": cmd_gen, "run": cmd_run, "verify": cmd_verify, "report": cmd_report}[args.cmd]
    try:
        return handler(args)
    except StageFailed as exc:
        print(f"stage failed: {exc}", file=sys.stderr)
        return 2
    except INPUT_ERRORS as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except (KeyError, ValueError) as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
