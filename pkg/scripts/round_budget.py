"""Per-stage simulated rounds for gnp graphs of growing size at fixed max degree.

    python3 scripts/round_budget.py --delta 64 --sizes 1000 3000 10000
"""

import argparse

from mpccolor.config import PipelineConfig
from mpccolor.instance import generate
from mpccolor.pipeline import run_pipeline


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--delta", type=int, default=64)
    ap.add_argument("--sizes", type=int, nargs="+", default=[1000, 3000, 10_000])
    ap.add_argument("--seed", type=int, default=6)
    args = ap.parse_args()
    cfg = PipelineConfig()
    for n in args.sizes:
        inst = generate("gnp", {"n": n, "avg_degree": 0.625 * args.delta, "max_degree": args.delta}, args.seed)
        _, rep = run_pipeline(inst, cfg)
        stages = " ".join(f"{k}={v}" for k, v in rep.stage_rounds().items())
        flag = "" if rep.within_round_cap else f"  OVER CAP {cfg.round_cap}"
        print(f"n={n:<6} delta={inst.delta:<4} depth={rep.depth} rounds={rep.total_rounds:<5} {stages}{flag}")


if __name__ == "__main__":
    main()
