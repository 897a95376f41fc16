"""Run the acceptance corpus and print one line per instance.

    python3 scripts/run_corpus.py [--out reports/] [--filter gnp]
"""

import argparse
import time
from pathlib import Path

from mpccolor.config import PipelineConfig
from mpccolor.corpus import acceptance_corpus
from mpccolor.pipeline import run_pipeline


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", help="directory for per-instance JSON reports")
    ap.add_argument("--filter", default="", help="substring of the case name")
    args = ap.parse_args()
    out = Path(args.out) if args.out else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    bad = 0
    for i, case in enumerate(acceptance_corpus()):
        if args.filter not in case.name:
            continue
        inst = case.build()
        t = time.perf_counter()
        colors, rep = run_pipeline(inst, PipelineConfig(mode=case.mode))
        bad += not rep.ok
        print(f"{case.name:<72} n={inst.n:<6} delta={inst.delta:<4} route={rep.route:<10} "
              f"rounds={rep.total_rounds:<5} peak={rep.peak_words}/{rep.space_words} ok={rep.ok} "
              f"{time.perf_counter() - t:.1f}s", flush=True)
        if out:
            (out / f"{i:02d}.json").write_text(rep.to_json())
    print(f"{bad} invalid, {time.perf_counter() - t0:.0f}s total")


if __name__ == "__main__":
    main()
