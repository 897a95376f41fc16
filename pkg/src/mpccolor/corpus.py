"""Benchmark corpus shared by the acceptance suite and scripts/run_corpus.py."""

from __future__ import annotations

from dataclasses import dataclass

from .instance import ListColoringInstance, generate


@dataclass(frozen=True)
class Case:
    kind: str
    params: dict
    seed: int
    mode: str

    @property
    def name(self) -> str:
        ps = ",".join(f"{k}={v}" for k, v in sorted(self.params.items()))
        return f"{self.kind}[{ps}]/s{self.seed}/{self.mode}"

    def build(self) -> ListColoringInstance:
        return generate(self.kind, self.params, self.seed, self.mode)


def acceptance_corpus() -> list[Case]:
    shapes = [
        ("gnp", {"n": 1000, "avg_degree": 5}),
        ("gnp", {"n": 1000, "avg_degree": 12}),
        ("gnp", {"n": 1000, "avg_degree": 40}),
        ("gnp", {"n": 1000, "avg_degree": 100}),
        ("gnp", {"n": 1000, "avg_degree": 200, "max_degree": 256}),
        ("gnp", {"n": 10_000, "avg_degree": 8}),
        ("gnp", {"n": 10_000, "avg_degree": 40, "max_degree": 64}),
        ("gnp", {"n": 10_000, "avg_degree": 120}),
        ("clique_planted", {"k": 30, "delta": 32, "noise": 300}),
        ("clique_planted", {"k": 8, "delta": 120, "noise": 500}),
        ("clique_planted", {"k": 150, "delta": 64, "noise": 3000}),
        ("cluster_testbed", {"eps": 0.1, "delta": 60, "cliques": 10, "sparse": 400}),
        ("cluster_testbed", {"eps": 0.1, "delta": 160, "cliques": 5, "sparse": 300}),
        ("cluster_testbed", {"eps": 0.15, "delta": 100, "cliques": 80, "sparse": 2000}),
        ("grid", {"rows": 32, "cols": 32, "diagonals": True}),
        ("grid", {"rows": 100, "cols": 100, "diagonals": True}),
    ]
    cases = []
    for i, (kind, params) in enumerate(shapes):
        for mode in ("standard", "relaxed"):
            cases.append(Case(kind, params, i, mode))
    # second seeds for the mid-sized shapes
    for i in (1, 2, 3, 8, 9, 11, 12, 14, 15):
        kind, params = shapes[i]
        cases.append(Case(kind, params, 100 + i, "standard" if i % 2 else "relaxed"))
    for i in (0, 1, 2, 3, 4, 6, 8, 9, 11, 12):
        kind, params = shapes[i]
        cases.append(Case(kind, params, 200 + i, "relaxed" if i % 2 else "standard"))
    return cases
