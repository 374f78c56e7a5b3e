"""Benchmark corpus layout and the per-problem evaluation loop.

A corpus is a directory of problem directories, each holding::

    dump.json        causality dump
    rtl/             RTL sources
    spec/            specification documents (optional)
    scenario.txt     failure scenario (optional)
    golden.txt       ground-truth root cause
    verifier.json    mock outcomes by fix signature (optional)
    cassette.jsonl   recorded model replies (for replay runs)
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from pathlib import Path

from .config import RunConfig
from .evaluation import (
    ProblemMetrics,
    TableVerifier,
    aggregate,
    judge_hypothesis,
    verify_fixes,
)
from .errors import EvalError
from .oracle import load_dump
from .pipeline import Inputs, make_gateway, problem_description, run_all, write_json

log = logging.getLogger(__name__)

# cassette placeholder meaning "use each problem's own cassette.jsonl"
PER_PROBLEM = "<per-problem>"


@dataclass(frozen=True)
class Problem:
    name: str
    root: Path

    @property
    def dump(self) -> Path:
        return self.root / "dump.json"

    @property
    def rtl_dir(self) -> Path:
        return self.root / "rtl"

    @property
    def spec_dir(self) -> Path | None:
        p = self.root / "spec"
        return p if p.is_dir() else None

    @property
    def scenario(self) -> Path | None:
        p = self.root / "scenario.txt"
        return p if p.is_file() else None

    @property
    def cassette(self) -> Path:
        return self.root / "cassette.jsonl"

    @property
    def verifier(self) -> Path:
        return self.root / "verifier.json"

    def golden(self) -> str:
        return (self.root / "golden.txt").read_text(encoding="utf-8").strip()

    def inputs(self) -> Inputs:
        return Inputs.from_paths(self.rtl_dir, self.spec_dir, self.scenario)


def load_problem(path: str | Path) -> Problem:
    p = Path(path)
    for need in ("dump.json", "rtl", "golden.txt"):
        if not (p / need).exists():
            raise EvalError(f"problem {p.name} lacks {need}")
    return Problem(p.name, p)


def discover(corpus: str | Path) -> list[Problem]:
    root = Path(corpus)
    if (root / "dump.json").is_file():
        return [load_problem(root)]
    probs = [load_problem(d) for d in sorted(root.iterdir()) if d.is_dir() and (d / "dump.json").is_file()]
    if not probs:
        raise EvalError(f"no problems found under {root}")
    return probs


def evaluate_problem(problem: Problem, config: RunConfig, out_dir: Path, transport=None, k_max: int = 5) -> ProblemMetrics:
    if config.mode != "live" and config.cassette in (None, PER_PROBLEM):
        config = replace(config, cassette=str(problem.cassette))
    gateway = make_gateway(config, transport)
    oracle = load_dump(problem.dump)
    inputs = problem.inputs()
    result = run_all(oracle, oracle.root, inputs, gateway, config, out_dir)
    judged: list[float | None] = []
    golden = problem.golden()
    description = problem_description(result.graph, inputs.scenario)
    for rank, h in enumerate(result.rover.ranked() if result.rover else [], 1):
        text = f"{h.title}\n{h.statement}\n" + "\n".join(
            [f"Cycle {e.cycle}: {e.description}" for e in h.timeline] + [f"- {x}" for x in h.evidence_for]
        )
        scores = judge_hypothesis(text, golden, rank, gateway, description)
        judged.append(None if scores is None else scores.overall)
    outcomes: list[str] = []
    if result.fixes.fixes and problem.verifier.is_file():
        verifier = TableVerifier.load(problem.verifier)
        outcomes = verify_fixes(result.fixes.fixes, verifier, problem.rtl_dir, problem.name, k_max).outcomes
    if gateway.mode == "record":
        gateway.cassette.save(config.cassette)
    metrics = ProblemMetrics(problem.name, judged, outcomes)
    write_json(out_dir / "metrics.json", metrics.to_dict())
    return metrics


def evaluate_corpus(corpus: str | Path, config: RunConfig, out_dir: str | Path, method: str = "cexroot", transport=None):
    out = Path(out_dir)
    problems = [evaluate_problem(p, config, out / p.name, transport) for p in discover(corpus)]
    row = aggregate(problems, method, config.binary_ndcg, config.mrr_threshold)
    row["missing_judgements"] = sum(p.missing_judgements for p in problems)
    return problems, row
