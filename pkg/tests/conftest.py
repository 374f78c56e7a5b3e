import random
import shutil
from pathlib import Path

import pytest

from cexroot.graph import SignalEvent, TraceTree

ACC = Path(__file__).resolve().parents[1] / "src" / "cexroot" / "data" / "corpus" / "accumulator"
GOLDEN = Path(__file__).resolve().parent / "golden"


@pytest.fixture
def acc_dir():
    return ACC


@pytest.fixture
def acc_copy(tmp_path):
    dst = tmp_path / "accumulator"
    shutil.copytree(ACC, dst)
    return dst


class MapOracle:
    """parents_of over a plain ``key -> [SignalEvent]`` mapping."""

    def __init__(self, table):
        self.table = table
        self.calls = 0

    def parents_of(self, key):
        self.calls += 1
        return list(self.table[key])


def random_tree(rng: random.Random, max_nodes: int = 200, n_signals: int = 12, max_cycle: int = 6) -> TraceTree:
    """Random trace tree whose events recur across branches.

    Values are a function of (signal, cycle) so duplicates never conflict.
    """
    n = rng.randint(1, max_nodes)

    def event(sig: int, cyc: int) -> SignalEvent:
        return SignalEvent(f"s{sig}", cyc, f"1'b{(sig * 7 + cyc) % 2}")

    events = [event(0, max_cycle)]
    children: dict[int, list[int]] = {}
    for i in range(1, n):
        parent = rng.randrange(len(events))
        pc = events[parent].cycle
        # causes sit at the same or an earlier cycle; same-cycle needs a smaller signal id to stay acyclic
        cyc = rng.randint(max(0, pc - 2), pc)
        top = int(events[parent].signal[1:]) if cyc == pc else n_signals
        if top == 0:
            cyc = pc - 1 if pc > 0 else None
            top = n_signals
        if cyc is None:
            continue
        sig = rng.randrange(top)
        if any(events[c].key == event(sig, cyc).key for c in children.get(parent, [])):
            continue
        events.append(event(sig, cyc))
        children.setdefault(parent, []).append(len(events) - 1)
    return TraceTree(events=events, children=children, depth_limit=max_cycle + 1)


def acc_stage_inputs(problem_dir: Path = ACC):
    """Graph, inputs, cache and config for the accumulator, as ``run`` builds them."""
    from cexroot import pipeline as pl
    from cexroot.config import RunConfig
    from cexroot.oracle import load_dump

    config = RunConfig()
    oracle = load_dump(problem_dir / "dump.json")
    graph = pl.stage_graph(oracle, oracle.root, config)
    inputs = pl.Inputs.from_paths(problem_dir / "rtl", problem_dir / "spec", problem_dir / "scenario.txt")
    return graph, inputs, pl.build_cache(graph, inputs, config), config


def cassette_responses(problem_dir: Path, tag: str) -> list[str]:
    import json

    lines = (problem_dir / "cassette.jsonl").read_text(encoding="utf-8").splitlines()
    return [r["response"] for r in map(json.loads, lines) if r["tag"] == tag]


def acc_replay(out_dir, problem_dir: Path = ACC, **overrides):
    """Full pipeline over the accumulator under its bundled cassette."""
    from cexroot import pipeline as pl
    from cexroot.config import RunConfig
    from cexroot.oracle import load_dump

    config = RunConfig(mode="replay", cassette=str(problem_dir / "cassette.jsonl"), **overrides)
    oracle = load_dump(problem_dir / "dump.json")
    inputs = pl.Inputs.from_paths(problem_dir / "rtl", problem_dir / "spec", problem_dir / "scenario.txt")
    return pl.run_all(oracle, oracle.root, inputs, pl.make_gateway(config), config, out_dir)


# acceptance criteria report one line each; the lines are repeated in the terminal summary
CRITERIA_LINES: list[str] = []


@pytest.fixture
def criterion():
    def report(name: str, ok: bool, detail: str = "") -> bool:
        line = f"{'PASS' if ok else 'FAIL'}  {name}" + (f"  ({detail})" if detail else "")
        print(line)
        CRITERIA_LINES.append(line)
        return ok

    return report


def pytest_terminal_summary(terminalreporter):
    if CRITERIA_LINES:
        terminalreporter.section("acceptance criteria")
        for line in CRITERIA_LINES:
            terminalreporter.write_line(line)


def acc_args(*extra):
    """CLI input flags for the accumulator problem."""
    return ["--rtl", str(ACC / "rtl"), "--spec", str(ACC / "spec"), "--scenario", str(ACC / "scenario.txt"), *extra]
