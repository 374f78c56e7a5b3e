"""Stage wiring shared by the CLI, the evaluation runner and the demos.

Every stage reads and writes a JSON artifact in the output directory, so
running the stages one by one gives the same files as a full run.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass
from pathlib import Path

from .config import RunConfig
from .context import ContextCache, RtlCodeMap, load_spec_docs, prefetch
from .errors import CexRootError
from .fixes import EmptyEnsemble, EnsembleResult, FixContext, ensemble
from .graph import CausalGraph, SignalEvent, build_trace_tree, consolidate
from .llm import Cassette, Gateway, HttpTransport, TokenBudget
from .report import build_report, render_markdown
from .rover import RoverConfig, RoverResult, explore
from .scanner import ScanConfig, ScanResult, scan

log = logging.getLogger(__name__)

GRAPH_FILE = "graph.json"
SCAN_FILE = "scan.json"
NARRATIVES_FILE = "narratives.json"
FIXES_FILE = "fixes.json"
REPORT_MD = "report.md"
REPORT_JSON = "report.json"


def write_json(path: Path, data) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")


def read_json(path: Path):
    if not path.is_file():
        raise CexRootError(f"missing artifact {path}; run the earlier stage first")
    return json.loads(path.read_text(encoding="utf-8"))


@dataclass
class Inputs:
    rtl: RtlCodeMap
    spec_docs: dict[str, str]
    scenario: str = ""

    @classmethod
    def from_paths(cls, rtl_dir=None, spec_dir=None, scenario=None) -> "Inputs":
        rtl = RtlCodeMap.from_dir(rtl_dir) if rtl_dir else RtlCodeMap({})
        text = Path(scenario).read_text(encoding="utf-8") if scenario else ""
        return cls(rtl, load_spec_docs(spec_dir), text.strip())


def make_gateway(config: RunConfig, transport=None) -> Gateway:
    cassette = None
    if config.mode == "replay":
        cassette = Cassette.load(config.cassette)
    elif config.mode == "record":
        p = Path(config.cassette)
        cassette = Cassette.load(p) if p.is_file() else Cassette()
    if config.mode != "replay" and transport is None:
        transport = HttpTransport()
    return Gateway(
        transport,
        mode=config.mode,
        cassette=cassette,
        budget=TokenBudget(config.token_budget),
        max_in_flight=config.max_in_flight,
        strict=config.strict_replay,
    )


def save_cassette(gateway: Gateway, config: RunConfig) -> None:
    if gateway.mode == "record":
        gateway.cassette.save(config.cassette)


def problem_description(graph: CausalGraph, scenario: str) -> str:
    if scenario.strip():
        return scenario.strip()
    root = graph.event(graph.root)
    return f"Property {root.signal} fails at cycle {root.cycle} (value {root.value})."


# ---------------------------------------------------------------------------
# stages


def stage_graph(oracle, root: SignalEvent, config: RunConfig) -> CausalGraph:
    tree = build_trace_tree(oracle, root, config.trace_depth, config.max_tree_nodes)
    return consolidate(tree)


def build_cache(graph: CausalGraph, inputs: Inputs, config: RunConfig) -> ContextCache:
    signals = {ev.signal for ev in graph.nodes.values()}
    return prefetch(signals, inputs.rtl, inputs.spec_docs, config.fuzzy_threshold)


def stage_scan(graph, cache, inputs: Inputs, gateway, config: RunConfig) -> ScanResult:
    return scan(graph, cache, gateway, ScanConfig(inputs.scenario, config.suspicion_floor))


def rover_config(config: RunConfig, description: str) -> RoverConfig:
    return RoverConfig(
        min_narratives=config.min_narratives,
        frontier_cap=config.frontier_cap,
        weak_confidence=config.weak_confidence,
        weak_after_iters=config.weak_after_iters,
        convergence_confidence=config.convergence_confidence,
        max_iterations=config.max_iterations,
        select_targets_max=config.select_targets_max,
        frontier_listing_max=config.frontier_listing_max,
        ranking_mode=config.ranking_mode,
        problem_description=description,
    )


def stage_rove(graph, cache, scan_result, inputs: Inputs, gateway, config: RunConfig) -> RoverResult | None:
    if not scan_result.suspicious:
        log.info("no suspicious nodes; skipping narrative exploration")
        return None
    return explore(graph, cache, scan_result, gateway, rover_config(config, problem_description(graph, inputs.scenario)))


def stage_fix(graph, scan_result, rover, inputs: Inputs, gateway, config: RunConfig) -> EnsembleResult:
    if rover is None:
        return EnsembleResult([], {}, {"all": "skipped: no suspicious nodes"})
    ctx = FixContext(
        problem_description=problem_description(graph, inputs.scenario),
        rtl=inputs.rtl,
        scan=scan_result,
        hypotheses=tuple(rover.ranked()),
    )
    try:
        return ensemble(ctx, gateway, config.fix_retry_limit)
    except EmptyEnsemble as exc:
        log.warning("%s", exc)
        return EnsembleResult([], {}, {"all": str(exc)})


def stage_report(graph, cache, scan_result, rover, fixes: EnsembleResult, calls: dict, config: RunConfig, wall: float | None):
    meta = {"llm_calls": sum(calls.values())}
    meta.update({f"llm_calls_{k}": v for k, v in sorted(calls.items())})
    meta["scan_batches"] = scan_result.batches_issued if scan_result else 0
    if config.mode != "replay" and wall is not None:
        meta["wall_time_s"] = f"{wall:.2f}"
    return build_report(graph, scan_result, rover, fixes.fixes, cache, meta)


# ---------------------------------------------------------------------------
# artifacts


def save_graph(out: Path, graph: CausalGraph) -> None:
    write_json(out / GRAPH_FILE, {"graph": graph.to_dict(), "stats": graph.stats().as_dict()})


def load_graph(out: Path) -> CausalGraph:
    return CausalGraph.from_dict(read_json(out / GRAPH_FILE)["graph"])


def save_scan(out: Path, graph, result: ScanResult) -> None:
    write_json(out / SCAN_FILE, result.to_dict(graph))


def load_scan(out: Path) -> ScanResult:
    return ScanResult.from_dict(read_json(out / SCAN_FILE))


def save_narratives(out: Path, rover: RoverResult | None, calls: int) -> None:
    data = rover.to_dict() if rover else {"skipped": "no suspicious nodes"}
    data["calls"] = calls
    write_json(out / NARRATIVES_FILE, data)


def load_narratives(out: Path) -> tuple[RoverResult | None, int]:
    d = read_json(out / NARRATIVES_FILE)
    return (None if "skipped" in d else RoverResult.from_dict(d)), int(d.get("calls", 0))


def save_fixes(out: Path, result: EnsembleResult, rtl: RtlCodeMap, calls: int) -> None:
    data = result.to_dict(rtl)
    data["calls"] = calls
    write_json(out / FIXES_FILE, data)


def load_fixes(out: Path) -> tuple[EnsembleResult, int]:
    d = read_json(out / FIXES_FILE)
    return EnsembleResult.from_dict(d), int(d.get("calls", 0))


def write_report(out: Path, report) -> str:
    md = render_markdown(report)
    out.mkdir(parents=True, exist_ok=True)
    (out / REPORT_MD).write_text(md, encoding="utf-8")
    (out / REPORT_JSON).write_text(report.to_json(), encoding="utf-8")
    return md


@dataclass
class RunResult:
    graph: CausalGraph
    scan: ScanResult
    rover: RoverResult | None
    fixes: EnsembleResult
    markdown: str
    out_dir: Path


def run_all(oracle, root: SignalEvent, inputs: Inputs, gateway: Gateway, config: RunConfig, out_dir: str | Path) -> RunResult:
    """Graph, scan, rove, fix and report, writing every artifact to ``out_dir``."""
    started = time.monotonic()
    out = Path(out_dir)
    graph = stage_graph(oracle, root, config)
    save_graph(out, graph)
    cache = build_cache(graph, inputs, config)

    def counted(fn, *args):
        before = gateway.stats.calls
        result = fn(*args)
        return result, gateway.stats.calls - before

    scan_result, scan_calls = counted(stage_scan, graph, cache, inputs, gateway, config)
    scan_result.calls = scan_calls
    save_scan(out, graph, scan_result)
    rover, rove_calls = counted(stage_rove, graph, cache, scan_result, inputs, gateway, config)
    save_narratives(out, rover, rove_calls)
    fixes, fix_calls = counted(stage_fix, graph, scan_result, rover, inputs, gateway, config)
    save_fixes(out, fixes, inputs.rtl, fix_calls)
    save_cassette(gateway, config)
    calls = {"scan": scan_calls, "rove": rove_calls, "fix": fix_calls}
    report = stage_report(graph, cache, scan_result, rover, fixes, calls, config, time.monotonic() - started)
    md = write_report(out, report)
    return RunResult(graph, scan_result, rover, fixes, md, out)

