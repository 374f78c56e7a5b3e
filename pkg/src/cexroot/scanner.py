"""Graph scanner: level-ordered, token-budgeted batch analysis of every node.

Each prompt forces balanced for-and-against argumentation; the parser
rejects analyses that do not carry at least two bullets on each side.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

from . import prompts
from .context import ContextCache, lookup
from .errors import ScanError
from .graph import CausalGraph, parse_node_key
from .llm import Gateway, GenerationRequest, TokenBudget, count_tokens
from .parsing import bullets, extract_json, section

log = logging.getLogger(__name__)

DEFAULT_SUSPICION_FLOOR = 0.5
FOR_SECTION = "Arguments FOR Being Suspicious"
AGAINST_SECTION = "Arguments AGAINST Being Suspicious"
MIN_BULLETS = 2
NO_SCENARIO = "(none provided)"


class SingleNodeOverBudget(ScanError):
    pass


class Unparseable(ScanError):
    pass


class AnalysisError(ScanError):
    """Per-node parse problem; carried as a value in parse results."""

    def __init__(self, node_key: str, message: str):
        super().__init__(f"{node_key}: {message}")
        self.node_key = node_key


class MissingAnalysis(AnalysisError):
    def __init__(self, node_key: str):
        super().__init__(node_key, "no analysis in reply")


class SchemaViolation(AnalysisError):
    def __init__(self, node_key: str, field_name: str, detail: str = ""):
        super().__init__(node_key, f"schema violation in {field_name!r}" + (f": {detail}" if detail else ""))
        self.field = field_name


class MissingForAgainst(AnalysisError):
    pass


@dataclass(frozen=True)
class NodeAnalysis:
    node_key: str
    is_suspicious: bool
    is_key_event: bool
    suspicion_score: float
    importance_score: float
    causal_validity: Mapping[str, bool]
    analysis_markdown: str
    model_flagged: bool = False  # raw is_suspicious from the reply, before the floor

    @property
    def arguments_for(self) -> list[str]:
        return bullets(section(self.analysis_markdown, FOR_SECTION))

    @property
    def arguments_against(self) -> list[str]:
        return bullets(section(self.analysis_markdown, AGAINST_SECTION))

    def verdict(self) -> str:
        return "SUSPICIOUS" if self.is_suspicious else "normal"

    def summary_line(self) -> str:
        return f"- {self.node_key}: {self.verdict()} (suspicion {self.suspicion_score:.2f})"

    def to_dict(self) -> dict:
        return {
            "node_key": self.node_key,
            "is_suspicious": self.is_suspicious,
            "is_key_event": self.is_key_event,
            "suspicion_score": self.suspicion_score,
            "importance_score": self.importance_score,
            "causal_validity": dict(sorted(self.causal_validity.items())),
            "analysis_markdown": self.analysis_markdown,
            "model_flagged": self.model_flagged,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NodeAnalysis":
        return cls(
            d["node_key"],
            bool(d["is_suspicious"]),
            bool(d["is_key_event"]),
            float(d["suspicion_score"]),
            float(d["importance_score"]),
            {k: bool(v) for k, v in d.get("causal_validity", {}).items()},
            d["analysis_markdown"],
            bool(d.get("model_flagged", d["is_suspicious"])),
        )


@dataclass
class ScanResult:
    suspicious: list[str]
    analyses: dict[str, NodeAnalysis]
    batches_issued: int
    unanalyzed: dict[str, str] = field(default_factory=dict)
    batches: list[list[str]] = field(default_factory=list)
    calls: int = 0

    def score(self, key: str) -> float:
        a = self.analyses.get(key)
        return a.suspicion_score if a else 0.0

    def to_dict(self, graph: CausalGraph) -> dict:
        records = []
        for key in graph.ordered_keys():
            ev = graph.event(key)
            rec = {"key": key, "signal": ev.signal, "cycle": ev.cycle, "value": ev.value}
            if key in self.analyses:
                rec["status"] = "analyzed"
                rec.update(self.analyses[key].to_dict())
                del rec["node_key"]
            else:
                rec["status"] = "unanalyzed"
                rec["error"] = self.unanalyzed.get(key, "not scanned")
            records.append(rec)
        return {
            "suspicious": list(self.suspicious),
            "batches_issued": self.batches_issued,
            "calls": self.calls,
            "batches": [list(b) for b in self.batches],
            "nodes": records,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScanResult":
        analyses, unanalyzed = {}, {}
        for rec in d["nodes"]:
            if rec["status"] == "analyzed":
                analyses[rec["key"]] = NodeAnalysis.from_dict({**rec, "node_key": rec["key"]})
            else:
                unanalyzed[rec["key"]] = rec.get("error", "")
        return cls(
            suspicious=list(d["suspicious"]),
            analyses=analyses,
            batches_issued=int(d["batches_issued"]),
            unanalyzed=unanalyzed,
            batches=[list(b) for b in d.get("batches", [])],
            calls=int(d.get("calls", 0)),
        )


@dataclass(frozen=True)
class ScanConfig:
    scenario: str = ""
    suspicion_floor: float = DEFAULT_SUSPICION_FLOOR


# ---------------------------------------------------------------------------
# batching


def binary_search_max_batch(
    nodes: Sequence,
    budget: TokenBudget | int,
    prompt_builder: Callable[[Sequence], str],
    counter: Callable[[str], int] = count_tokens,
) -> int:
    """Largest prefix length of ``nodes`` whose built prompt fits ``budget``.

    Assumes prompt size is non-decreasing in the prefix length. After the
    single-node probe it builds at most ``ceil(log2 n) + 1`` prompts.
    """
    if not nodes:
        raise ValueError("nodes must be non-empty")
    limit = budget.max_prompt_tokens if isinstance(budget, TokenBudget) else int(budget)

    def fits(n: int) -> bool:
        return counter(prompt_builder(nodes[:n])) <= limit

    if not fits(1):
        raise SingleNodeOverBudget("a single node's prompt exceeds the token budget")
    n = len(nodes)
    if n == 1 or fits(n):
        return n
    lo, hi = 1, n  # fits(lo) and not fits(hi)
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if fits(mid):
            lo = mid
        else:
            hi = mid
    return lo


# ---------------------------------------------------------------------------
# prompt construction


def batch_ids(batch: Sequence[str]) -> dict[str, str]:
    return {key: f"n{i}" for i, key in enumerate(batch, 1)}


def _node_context_block(
    i: int,
    key: str,
    graph: CausalGraph,
    cache: ContextCache,
    prior: Mapping[str, NodeAnalysis],
) -> str:
    ev = graph.event(key)
    ctx = lookup(cache, ev.signal)
    lines = [f"#### CONTEXT {i}", f"Node n{i}: {ev.signal} at cycle {ev.cycle} = {ev.value}"]
    causes = graph.causes(key)
    if causes:
        lines.append("Parent analyses:")
        for c in causes:
            a = prior.get(c)
            lines.append(a.summary_line() if a else f"- {c}: not yet analyzed")
    lines.append("RTL:")
    lines.append(ctx.rtl_text())
    lines.append("Specification:")
    lines.append(ctx.spec_text())
    return "\n".join(lines)


def build_scan_prompt(
    batch: Sequence[str],
    graph: CausalGraph,
    cache: ContextCache,
    scenario: str,
    prior: Mapping[str, NodeAnalysis] | None = None,
) -> str:
    prior = prior or {}
    for key in batch:
        if key not in graph:
            raise ScanError(f"{key} is not a node of the graph")
    ids = batch_ids(batch)
    rows = []
    for key in batch:
        ev = graph.event(key)
        rows.append(f"| {ids[key]} | {ev.signal} | {ev.cycle} | {ev.value} |")
    label = lambda k: f"{ids[k]} ({k})" if k in ids else k  # noqa: E731
    edges = []
    for key in batch:
        for cause in graph.causes(key):
            edges.append(f"{label(cause)} -> {label(key)}")
    contexts = [_node_context_block(i, key, graph, cache, prior) for i, key in enumerate(batch, 1)]
    head = prompts.render(
        prompts.SCAN_HEADER,
        scenario_description=scenario.strip() or NO_SCENARIO,
        design_overview_content=cache.global_context.get("design_overview", "(none provided)"),
        specification_content=cache.global_context.get("specification", "(none provided)"),
        node_table_rows="\n".join(rows),
        edge_list="\n".join(edges) if edges else "(no edges: these nodes have no recorded causes)",
        node_contexts="\n\n".join(contexts),
    )
    return head + "\n" + prompts.SCAN_INSTRUCTIONS


# ---------------------------------------------------------------------------
# reply parsing


def _fraction(node: str, rec: dict, name: str) -> float:
    v = rec.get(name)
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise SchemaViolation(node, name, "expected a number")
    if not 0.0 <= float(v) <= 1.0:
        raise SchemaViolation(node, name, f"{v} outside [0, 1]")
    return float(v)


def _flag(node: str, rec: dict, name: str) -> bool:
    v = rec.get(name)
    if not isinstance(v, bool):
        raise SchemaViolation(node, name, "expected a boolean")
    return v


def _resolve_parent(ref: str, ids_to_keys: Mapping[str, str]) -> str:
    ref = ref.strip()
    head = ref.split(" ", 1)[0]
    if head in ids_to_keys:
        return ids_to_keys[head]
    if "(" in ref and ref.endswith(")"):
        return ref[ref.index("(") + 1 : -1].strip()
    return ref


def _parse_node(key: str, rec, ids_to_keys: Mapping[str, str], floor: float) -> NodeAnalysis:
    if not isinstance(rec, dict):
        raise SchemaViolation(key, "node_id", "value must be an object")
    suspicious = _flag(key, rec, "is_suspicious")
    key_event = _flag(key, rec, "is_key_event")
    score = _fraction(key, rec, "suspicion_score")
    importance = _fraction(key, rec, "importance_score")
    cv = rec.get("causal_validity", {})
    if not isinstance(cv, dict) or not all(isinstance(v, bool) for v in cv.values()):
        raise SchemaViolation(key, "causal_validity", "expected an object of booleans")
    md = rec.get("analysis")
    if not isinstance(md, str) or not md.strip():
        raise SchemaViolation(key, "analysis", "expected markdown text")
    n_for = len(bullets(section(md, FOR_SECTION)))
    n_against = len(bullets(section(md, AGAINST_SECTION)))
    if n_for < MIN_BULLETS or n_against < MIN_BULLETS:
        raise MissingForAgainst(key, f"needs >= {MIN_BULLETS} FOR and AGAINST bullets, got {n_for}/{n_against}")
    return NodeAnalysis(
        node_key=key,
        is_suspicious=suspicious and score >= floor,
        is_key_event=key_event,
        suspicion_score=score,
        importance_score=importance,
        causal_validity={_resolve_parent(k, ids_to_keys): v for k, v in cv.items()},
        analysis_markdown=md.strip(),
        model_flagged=suspicious,
    )


def parse_scan_response(
    text: str,
    batch: Sequence[str],
    suspicion_floor: float = DEFAULT_SUSPICION_FLOOR,
) -> dict[str, NodeAnalysis | AnalysisError]:
    """Map every batch node to its analysis or to the error explaining why not.

    Raises Unparseable when the reply holds no JSON object at all.
    """
    try:
        obj = extract_json(text, dict)
    except ValueError as exc:
        raise Unparseable(str(exc)) from None
    ids = batch_ids(batch)
    ids_to_keys = {v: k for k, v in ids.items()}
    out: dict[str, NodeAnalysis | AnalysisError] = {}
    for key in batch:
        rec = obj.get(ids[key], obj.get(key))
        if rec is None:
            out[key] = MissingAnalysis(key)
            continue
        try:
            out[key] = _parse_node(key, rec, ids_to_keys, suspicion_floor)
        except AnalysisError as exc:
            out[key] = exc
    return out


# ---------------------------------------------------------------------------
# the scan loop


def _level_batches(level, build, gateway: Gateway) -> list[list[str]]:
    remaining = list(level)
    out = []
    while remaining:
        size = binary_search_max_batch(remaining, gateway.budget, build, gateway.count_tokens)
        out.append(remaining[:size])
        remaining = remaining[size:]
    return out


def scan(
    graph: CausalGraph,
    cache: ContextCache,
    gateway: Gateway,
    config: ScanConfig | None = None,
) -> ScanResult:
    config = config or ScanConfig()
    analyses: dict[str, NodeAnalysis] = {}
    unanalyzed: dict[str, str] = {}
    issued: list[list[str]] = []
    calls = 0

    def build(batch):
        return build_scan_prompt(batch, graph, cache, config.scenario, analyses)

    def sized(batch):
        # reserve room for the retry reminder so a retry never overflows
        return build(batch) + prompts.SCAN_STRICT_REMINDER

    def run_batch(batch):
        prompt = build(batch)
        n_calls = 0
        results: dict[str, NodeAnalysis | AnalysisError] = {}
        for attempt in range(2):
            text = gateway.generate(GenerationRequest(prompt=prompt, tag="scan"))
            n_calls += 1
            try:
                parsed = parse_scan_response(text, batch, config.suspicion_floor)
            except Unparseable as exc:
                parsed = {k: AnalysisError(k, str(exc)) for k in batch}
            for k, v in parsed.items():
                if not isinstance(results.get(k), NodeAnalysis):
                    results[k] = v
            if all(isinstance(v, NodeAnalysis) for v in results.values()):
                break
            log.info("scan batch %s: retrying with strict reminder", batch[:3])
            prompt = build(batch) + prompts.SCAN_STRICT_REMINDER
        return results, n_calls

    for level in graph.levels:
        batches = _level_batches(level, sized, gateway)
        workers = max(1, min(gateway.max_in_flight, len(batches)))
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(run_batch, batches))
        for batch, (results, n_calls) in zip(batches, outcomes):
            issued.append(list(batch))
            calls += n_calls
            for key in batch:
                r = results[key]
                if isinstance(r, NodeAnalysis):
                    analyses[key] = r
                else:
                    unanalyzed[key] = str(r)

    def order(k):
        signal, cycle = parse_node_key(k)
        return (-analyses[k].suspicion_score, cycle, signal)

    suspicious = sorted((k for k, a in analyses.items() if a.is_suspicious), key=order)
    return ScanResult(
        suspicious=suspicious,
        analyses=dict(sorted(analyses.items())),
        batches_issued=len(issued),
        unanalyzed=dict(sorted(unanalyzed.items())),
        batches=issued,
        calls=calls,
    )
