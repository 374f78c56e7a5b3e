"""Human-readable debug report: ranked narratives, timeline, fixes, spec refs."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

from .context import ContextCache
from .fixes import Fix
from .graph import CausalGraph, GraphStats
from .rover import CRITERIA, Hypothesis, RankEntry, RoverResult
from .scanner import ScanResult

NO_FIXES = "no validated fixes produced"
MAX_SPEC_REFS = 5


@dataclass(frozen=True)
class TimelineRow:
    cycle: int
    node_key: str
    signal: str
    value: str
    description: str
    suspicious: bool

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass(frozen=True)
class SpecRef:
    doc_id: str
    excerpt: str
    signal: str


@dataclass
class DebugReport:
    headline: str
    hypotheses: list[tuple[RankEntry, Hypothesis]]
    timeline: list[TimelineRow]
    fixes: list[Fix]
    spec_refs: list[SpecRef]
    stats: GraphStats
    metadata: dict = field(default_factory=dict)
    ranking_mode: str = "batch"

    def to_dict(self) -> dict:
        return {
            "headline": self.headline,
            "ranking_mode": self.ranking_mode,
            "hypotheses": [
                {"rank": i, "scores": e.to_dict(), "hypothesis": h.to_dict()}
                for i, (e, h) in enumerate(self.hypotheses, 1)
            ],
            "timeline": [r.to_dict() for r in self.timeline],
            "fixes": [f.to_dict() for f in self.fixes],
            "spec_refs": [s.__dict__ for s in self.spec_refs],
            "graph_stats": self.stats.as_dict(),
            "metadata": dict(self.metadata),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def _flagged(scan: ScanResult | None, key: str) -> bool:
    if scan is None:
        return False
    a = scan.analyses.get(key)
    return key in scan.suspicious or bool(a and a.model_flagged)


def build_timeline(
    hypotheses: Sequence[Hypothesis],
    graph: CausalGraph,
    scan: ScanResult | None = None,
) -> list[TimelineRow]:
    """Union of narrative timelines plus the failure event, one row per event."""
    rows: dict[str, TimelineRow] = {}

    def add(key: str, description: str) -> None:
        if key not in graph:
            return
        ev = graph.event(key)
        bare = f"{ev.signal} = {ev.value}"
        # a seed event carries only the bare value; a later narrative may describe it
        if key in rows and not (rows[key].description == bare and description != bare):
            return
        rows[key] = TimelineRow(ev.cycle, key, ev.signal, ev.value, description, _flagged(scan, key))

    if graph.root is not None:
        root = graph.event(graph.root)
        add(graph.root, f"{root.signal} reports {root.value}")
    for h in hypotheses:
        for e in h.timeline:
            add(e.node_key, e.description)
    return sorted(rows.values(), key=lambda r: (r.cycle, r.node_key))


def collect_spec_refs(cache: ContextCache | None, keys: Sequence[str], graph: CausalGraph) -> list[SpecRef]:
    if cache is None:
        return []
    seen, scored = set(), []
    for key in keys:
        if key not in graph:
            continue
        sig = graph.event(key).signal
        ctx = cache.per_signal.get(sig)
        for ex in ctx.spec_excerpts if ctx else ():
            if (ex.doc_id, ex.text) not in seen:
                seen.add((ex.doc_id, ex.text))
                scored.append((-ex.score, ex.doc_id, len(scored), SpecRef(ex.doc_id, ex.text, sig)))
    scored.sort(key=lambda t: t[:3])
    return [t[3] for t in scored[:MAX_SPEC_REFS]]


def build_report(
    graph: CausalGraph,
    scan: ScanResult | None,
    rover: RoverResult | None,
    fixes: Sequence[Fix],
    cache: ContextCache | None = None,
    metadata: dict | None = None,
) -> DebugReport:
    ranked = list(zip(rover.ranking.entries, rover.ranked())) if rover else []
    hyps = [h for _, h in ranked]
    if ranked:
        top = ranked[0][1]
        headline = f"{top.title}: {top.statement}"
    elif scan is not None and not scan.suspicious:
        headline = "No suspicious nodes were found; no failure narrative could be formed."
    else:
        headline = "No failure narrative was produced."
    keys = list(scan.suspicious) if scan else []
    for h in hyps:
        keys.extend(e.node_key for e in h.timeline)
    return DebugReport(
        headline=headline,
        hypotheses=ranked,
        timeline=build_timeline(hyps, graph, scan),
        fixes=list(fixes),
        spec_refs=collect_spec_refs(cache, list(dict.fromkeys(keys)), graph),
        stats=graph.stats(),
        metadata=dict(metadata or {}),
        ranking_mode=rover.ranking.mode if rover else "none",
    )


def pct(x: float) -> str:
    return f"{100 * x:.1f}%"


def _bullets(items: Sequence[str]) -> list[str]:
    return [f"- {x}" for x in items] if items else ["- (none)"]


def _row_text(r: TimelineRow) -> str:
    event = f"{r.signal} = {r.value}"
    line = f"- **Cycle {r.cycle}** `{event}`"
    if r.suspicious:
        line += " (suspicious)"
    if r.description and r.description != event:
        line += f": {r.description}"
    return line


def render_markdown(report: DebugReport) -> str:
    out = ["# Counterexample Debug Report", "", "## Headline", "", report.headline, "", "## Ranked Hypotheses", ""]
    if not report.hypotheses:
        out += ["No hypotheses were produced.", ""]
    for rank, (entry, h) in enumerate(report.hypotheses, 1):
        out += [f"### {rank}. {h.title}", "", f"**Confidence: {pct(h.confidence)}** (status: {h.status})", ""]
        if entry.overall is not None:
            parts = ", ".join(f"{c.replace('_', ' ')} {getattr(entry, c):.2f}" for c in CRITERIA)
            out += [f"Scores: {parts}; overall {entry.overall:.2f}", ""]
        out += ["**Hypothesis Statement**", "", h.statement, ""]
        out += ["**Supporting Evidence**", "", *_bullets(h.evidence_for), ""]
        out += ["**Contradicting Evidence**", "", *_bullets(h.evidence_against), ""]
        if h.insights:
            out += ["**Analysis**", "", *_bullets(h.insights), ""]
    out += ["## Causal Chain Timeline", ""]
    out += [_row_text(r) for r in report.timeline] + [""]
    out += ["## Suggested Fixes", ""]
    if not report.fixes:
        out += [f"_{NO_FIXES}_", ""]
    for i, f in enumerate(report.fixes, 1):
        where = f"{f.file}:{f.line}" if f.file else "unknown"
        out += [
            f"### Fix {i} (Confidence: {pct(f.confidence)}, with consensus: {pct(f.final_confidence)})",
            "",
            f"- Category: {f.category}",
            f"- Validation: {f.validation}" + (" (span occurs more than once)" if f.ambiguous else ""),
            f"- Location: {where}",
            f"- Strategies: {', '.join(f.strategies)}",
            "",
            "```verilog",
            "// Buggy Code:",
            f.buggy_code,
            "",
            "// Fixed Code:",
            f.code,
            "```",
            "",
        ]
        if f.description:
            out += [f.description, ""]
    out += ["## Specification References", ""]
    if report.spec_refs:
        out += [f"- [{s.doc_id}] ({s.signal}) {s.excerpt}" for s in report.spec_refs]
    else:
        out.append("- (none matched)")
    s = report.stats
    out += [
        "",
        "## Run Metadata",
        "",
        f"- Graph: {s.node_count} nodes, {s.edge_count} edges, {s.unique_signal_count} unique signals, depth {s.max_depth}",
        f"- Ranking mode: {report.ranking_mode}",
    ]
    for k in sorted(report.metadata):
        out.append(f"- {k.replace('_', ' ')}: {report.metadata[k]}")
    return "\n".join(out).rstrip() + "\n"
