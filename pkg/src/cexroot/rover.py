"""Insight rover: competing failure narratives explored over the causal graph.

One hypothesis is seeded per suspicious node. Each iteration, every
explorable hypothesis picks up to three frontier nodes, has the model judge
them against its narrative, and folds the verdict into its timeline,
evidence and confidence. A final model pass ranks the pool.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from . import prompts
from .context import ContextCache, lookup
from .errors import RoverError
from .graph import CausalGraph, parse_node_key
from .llm import Gateway, GenerationRequest
from .parsing import extract_json
from .scanner import ScanResult

log = logging.getLogger(__name__)

RANKING_WEIGHTS = {
    "sufficiency": 0.30,
    "evidence": 0.25,
    "mechanistic_insight": 0.25,
    "actionability": 0.15,
    "coherence": 0.05,
}
CRITERIA = tuple(RANKING_WEIGHTS)

ACTIVE, CONVERGED, WEAK, UNSEEDED = "active", "converged", "weak", "unseeded"


class NoSuspiciousNodes(RoverError):
    pass


class AnalysisParseError(RoverError):
    pass


@dataclass(frozen=True)
class RoverConfig:
    min_narratives: int = 3
    frontier_cap: int = 20
    weak_confidence: float = 0.2
    weak_after_iters: int = 3
    convergence_confidence: float = 0.9
    max_iterations: int = 8
    select_targets_max: int = 3
    frontier_listing_max: int = 10
    initial_confidence: float = 0.5
    confidence_step: float = 0.1
    ranking_mode: str = "batch"
    problem_description: str = ""

    def __post_init__(self):
        if self.ranking_mode not in ("batch", "tournament"):
            raise ValueError(f"ranking_mode must be batch or tournament, got {self.ranking_mode!r}")
        for name in ("weak_confidence", "convergence_confidence", "initial_confidence"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        for name in ("min_narratives", "frontier_cap", "max_iterations", "select_targets_max", "frontier_listing_max"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class TimelineEvent:
    cycle: int
    node_key: str
    description: str

    def to_dict(self) -> dict:
        return {"cycle": self.cycle, "node_key": self.node_key, "description": self.description}


@dataclass
class Hypothesis:
    id: str
    seed_key: str
    seed_suspicion: float
    title: str = ""
    statement: str = ""
    origin: str = "suspicious"
    timeline: list[TimelineEvent] = field(default_factory=list)
    evidence_for: list[str] = field(default_factory=list)
    evidence_against: list[str] = field(default_factory=list)
    insights: list[str] = field(default_factory=list)
    confidence: float = 0.5
    frontier: list[str] = field(default_factory=list)
    explored: set[str] = field(default_factory=set)  # seed node excluded
    critical: list[str] = field(default_factory=list)
    status: str = ACTIVE
    iterations_survived: int = 0

    @property
    def explorable(self) -> bool:
        return self.status == ACTIVE and bool(self.frontier)

    def headline(self) -> str:
        return f"{self.title}: {self.statement}" if self.title else self.statement

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "seed_key": self.seed_key,
            "seed_suspicion": self.seed_suspicion,
            "origin": self.origin,
            "title": self.title,
            "statement": self.statement,
            "status": self.status,
            "confidence": self.confidence,
            "iterations_survived": self.iterations_survived,
            "timeline": [e.to_dict() for e in self.timeline],
            "evidence_for": list(self.evidence_for),
            "evidence_against": list(self.evidence_against),
            "insights": list(self.insights),
            "frontier": list(self.frontier),
            "explored": sorted(self.explored, key=_order),
            "critical": list(self.critical),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Hypothesis":
        return cls(
            id=d["id"],
            seed_key=d["seed_key"],
            seed_suspicion=float(d["seed_suspicion"]),
            title=d["title"],
            statement=d["statement"],
            origin=d.get("origin", "suspicious"),
            timeline=[TimelineEvent(int(e["cycle"]), e["node_key"], e["description"]) for e in d["timeline"]],
            evidence_for=list(d["evidence_for"]),
            evidence_against=list(d["evidence_against"]),
            insights=list(d["insights"]),
            confidence=float(d["confidence"]),
            frontier=list(d["frontier"]),
            explored=set(d["explored"]),
            critical=list(d.get("critical", [])),
            status=d["status"],
            iterations_survived=int(d["iterations_survived"]),
        )


@dataclass(frozen=True)
class NarrativeAnalysis:
    is_relevant: bool
    is_critical: bool
    event_description: str
    importance: float
    evidence_strength: float
    evidence_for: tuple[str, ...] = ()
    evidence_against: tuple[str, ...] = ()
    new_insights: tuple[str, ...] = ()


@dataclass(frozen=True)
class RankEntry:
    hypothesis_id: str
    sufficiency: float | None
    evidence: float | None
    mechanistic_insight: float | None
    actionability: float | None
    coherence: float | None
    overall: float | None
    reasoning: str = ""

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("hypothesis_id", *CRITERIA, "overall", "reasoning")}

    @classmethod
    def from_dict(cls, d: dict) -> "RankEntry":
        return cls(**{k: d.get(k) for k in ("hypothesis_id", *CRITERIA, "overall")}, reasoning=d.get("reasoning", ""))


@dataclass(frozen=True)
class RankedHypotheses:
    entries: tuple[RankEntry, ...]
    mode: str  # batch | tournament | confidence

    @property
    def order(self) -> list[str]:
        return [e.hypothesis_id for e in self.entries]

    def to_dict(self) -> dict:
        return {"mode": self.mode, "entries": [e.to_dict() for e in self.entries]}

    @classmethod
    def from_dict(cls, d: dict) -> "RankedHypotheses":
        return cls(tuple(RankEntry.from_dict(e) for e in d["entries"]), d["mode"])


def weighted_overall(scores: dict) -> float:
    return sum(RANKING_WEIGHTS[c] * float(scores[c]) for c in CRITERIA)


def _order(key: str) -> tuple[int, str]:
    signal, cycle = parse_node_key(key)
    return cycle, signal


def _fraction(d: dict, name: str, default=None) -> float:
    v = d.get(name, default)
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not 0.0 <= float(v) <= 1.0:
        raise AnalysisParseError(f"{name} must be a number in [0, 1], got {v!r}")
    return float(v)


def _texts(d: dict, name: str) -> tuple[str, ...]:
    v = d.get(name, [])
    if isinstance(v, str):
        v = [v]
    if not isinstance(v, list):
        raise AnalysisParseError(f"{name} must be a list of strings")
    return tuple(str(x).strip() for x in v if str(x).strip())


def parse_narrative_analysis(text: str) -> NarrativeAnalysis:
    try:
        d = extract_json(text, dict)
    except ValueError as exc:
        raise AnalysisParseError(str(exc)) from None
    relevant = d.get("is_relevant")
    if not isinstance(relevant, bool):
        raise AnalysisParseError("is_relevant must be a boolean")
    return NarrativeAnalysis(
        is_relevant=relevant,
        is_critical=bool(d.get("is_critical", False)),
        event_description=str(d.get("event_description") or "").strip(),
        importance=_fraction(d, "importance"),
        evidence_strength=_fraction(d, "evidence_strength"),
        evidence_for=_texts(d, "evidence_for"),
        evidence_against=_texts(d, "evidence_against"),
        new_insights=_texts(d, "new_insights"),
    )


# ---------------------------------------------------------------------------
# pool


@dataclass
class Pool:
    hypotheses: list[Hypothesis]
    min_active: int

    def active(self) -> list[Hypothesis]:
        return [h for h in self.hypotheses if h.status == ACTIVE]

    @property
    def vacancies(self) -> int:
        return max(0, self.min_active - len(self.active()))

    @property
    def slots(self) -> int:
        return len(self.hypotheses) + self.vacancies

    def seeded_keys(self) -> set[str]:
        return {h.seed_key for h in self.hypotheses}

    def get(self, hid: str) -> Hypothesis:
        for h in self.hypotheses:
            if h.id == hid:
                return h
        raise KeyError(hid)


class _Ctx:
    """Read-only inputs shared by every rover operation."""

    def __init__(self, graph: CausalGraph, cache: ContextCache, scan: ScanResult, gateway: Gateway, config: RoverConfig):
        self.graph = graph
        self.cache = cache
        self.scan = scan
        self.gateway = gateway
        self.config = config

    def suspicion(self, key: str) -> float:
        return self.scan.score(key)

    def priority(self, key: str) -> tuple:
        cycle, signal = _order(key)
        return (-self.suspicion(key), cycle, signal)

    def listing_priority(self, key: str) -> tuple:
        cycle, signal = _order(key)
        return (-self.suspicion(key), -sum(self.graph.degree(key)), cycle, signal)

    def prior(self, key: str) -> str:
        a = self.scan.analyses.get(key)
        return a.analysis_markdown if a else "(no prior analysis available)"

    def ask(self, prompt: str, tag: str) -> str:
        return self.gateway.generate(GenerationRequest(prompt=prompt, tag=tag))


def extend_frontier(h: Hypothesis, keys: Iterable[str], ctx: _Ctx) -> None:
    """Add unexplored keys, keep priority order, drop the lowest beyond the cap."""
    merged = set(h.frontier)
    merged.update(k for k in keys if k not in h.explored and k != h.seed_key)
    h.frontier = sorted(merged, key=ctx.priority)[: ctx.config.frontier_cap]


def _event_line(ctx: _Ctx, key: str) -> str:
    ev = ctx.graph.event(key)
    return f"{ev.signal} = {ev.value}"


def _seed_one(key: str, hid: str, origin: str, ctx: _Ctx) -> Hypothesis:
    ev = ctx.graph.event(key)
    h = Hypothesis(id=hid, seed_key=key, seed_suspicion=ctx.suspicion(key), origin=origin)
    sc = lookup(ctx.cache, ev.signal)
    prompt = prompts.render(
        prompts.ROVER_SEED,
        signal_name=ev.signal,
        cycle=ev.cycle,
        value=ev.value,
        rtl_context=sc.rtl_text(),
        spec_context=sc.spec_text(),
        prior_analysis_raw=ctx.prior(key),
    )
    try:
        d = extract_json(ctx.ask(prompt, "rove.seed"), dict)
        title, statement = str(d.get("title", "")).strip(), str(d.get("hypothesis", "")).strip()
        if not statement:
            raise ValueError("seed reply has no hypothesis text")
    except (ValueError, RoverError) as exc:
        log.warning("seeding %s from %s failed: %s", hid, key, exc)
        h.status, h.confidence = UNSEEDED, 0.0
        h.title, h.statement = f"Unseeded narrative for {key}", f"Seeding failed: {exc}"
        return h
    h.title, h.statement = title or f"Narrative from {ev.signal}", statement
    h.insights = [str(x).strip() for x in d.get("initial_insights", []) if str(x).strip()]
    h.confidence = ctx.config.initial_confidence
    h.timeline = [TimelineEvent(ev.cycle, key, _event_line(ctx, key))]
    extend_frontier(h, ctx.graph.neighbors(key), ctx)
    if h.confidence >= ctx.config.convergence_confidence:
        h.status = CONVERGED
    return h


def seed_hypotheses(
    suspicious: Sequence[str],
    graph: CausalGraph,
    gateway: Gateway,
    cache: ContextCache,
    scan: ScanResult,
    config: RoverConfig | None = None,
) -> Pool:
    config = config or RoverConfig()
    if not suspicious:
        raise NoSuspiciousNodes("no suspicious nodes")
    ctx = _Ctx(graph, cache, scan, gateway, config)
    return _seed_pool(suspicious, ctx)


def _seed_pool(suspicious: Sequence[str], ctx: _Ctx) -> Pool:
    jobs = [(k, f"H{i}") for i, k in enumerate(suspicious, 1)]
    with ThreadPoolExecutor(max_workers=max(1, min(ctx.gateway.max_in_flight, len(jobs)))) as ex:
        hyps = list(ex.map(lambda j: _seed_one(j[0], j[1], "suspicious", ctx), jobs))
    return Pool(hyps, ctx.config.min_narratives)


def _frontier_rows(keys: Sequence[str], ctx: _Ctx) -> str:
    rows = []
    for k in keys:
        ev = ctx.graph.event(k)
        rows.append(
            f"- {k}: {ev.signal} = {ev.value} at cycle {ev.cycle} "
            f"(suspicion {ctx.suspicion(k):.2f}, degree {sum(ctx.graph.degree(k))})"
        )
    return "\n".join(rows)


def frontier_listing(h: Hypothesis, ctx: _Ctx) -> list[str]:
    return sorted(h.frontier, key=ctx.listing_priority)[: ctx.config.frontier_listing_max]


def _select(h: Hypothesis, ctx: _Ctx) -> list[str]:
    if not h.frontier:
        raise RoverError(f"{h.id} has an empty frontier")
    listed = frontier_listing(h, ctx)
    prompt = prompts.render(
        prompts.ROVER_SELECT,
        hypothesis=h.headline(),
        confidence=f"{h.confidence:.3f}",
        event_count=len(h.timeline),
        frontier_rows=_frontier_rows(listed, ctx),
    )
    picked: list[str] = []
    try:
        reply = extract_json(ctx.ask(prompt, "rove.select"), (dict, list))
        raw = reply.get("targets", []) if isinstance(reply, dict) else reply
        allowed = set(listed)
        for k in raw if isinstance(raw, list) else []:
            if isinstance(k, str) and k.strip() in allowed and k.strip() not in picked:
                picked.append(k.strip())
    except ValueError:
        pass
    return picked[: ctx.config.select_targets_max] or [listed[0]]


def select_targets(
    h: Hypothesis,
    gateway: Gateway,
    graph: CausalGraph,
    scan: ScanResult,
    cache: ContextCache | None = None,
    config: RoverConfig | None = None,
) -> list[str]:
    ctx = _Ctx(graph, cache or ContextCache({}), scan, gateway, config or RoverConfig())
    return _select(h, ctx)


def _timeline_rows(h: Hypothesis) -> str:
    if not h.timeline:
        return "(empty)"
    return "\n".join(f"- Cycle {e.cycle}: {e.node_key}: {e.description}" for e in h.timeline)


def apply_analysis(h: Hypothesis, key: str, analysis: NarrativeAnalysis, ctx: _Ctx) -> None:
    """Fold one node verdict into ``h`` (the node must already be explored)."""
    if not analysis.is_relevant:
        return
    ev = ctx.graph.event(key)
    if all(e.node_key != key for e in h.timeline):
        h.timeline.append(TimelineEvent(ev.cycle, key, analysis.event_description or _event_line(ctx, key)))
        h.timeline.sort(key=lambda e: (e.cycle, e.node_key))
    added_for = added_against = 0
    for fact in analysis.evidence_for:
        if fact not in h.evidence_for:
            h.evidence_for.append(fact)
            added_for += 1
    for fact in analysis.evidence_against:
        if fact not in h.evidence_against:
            h.evidence_against.append(fact)
            added_against += 1
    for note in analysis.new_insights:
        if note not in h.insights:
            h.insights.append(note)
    sign = (added_for > added_against) - (added_for < added_against)
    delta = ctx.config.confidence_step * analysis.importance * analysis.evidence_strength * sign
    h.confidence = min(1.0, max(0.0, h.confidence + delta))
    if analysis.is_critical and key not in h.critical:
        h.critical.append(key)


def _explore(h: Hypothesis, key: str, ctx: _Ctx) -> Hypothesis:
    if key not in h.frontier:
        raise RoverError(f"{key} is not on the frontier of {h.id}")
    h.frontier.remove(key)
    h.explored.add(key)
    ev = ctx.graph.event(key)
    prompt = prompts.render(
        prompts.ROVER_ANALYZE,
        hypothesis=h.headline(),
        timeline_rows=_timeline_rows(h),
        signal_name=ev.signal,
        cycle=ev.cycle,
        value=ev.value,
        rtl_context=lookup(ctx.cache, ev.signal).rtl_text(),
        prior_analysis_raw=ctx.prior(key),
    )
    try:
        analysis = parse_narrative_analysis(ctx.ask(prompt, "rove.analyze"))
    except AnalysisParseError as exc:
        log.info("%s: unusable analysis of %s (%s)", h.id, key, exc)
        return h
    apply_analysis(h, key, analysis, ctx)
    extend_frontier(h, ctx.graph.neighbors(key), ctx)
    if h.confidence >= ctx.config.convergence_confidence:
        h.status = CONVERGED
    return h


def explore_step(
    h: Hypothesis,
    node_key: str,
    graph: CausalGraph,
    cache: ContextCache,
    gateway: Gateway,
    scan: ScanResult,
    config: RoverConfig | None = None,
) -> Hypothesis:
    return _explore(h, node_key, _Ctx(graph, cache, scan, gateway, config or RoverConfig()))


def spawn_candidates(pool: Pool, suspicious_remaining: Sequence[str], ctx: _Ctx) -> list[str]:
    """Unseeded suspicious nodes first (scan order), then critical-path finds by suspicion."""
    seeded = pool.seeded_keys()
    out = [k for k in suspicious_remaining if k not in seeded]
    critical = {k for h in pool.hypotheses for k in h.critical if k not in seeded and k not in out}
    out.extend(sorted(critical, key=ctx.priority))
    return out


def _manage(pool: Pool, suspicious_remaining: Sequence[str], ctx: _Ctx) -> Pool:
    cfg = ctx.config
    for h in pool.active():
        h.iterations_survived += 1
        if h.confidence >= cfg.convergence_confidence:
            h.status = CONVERGED
        elif h.confidence < cfg.weak_confidence and h.iterations_survived >= cfg.weak_after_iters:
            h.status = WEAK
    candidates = spawn_candidates(pool, suspicious_remaining, ctx)
    while pool.vacancies and candidates:
        key = candidates.pop(0)
        origin = "suspicious" if key in suspicious_remaining else "critical"
        h = _seed_one(key, f"H{len(pool.hypotheses) + 1}", origin, ctx)
        pool.hypotheses.append(h)
    return pool


def manage_pool(
    pool: Pool,
    suspicious_remaining: Sequence[str],
    graph: CausalGraph,
    cache: ContextCache,
    gateway: Gateway,
    scan: ScanResult,
    config: RoverConfig | None = None,
) -> Pool:
    return _manage(pool, suspicious_remaining, _Ctx(graph, cache, scan, gateway, config or RoverConfig()))


# ---------------------------------------------------------------------------
# ranking


def _hypothesis_block(h: Hypothesis) -> str:
    lines = [
        f"### Hypothesis {h.id}: {h.title}",
        f"Statement: {h.statement}",
        f"Confidence: {h.confidence:.3f} (status {h.status})",
        "Timeline:",
        _timeline_rows(h),
        "Supporting evidence:",
        *(f"- {x}" for x in h.evidence_for or ["(none)"]),
        "Contradicting evidence:",
        *(f"- {x}" for x in h.evidence_against or ["(none)"]),
        "Insights:",
        *(f"- {x}" for x in h.insights or ["(none)"]),
    ]
    return "\n".join(lines)


def _by_confidence(hyps: Sequence[Hypothesis]) -> list[Hypothesis]:
    pos = {h.id: i for i, h in enumerate(hyps)}
    return sorted(hyps, key=lambda h: (-h.confidence, -h.seed_suspicion, pos[h.id]))


def _batch_rank(hyps: list[Hypothesis], ctx: _Ctx) -> RankedHypotheses:
    prompt = prompts.render(
        prompts.RANKING,
        problem_description=ctx.config.problem_description.strip() or "(none provided)",
        hypothesis_blocks="\n\n".join(_hypothesis_block(h) for h in hyps),
    )
    ids = {h.id for h in hyps}
    scored: dict[str, RankEntry] = {}
    try:
        reply = extract_json(ctx.ask(prompt, "rove.rank"), (list, dict))
        if isinstance(reply, dict):
            reply = reply.get("rankings") or reply.get("hypotheses") or []
        for rec in reply:
            if not isinstance(rec, dict):
                continue
            hid = str(rec.get("hypothesis_id", "")).strip()
            if hid not in ids or hid in scored:
                continue
            vals = {c: _fraction(rec, c) for c in CRITERIA}
            scored[hid] = RankEntry(hid, **vals, overall=weighted_overall(vals), reasoning=str(rec.get("reasoning", "")))
    except (ValueError, AnalysisParseError) as exc:
        log.warning("ranking reply unusable (%s); ordering by confidence", exc)
        scored = {}
    if set(scored) != ids:
        if scored:
            log.warning("ranking reply covers %d of %d hypotheses; ordering by confidence", len(scored), len(ids))
        return _confidence_rank(hyps)
    pos = {h.id: i for i, h in enumerate(hyps)}
    susp = {h.id: h.seed_suspicion for h in hyps}
    entries = sorted(scored.values(), key=lambda e: (-e.overall, -susp[e.hypothesis_id], pos[e.hypothesis_id]))
    return RankedHypotheses(tuple(entries), "batch")


def _confidence_rank(hyps: Sequence[Hypothesis]) -> RankedHypotheses:
    entries = tuple(RankEntry(h.id, None, None, None, None, None, None, "ordered by confidence") for h in _by_confidence(hyps))
    return RankedHypotheses(entries, "confidence")


def _tournament_rank(hyps: list[Hypothesis], ctx: _Ctx) -> RankedHypotheses:
    """Merge sort with model-judged comparisons: at most n*ceil(log2 n) calls."""
    problem = ctx.config.problem_description.strip() or "(none provided)"

    def better(a: Hypothesis, b: Hypothesis) -> bool:
        prompt = prompts.render(
            prompts.PAIRWISE,
            problem_description=problem,
            id_a=a.id,
            text_a=_hypothesis_block(a),
            id_b=b.id,
            text_b=_hypothesis_block(b),
        )
        try:
            winner = str(extract_json(ctx.ask(prompt, "rove.pairwise"), dict).get("winner", "")).strip()
        except ValueError:
            winner = ""
        if winner in (a.id, b.id):
            return winner == a.id
        return _by_confidence([a, b])[0] is a

    def sort(xs: list[Hypothesis]) -> list[Hypothesis]:
        if len(xs) <= 1:
            return xs
        mid = len(xs) // 2
        left, right = sort(xs[:mid]), sort(xs[mid:])
        out = []
        while left and right:
            out.append(left.pop(0) if better(left[0], right[0]) else right.pop(0))
        return out + left + right

    ordered = sort(_by_confidence(hyps))
    entries = tuple(RankEntry(h.id, None, None, None, None, None, None, "pairwise tournament") for h in ordered)
    return RankedHypotheses(entries, "tournament")


def rank_hypotheses(pool: Pool, gateway: Gateway, config: RoverConfig | None = None) -> RankedHypotheses:
    config = config or RoverConfig()
    hyps = [h for h in pool.hypotheses if h.status != UNSEEDED]
    if not hyps:
        if not pool.hypotheses:
            raise RoverError("cannot rank an empty pool")
        return _confidence_rank(pool.hypotheses)
    ctx = _Ctx(CausalGraph([], [], None), ContextCache({}), ScanResult([], {}, 0), gateway, config)
    ranked = _tournament_rank(hyps, ctx) if config.ranking_mode == "tournament" else _batch_rank(hyps, ctx)
    tail = [h for h in pool.hypotheses if h.status == UNSEEDED]
    if tail:
        extra = tuple(RankEntry(h.id, None, None, None, None, None, None, "unseeded") for h in tail)
        ranked = RankedHypotheses(ranked.entries + extra, ranked.mode)
    return ranked


# ---------------------------------------------------------------------------
# the exploration loop


@dataclass
class RoverResult:
    hypotheses: list[Hypothesis]
    ranking: RankedHypotheses
    iterations: int
    vacancies: int = 0

    def ranked(self) -> list[Hypothesis]:
        by_id = {h.id: h for h in self.hypotheses}
        return [by_id[i] for i in self.ranking.order]

    def to_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "vacancies": self.vacancies,
            "ranking": self.ranking.to_dict(),
            "hypotheses": [h.to_dict() for h in self.hypotheses],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RoverResult":
        return cls(
            hypotheses=[Hypothesis.from_dict(h) for h in d["hypotheses"]],
            ranking=RankedHypotheses.from_dict(d["ranking"]),
            iterations=int(d["iterations"]),
            vacancies=int(d.get("vacancies", 0)),
        )


def _run_hypothesis(h: Hypothesis, ctx: _Ctx) -> None:
    for key in _select(h, ctx):
        _explore(h, key, ctx)
        if h.status != ACTIVE:
            break


def explore(
    graph: CausalGraph,
    cache: ContextCache,
    scan: ScanResult,
    gateway: Gateway,
    config: RoverConfig | None = None,
    on_iteration=None,
) -> RoverResult:
    """Seed, explore until no hypothesis can move or the iteration cap, then rank."""
    config = config or RoverConfig()
    if not scan.suspicious:
        raise NoSuspiciousNodes("no suspicious nodes")
    ctx = _Ctx(graph, cache, scan, gateway, config)
    pool = _seed_pool(scan.suspicious, ctx)
    iterations = 0
    while iterations < config.max_iterations:
        movers = [h for h in pool.hypotheses if h.explorable]
        if not movers:
            break
        iterations += 1
        workers = max(1, min(gateway.max_in_flight, len(movers)))
        with ThreadPoolExecutor(max_workers=workers) as ex:
            list(ex.map(lambda h: _run_hypothesis(h, ctx), movers))
        _manage(pool, scan.suspicious, ctx)
        if on_iteration is not None:
            on_iteration(iterations, pool)
    ranking = rank_hypotheses(pool, gateway, config)
    return RoverResult(pool.hypotheses, ranking, iterations, pool.vacancies)


def breadth_first_coverage(graph: CausalGraph, start: str) -> int:
    """Nodes an exhaustive undirected sweep from ``start`` would visit."""
    seen, todo = {start}, [start]
    while todo:
        for n in graph.neighbors(todo.pop()):
            if n not in seen:
                seen.add(n)
                todo.append(n)
    return len(seen)


def max_comparisons(n: int) -> int:
    return n * math.ceil(math.log2(n)) if n > 1 else 0
