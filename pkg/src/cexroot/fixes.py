"""Ensemble fix generation, validation against the RTL, dedup and consensus ranking."""

from __future__ import annotations

import difflib
import hashlib
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

from . import prompts
from .context import RtlCodeMap
from .errors import FixError
from .graph import parse_node_key
from .llm import BudgetExceeded, Gateway, GenerationRequest
from .parsing import bullets, extract_json, section
from .rover import Hypothesis
from .scanner import FOR_SECTION, ScanResult

log = logging.getLogger(__name__)

BASE_STRATEGIES = (
    "full_context",
    "suspicious_focus",
    "causal_narratives_focus",
    "minimal_context",
    "bugs_and_suggestions_only",
)
STRATEGIES = BASE_STRATEGIES + ("best_of",)
CATEGORIES = ("RTL Bug", "Under-Constraint", "Over-Constraint")
EXACT, WHITESPACE, INVALID = "exact", "whitespace_normalized", "invalid"
DEFAULT_RETRY_LIMIT = 2
HIGH_SUSPICION = 0.7


class AllRetriesFailed(FixError):
    pass


class EmptyEnsemble(FixError):
    pass


class FixParseError(FixError):
    pass


@dataclass(frozen=True)
class Fix:
    category: str
    buggy_code: str
    code: str
    description: str
    confidence: float
    location: dict = field(default_factory=dict, hash=False, compare=False)
    strategies: tuple[str, ...] = ()
    validation: str = INVALID
    final_confidence: float = 0.0
    file: str | None = None
    offset: int | None = None
    line: int | None = None
    ambiguous: bool = False

    @property
    def signature(self) -> str:
        return create_signature(self)

    def to_dict(self) -> dict:
        return {
            "signature": self.signature,
            "category": self.category,
            "buggy_code": self.buggy_code,
            "code": self.code,
            "description": self.description,
            "confidence": self.confidence,
            "final_confidence": self.final_confidence,
            "strategies": list(self.strategies),
            "validation": self.validation,
            "file": self.file,
            "offset": self.offset,
            "line": self.line,
            "ambiguous": self.ambiguous,
            "location": dict(self.location),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Fix":
        return cls(
            category=d["category"],
            buggy_code=d["buggy_code"],
            code=d["code"],
            description=d["description"],
            confidence=float(d["confidence"]),
            location=dict(d.get("location", {})),
            strategies=tuple(d.get("strategies", ())),
            validation=d.get("validation", INVALID),
            final_confidence=float(d.get("final_confidence", 0.0)),
            file=d.get("file"),
            offset=d.get("offset"),
            line=d.get("line"),
            ambiguous=bool(d.get("ambiguous", False)),
        )


# ---------------------------------------------------------------------------
# signatures

_TOKEN = re.compile(
    r"""\d*'[sS]?[bBoOdDhH][0-9a-fA-FxXzZ_?]+   # sized/unsized based literal
      | [A-Za-z_$][\w$]*(?:\.[A-Za-z_$][\w$]*)*  # identifier, possibly dotted
      | \d[\d_]*(?:\.\d+)?
      | ===|!==|<<<|>>>|<=|>=|==|!=|&&|\|\||<<|>>|~&|~\||~\^|\^~|->|\*\*
      | \S""",
    re.X,
)
_COMMUTATIVE = {"&", "|", "&&", "||", "^", "+", "*"}
_UNARY_ONLY = {"!", "~", "~&", "~|", "~^", "^~"}
_SEPARATORS = {"=", "<=", ";", ",", "?", ":"}
_OPEN = {"(": ")", "[": "]", "{": "}"}
_KEYWORDS = {
    "assign", "always", "always_ff", "always_comb", "always_latch", "if", "else", "begin", "end",
    "case", "casez", "casex", "endcase", "default", "posedge", "negedge", "or", "wire", "reg",
    "logic", "input", "output", "inout", "assert", "assume", "property", "module", "endmodule",
    "for", "while", "return", "localparam", "parameter", "initial",
}


def strip_comments(code: str) -> str:
    code = re.sub(r"/\*.*?\*/", " ", code, flags=re.S)
    return re.sub(r"//[^\n]*", " ", code)


def tokenize(code: str) -> list[str]:
    return _TOKEN.findall(strip_comments(code).replace("\t", " "))


def _group(tokens: list[str], i: int, close: str | None) -> tuple[list, int]:
    """Nest bracketed runs into lists: ``['(', [...], ')']`` becomes one item."""
    out: list = []
    while i < len(tokens):
        t = tokens[i]
        if t == close:
            return out, i + 1
        if t in _OPEN:
            inner, i = _group(tokens, i + 1, _OPEN[t])
            out.append((t, inner, _OPEN[t]))
            continue
        out.append(t)
        i += 1
    return out, i


def _flat(items: list) -> list[str]:
    out = []
    for it in items:
        if isinstance(it, tuple):
            out.append(it[0])
            out.extend(_flat(it[1]))
            out.append(it[2])
        else:
            out.append(it)
    return out


def _is_operator(item) -> bool:
    return isinstance(item, str) and not re.match(r"[\w$']", item)


def _canon_region(items: list) -> list:
    operands: list[list] = [[]]
    ops = set()
    expecting = True
    for it in items:
        if _is_operator(it) and (expecting or it in _UNARY_ONLY):
            operands[-1].append(it)  # prefix operator belongs to the operand
        elif _is_operator(it):
            ops.add(it)
            operands.append([])
            expecting = True
        else:
            operands[-1].append(it)
            expecting = False
    if len(ops) != 1 or len(operands) < 2 or any(not o for o in operands):
        return items
    (op,) = ops
    if op not in _COMMUTATIVE:
        return items
    operands.sort(key=lambda o: " ".join(_flat(o)))
    out: list = []
    for i, o in enumerate(operands):
        if i:
            out.append(op)
        out.extend(o)
    return out


def _canon_items(items: list) -> list:
    items = [(it[0], _canon_items(it[1]), it[2]) if isinstance(it, tuple) else it for it in items]
    out, region = [], []
    for it in items:
        if isinstance(it, str) and (it in _SEPARATORS or it in _KEYWORDS):
            out.extend(_canon_region(region))
            out.append(it)
            region = []
        else:
            region.append(it)
    out.extend(_canon_region(region))
    return out


def canonicalize(code: str) -> str:
    """Whitespace- and comment-insensitive form with sorted commutative chains."""
    items, _ = _group(tokenize(code), 0, None)
    return " ".join(_flat(_canon_items(items)))


def signature_of(buggy_code: str, code: str) -> str:
    payload = canonicalize(buggy_code) + "\x00" + canonicalize(code)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


def create_signature(fix: Fix) -> str:
    return signature_of(fix.buggy_code, fix.code)


# ---------------------------------------------------------------------------
# parsing replies

_PLACEHOLDER = re.compile(r"\bTODO\b|\bTBD\b|\bFIXME\b|<\s*[A-Za-z_][\w \-]*>|\.\.\.")
_SPAN_KEYWORDS = re.compile(r"\b(begin|end|case|casez|casex|endcase|assert)\b")


def _category(raw, default: str) -> str:
    text = str(raw or default).strip().lower().replace("_", "-")
    for c in CATEGORIES:
        if text.startswith(c.lower()):
            return c
    return default


def _reject_reason(buggy: str, code: str) -> str | None:
    if not buggy.strip() or not code.strip():
        return "empty span"
    if buggy == code:
        return "replacement equals original"
    if _PLACEHOLDER.search(code):
        return "placeholder text in code"
    if _SPAN_KEYWORDS.search(buggy) or _SPAN_KEYWORDS.search(code):
        return "span includes begin/end/case/assert"
    return None


def parse_fixes(text: str, strategy: str = "") -> list[Fix]:
    """Parse a fix reply (array or object with ``fixes``), dropping unusable entries.

    The result is sorted by confidence descending, reply order kept on ties.
    """
    try:
        reply = extract_json(text, (dict, list))
    except ValueError as exc:
        raise FixParseError(str(exc)) from None
    top_category = "RTL Bug"
    if isinstance(reply, dict):
        top_category = _category(reply.get("category"), "RTL Bug")
        reply = reply.get("fixes", [])
    if not isinstance(reply, list):
        raise FixParseError("'fixes' must be a list")
    out = []
    for rec in reply:
        if not isinstance(rec, dict):
            continue
        buggy, code = rec.get("buggy_code"), rec.get("code")
        if not isinstance(buggy, str) or not isinstance(code, str):
            continue
        why = _reject_reason(buggy, code)
        if why:
            log.info("[%s] dropping fix: %s", strategy, why)
            continue
        conf = rec.get("confidence", 0.5)
        if isinstance(conf, bool) or not isinstance(conf, (int, float)):
            continue
        loc = rec.get("location") if isinstance(rec.get("location"), dict) else {}
        out.append(
            Fix(
                category=_category(rec.get("category"), top_category),
                buggy_code=buggy,
                code=code,
                description=str(rec.get("description", "")).strip(),
                confidence=min(1.0, max(0.0, float(conf))),
                location=loc,
                strategies=(strategy,) if strategy else (),
            )
        )
    return sorted(out, key=lambda f: -f.confidence)


# ---------------------------------------------------------------------------
# validation


def _flex_pattern(span: str) -> re.Pattern | None:
    span = span.replace("\t", " ").strip()
    if not span:
        return None
    parts = re.split(r"(\s+)", span)
    out = []
    for p in parts:
        if not p:
            continue
        if p.isspace():
            n = p.count("\n")
            out.append(r"[ \t]*(?:\r?\n[ \t]*){%d}" % n if n else r"[ \t]+")
        else:
            out.append(re.escape(p))
    return re.compile("".join(out))


def find_matches(span: str, rtl: RtlCodeMap) -> tuple[str, list[tuple[str, int, str]]]:
    """Locations of ``span`` as ``(stage, [(file, offset, verbatim)])``."""
    hits = []
    if span:
        for path, text in rtl.files.items():
            start = text.find(span)
            while start != -1:
                hits.append((path, start, span))
                start = text.find(span, start + 1)
    if hits:
        return EXACT, hits
    pat = _flex_pattern(span)
    if pat is not None:
        for path, text in rtl.files.items():
            for m in pat.finditer(text):
                hits.append((path, m.start(), m.group(0)))
    return (WHITESPACE if hits else INVALID), hits


def validate_fix(fix: Fix, rtl: RtlCodeMap) -> Fix:
    """Return ``fix`` with validation status, verbatim span and resolved location."""
    stage, hits = find_matches(fix.buggy_code, rtl)
    if stage == INVALID:
        return replace(fix, validation=INVALID)
    hits.sort(key=lambda h: (h[0], h[1]))
    path, offset, verbatim = hits[0]
    if len(hits) > 1:
        log.info("fix span matches %d locations; using %s:%d", len(hits), path, rtl.line_of(path, offset))
    return replace(
        fix,
        validation=stage,
        buggy_code=verbatim,
        file=path,
        offset=offset,
        line=rtl.line_of(path, offset),
        ambiguous=len(hits) > 1,
    )


# ---------------------------------------------------------------------------
# patching


def apply_patch(text: str, fix: Fix) -> str:
    o = fix.offset
    if o is None or text[o : o + len(fix.buggy_code)] != fix.buggy_code:
        raise FixError("fix span does not match the text at its recorded offset")
    return text[:o] + fix.code + text[o + len(fix.buggy_code) :]


def revert_patch(text: str, fix: Fix) -> str:
    o = fix.offset
    if o is None or text[o : o + len(fix.code)] != fix.code:
        raise FixError("patched text does not hold the fix at its recorded offset")
    return text[:o] + fix.buggy_code + text[o + len(fix.code) :]


def _read(path: Path) -> str:
    with open(path, encoding="utf-8", newline="") as fh:
        return fh.read()


def _write(path: Path, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def apply_to_tree(root: str | Path, fix: Fix) -> bytes:
    """Patch the fix's file under ``root`` in place; return the original bytes."""
    if fix.file is None:
        raise FixError("fix has no validated location")
    path = Path(root) / fix.file
    original = path.read_bytes()
    _write(path, apply_patch(_read(path), fix))
    return original


def revert_in_tree(root: str | Path, fix: Fix, original: bytes | None = None) -> None:
    path = Path(root) / fix.file
    if original is not None:
        path.write_bytes(original)
    else:
        _write(path, revert_patch(_read(path), fix))


def unified_diff(fix: Fix, rtl: RtlCodeMap) -> str:
    if fix.file is None:
        return ""
    before = rtl.files[fix.file]
    after = apply_patch(before, fix)
    return "".join(
        difflib.unified_diff(
            before.splitlines(keepends=True),
            after.splitlines(keepends=True),
            fromfile=f"a/{fix.file}",
            tofile=f"b/{fix.file}",
        )
    )


# ---------------------------------------------------------------------------
# strategy prompts


@dataclass(frozen=True)
class FixContext:
    problem_description: str
    rtl: RtlCodeMap
    scan: ScanResult | None = None
    hypotheses: tuple[Hypothesis, ...] = ()  # rank order
    prior_fixes: tuple[Fix, ...] = ()


def _signal_label(key: str) -> tuple[str, int]:
    return parse_node_key(key)


def _for_bullets(scan: ScanResult, key: str) -> list[str]:
    a = scan.analyses.get(key)
    return bullets(section(a.analysis_markdown, FOR_SECTION)) if a else []


def _suggestions(scan: ScanResult, key: str) -> list[str]:
    a = scan.analyses.get(key)
    if not a:
        return []
    body = section(a.analysis_markdown, "Fix Required")
    items = bullets(body)
    if not items:
        text = " ".join(line.strip() for line in body if line.strip())
        items = [text] if text else []
    return [s for s in items if "no fix required" not in s.lower()]


def _narrative(h: Hypothesis) -> str:
    lines = [f"{h.title} (confidence {h.confidence:.2f})", h.statement]
    lines += [f"- Cycle {e.cycle}: {e.description}" for e in h.timeline]
    lines += [f"- Supporting: {x}" for x in h.evidence_for]
    lines += [f"- Contradicting: {x}" for x in h.evidence_against]
    return "\n".join(lines)


def _ctx_full(ctx: FixContext) -> str:
    insights = []
    for h in ctx.hypotheses:
        for x in h.insights:
            if x not in insights:
                insights.append(x)
    out = ["## Key Insights from Analysis:"]
    out += [f"- {x}" for x in insights[:10]] or ["- (none)"]
    out += ["", "## Most Suspicious Signals:"]
    keys = list(ctx.scan.suspicious[:5]) if ctx.scan else []
    for k in keys:
        sig, cyc = _signal_label(k)
        out.append(f"- Signal '{sig}' at cycle {cyc}: suspicion score {ctx.scan.score(k):.2f}")
        notes = _for_bullets(ctx.scan, k)[:2]
        if notes:
            out.append("  Insights: " + "; ".join(notes))
    if not keys:
        out.append("- (none)")
    out += ["", "## Causal Analysis Narratives:"]
    out += [f"{i}. {h.headline()}" for i, h in enumerate(ctx.hypotheses[:3], 1)] or ["(none)"]
    return "\n".join(out)


def _ctx_suspicious(ctx: FixContext) -> str:
    out = ["## CRITICAL: Focus on these suspicious signals:"]
    keys = []
    if ctx.scan:
        ranked = sorted(ctx.scan.analyses.values(), key=lambda a: (-a.suspicion_score, *reversed(_signal_label(a.node_key))))
        keys = [a.node_key for a in ranked if a.suspicion_score > HIGH_SUSPICION][:7]
    for k in keys:
        sig, cyc = _signal_label(k)
        out.append(f"- Signal '{sig}' (cycle {cyc}): HIGH SUSPICION ({ctx.scan.score(k):.2f})")
        out += [f"  → {x}" for x in _for_bullets(ctx.scan, k)[:3]]
    if not keys:
        out.append(f"- (no signal scored above {HIGH_SUSPICION:.2f})")
    out.append("Prioritize fixes for these highly suspicious signals!")
    return "\n".join(out)


def _ctx_narratives(ctx: FixContext) -> str:
    out = ["## Root Cause Narratives (FOCUS ON THESE):"]
    for i, h in enumerate(ctx.hypotheses[:5], 1):
        out += [f"### Narrative {i}:", _narrative(h)]
    if not ctx.hypotheses:
        out.append("(no narratives available)")
    out.append("## Generate fixes that directly address the root causes identified in these narratives.")
    return "\n".join(out)


def _ctx_minimal(ctx: FixContext) -> str:
    if ctx.hypotheses:
        root = ctx.hypotheses[0].statement
    elif ctx.scan and ctx.scan.suspicious:
        k = ctx.scan.suspicious[0]
        sig, cyc = _signal_label(k)
        root = f"signal '{sig}' at cycle {cyc} (suspicion {ctx.scan.score(k):.2f})"
    else:
        root = ctx.problem_description.strip() or "(unknown)"
    return f"## Critical Issue:\nROOT CAUSE: {root}\nGenerate 3-5 surgical fixes for this specific issue."


def _ctx_bugs(ctx: FixContext) -> str:
    out = ["## Bugs and Fix Suggestions:"]
    keys = list(ctx.scan.suspicious[:5]) if ctx.scan else []
    for k in keys:
        sig, _ = _signal_label(k)
        out.append(f"Signal '{sig}' bugs:")
        out += [f"- {x}" for x in _for_bullets(ctx.scan, k)] or ["- (none recorded)"]
        out.append("Suggested fixes:")
        out += [f"- {x}" for x in _suggestions(ctx.scan, k)] or ["- (none recorded)"]
    if not keys:
        out.append("(no suspicious signals)")
    return "\n".join(out)


def _ctx_best_of(ctx: FixContext) -> str:
    out = ["## Candidate Fixes From Other Strategies:"]
    for i, f in enumerate(ctx.prior_fixes, 1):
        out += [
            f"### Candidate {i} ({', '.join(f.strategies)}; confidence {f.confidence:.2f})",
            "Buggy code:",
            f.buggy_code,
            "Fixed code:",
            f.code,
            f"Why: {f.description}",
        ]
    out.append("Review these candidates, then return the most promising fixes (refine them if needed).")
    return "\n".join(out)


_CONTEXT_BUILDERS = {
    "full_context": _ctx_full,
    "suspicious_focus": _ctx_suspicious,
    "causal_narratives_focus": _ctx_narratives,
    "minimal_context": _ctx_minimal,
    "bugs_and_suggestions_only": _ctx_bugs,
    "best_of": _ctx_best_of,
}


def _rtl_block(rtl: RtlCodeMap) -> str:
    return "\n\n".join(f"### File: {path}\n```verilog\n{text.rstrip()}\n```" for path, text in rtl.files.items())


def build_fix_prompt(strategy: str, ctx: FixContext) -> str:
    if strategy not in _CONTEXT_BUILDERS:
        raise FixError(f"unknown strategy {strategy!r}")
    head = prompts.render(
        prompts.FIX_PREAMBLE,
        problem_description=ctx.problem_description.strip() or "(none provided)",
        rtl_code=_rtl_block(ctx.rtl),
        strategy_context=_CONTEXT_BUILDERS[strategy](ctx),
    )
    return head + "\n" + prompts.FIX_CORE


def generate_fixes(
    strategy: str,
    ctx: FixContext,
    gateway: Gateway,
    retry_limit: int = DEFAULT_RETRY_LIMIT,
) -> list[Fix]:
    """Validated fixes from one strategy; retries while nothing validates."""
    if strategy == "best_of" and not ctx.prior_fixes:
        raise AllRetriesFailed("best_of needs fixes from earlier strategies")
    base = build_fix_prompt(strategy, ctx)
    prompt = base
    for attempt in range(retry_limit + 1):
        try:
            text = gateway.generate(GenerationRequest(prompt=prompt, tag=f"fix.{strategy}"))
        except BudgetExceeded as exc:
            raise AllRetriesFailed(f"{strategy}: {exc}") from None
        try:
            candidates = parse_fixes(text, strategy)
        except FixParseError as exc:
            log.info("[%s] attempt %d unparseable: %s", strategy, attempt + 1, exc)
            candidates = []
        valid = [v for v in (validate_fix(f, ctx.rtl) for f in candidates) if v.validation != INVALID]
        if valid:
            return valid
        prompt = base + prompts.FIX_RETRY_REMINDER
    raise AllRetriesFailed(f"{strategy}: no valid fix after {retry_limit + 1} attempts")


# ---------------------------------------------------------------------------
# consensus


def consensus_boost(k: int) -> float:
    return min(0.2 * k, 0.6) if k > 0 else 0.0


def _strategy_rank(name: str) -> int:
    return STRATEGIES.index(name) if name in STRATEGIES else len(STRATEGIES)


def merge_fixes(fixes: Sequence[Fix]) -> list[Fix]:
    """Collapse equal signatures, apply the consensus boost and rank."""
    merged: dict[str, Fix] = {}
    for f in fixes:
        sig = f.signature
        if sig not in merged:
            merged[sig] = f
            continue
        m = merged[sig]
        strategies = tuple(sorted(set(m.strategies) | set(f.strategies), key=_strategy_rank))
        merged[sig] = replace(m, confidence=max(m.confidence, f.confidence), strategies=strategies)
    out = []
    for i, f in enumerate(merged.values()):
        strategies = tuple(sorted(set(f.strategies), key=_strategy_rank))
        final = min(1.0, f.confidence + consensus_boost(len(strategies)))
        out.append((i, replace(f, strategies=strategies, final_confidence=final)))
    out.sort(key=lambda p: (-p[1].final_confidence, min((_strategy_rank(s) for s in p[1].strategies), default=99), p[0]))
    return [f for _, f in out]


@dataclass
class EnsembleResult:
    fixes: list[Fix]
    per_strategy: dict[str, int]
    failures: dict[str, str]

    def to_dict(self, rtl: RtlCodeMap | None = None) -> dict:
        recs = []
        for f in self.fixes:
            d = f.to_dict()
            if rtl is not None:
                d["diff"] = unified_diff(f, rtl)
            recs.append(d)
        return {"per_strategy": dict(self.per_strategy), "failures": dict(self.failures), "fixes": recs}

    @classmethod
    def from_dict(cls, d: dict) -> "EnsembleResult":
        return cls([Fix.from_dict(f) for f in d["fixes"]], dict(d["per_strategy"]), dict(d["failures"]))


def ensemble(
    ctx: FixContext,
    gateway: Gateway,
    retry_limit: int = DEFAULT_RETRY_LIMIT,
    strategies: Sequence[str] = BASE_STRATEGIES,
) -> EnsembleResult:
    per: dict[str, int] = {}
    failures: dict[str, str] = {}

    def run(strategy):
        try:
            return generate_fixes(strategy, ctx, gateway, retry_limit)
        except AllRetriesFailed as exc:
            return exc

    workers = max(1, min(gateway.max_in_flight, len(strategies)))
    with ThreadPoolExecutor(max_workers=workers) as ex:
        results = list(ex.map(run, strategies))
    collected: list[Fix] = []
    for strategy, res in zip(strategies, results):
        if isinstance(res, AllRetriesFailed):
            failures[strategy] = str(res)
            per[strategy] = 0
        else:
            per[strategy] = len(res)
            collected.extend(res)
    if collected:
        prior = tuple(merge_fixes(collected))
        best = None
        try:
            best = generate_fixes("best_of", replace(ctx, prior_fixes=prior), gateway, retry_limit)
        except AllRetriesFailed as exc:
            failures["best_of"] = str(exc)
        per["best_of"] = len(best or [])
        collected.extend(best or [])
    if not collected:
        raise EmptyEnsemble("no strategy produced a valid fix")
    return EnsembleResult(merge_fixes(collected), per, failures)
