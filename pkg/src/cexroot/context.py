"""Context retrieval: RTL snippets and specification excerpts per signal.

Everything is fetched once by :func:`prefetch`; prompt builders only call
:func:`lookup`, which never touches the file system.
"""

from __future__ import annotations

import re
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

DEFAULT_FUZZY_THRESHOLD = 0.7
SNIPPET_RADIUS = 3
NO_RTL_CONTEXT = "RTL context not available for this signal"

RTL_SUFFIXES = (".v", ".sv", ".vh", ".svh", ".vhd", ".vhdl")
SPEC_SUFFIXES = (".md", ".txt", ".rst")


@dataclass(frozen=True)
class RtlCodeMap:
    """Relative path -> full source text, with a per-file line offset index."""

    files: Mapping[str, str]

    def __post_init__(self):
        object.__setattr__(self, "files", dict(sorted(self.files.items())))
        index = {}
        for path, text in self.files.items():
            starts = [0]
            starts.extend(m.end() for m in re.finditer("\n", text))
            index[path] = starts
        object.__setattr__(self, "_line_starts", index)

    @classmethod
    def from_dir(cls, root: str | Path, suffixes: Iterable[str] = RTL_SUFFIXES) -> "RtlCodeMap":
        root = Path(root)
        files = {}
        for p in sorted(root.rglob("*")):
            if p.is_file() and p.suffix in tuple(suffixes):
                with open(p, encoding="utf-8", newline="") as fh:  # keep offsets byte-faithful
                    files[p.relative_to(root).as_posix()] = fh.read()
        return cls(files)

    def lines(self, path: str) -> list[str]:
        return self.files[path].splitlines()

    def line_of(self, path: str, offset: int) -> int:
        """1-based line number containing character ``offset``."""
        starts = self._line_starts[path]
        lo, hi = 0, len(starts) - 1
        while lo < hi:
            mid = (lo + hi + 1) // 2
            if starts[mid] <= offset:
                lo = mid
            else:
                hi = mid - 1
        return lo + 1

    def total_lines(self) -> int:
        return sum(len(t.splitlines()) for t in self.files.values())


@dataclass(frozen=True)
class RtlSnippet:
    path: str
    start_line: int
    end_line: int
    text: str

    def header(self) -> str:
        name = Path(self.path).name
        return f"{name}:{self.start_line}-{self.end_line}"


@dataclass(frozen=True)
class SpecExcerpt:
    doc_id: str
    text: str
    score: float


@dataclass(frozen=True)
class SignalContext:
    signal: str
    rtl_snippets: tuple[RtlSnippet, ...] = ()
    spec_excerpts: tuple[SpecExcerpt, ...] = ()
    retrieved_at: float = 0.0
    flags: tuple[str, ...] = ()

    @property
    def has_rtl(self) -> bool:
        return bool(self.rtl_snippets)

    def rtl_text(self) -> str:
        if not self.rtl_snippets:
            return NO_RTL_CONTEXT
        return "\n".join(f"- File: {s.header()}\n```verilog\n{s.text}\n```" for s in self.rtl_snippets)

    def spec_text(self) -> str:
        if not self.spec_excerpts:
            return "(no specification excerpts matched)"
        return "\n".join(f"- [{e.doc_id}] (match {e.score:.2f}) {e.text}" for e in self.spec_excerpts)


def empty_context(signal: str) -> SignalContext:
    return SignalContext(signal=signal, flags=(NO_RTL_CONTEXT,))


@dataclass(frozen=True)
class ContextCache:
    global_context: Mapping[str, str]
    per_signal: Mapping[str, SignalContext] = field(default_factory=dict)


# ---------------------------------------------------------------------------
# fuzzy matching

_SPLIT = re.compile(r"[\s_\-.\[\]:/(),]+")


def canonical_tokens(text: str) -> list[str]:
    return sorted(t for t in _SPLIT.split(text.lower()) if t)


def edit_distance(a: str, b: str) -> int:
    """Levenshtein distance, two-row dynamic programme."""
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def similarity(a: str, b: str) -> float:
    if not a and not b:
        return 1.0
    return 1.0 - edit_distance(a, b) / max(len(a), len(b))


def _token_cover(xs: list[str], ys: list[str]) -> float:
    return sum(max(similarity(x, y) for y in ys) for x in xs) / len(xs)


def fuzzy_match(signal: str, phrase: str) -> float:
    """Edit-distance similarity between an identifier and a phrase, in [0, 1].

    Both sides are lowercased, split on underscores/spaces/punctuation and
    token-sorted. The score is the best of the whole-string similarity and
    the mean best-token similarity taken from either side, so it is
    symmetric and 1.0 for equal canonical forms.
    """
    xs, ys = canonical_tokens(signal), canonical_tokens(phrase)
    if not xs or not ys:
        return 0.0
    whole = similarity(" ".join(xs), " ".join(ys))
    return max(whole, _token_cover(xs, ys), _token_cover(ys, xs))


# ---------------------------------------------------------------------------
# retrieval


def _signal_patterns(signal: str) -> list[re.Pattern]:
    base = re.sub(r"\[[^\]]*\]", "", signal)
    parts = [p for p in base.split(".") if p]
    pats = []
    for i in range(len(parts)):
        name = ".".join(parts[i:])
        pats.append(re.compile(r"(?<![\w.$])" + re.escape(name) + r"(?![\w$])"))
    return pats


def rtl_snippets(signal: str, rtl: RtlCodeMap, radius: int = SNIPPET_RADIUS) -> list[RtlSnippet]:
    """Lines mentioning ``signal`` with ``radius`` lines of context, overlaps merged.

    Hierarchical names fall back to shorter dotted suffixes when the full
    path never appears in the sources.
    """
    for pat in _signal_patterns(signal):
        out = []
        for path, text in rtl.files.items():
            lines = text.splitlines()
            hits = [i for i, line in enumerate(lines) if pat.search(line)]
            ranges: list[list[int]] = []
            for i in hits:
                lo, hi = max(0, i - radius), min(len(lines) - 1, i + radius)
                if ranges and lo <= ranges[-1][1] + 1:
                    ranges[-1][1] = max(ranges[-1][1], hi)
                else:
                    ranges.append([lo, hi])
            for lo, hi in ranges:
                out.append(RtlSnippet(path, lo + 1, hi + 1, "\n".join(lines[lo : hi + 1])))
        if out:
            return out
    return []


def spec_chunks(spec_docs: Mapping[str, str]) -> list[tuple[str, str]]:
    """Split each document into blank-line separated paragraphs."""
    out = []
    for doc_id, text in sorted(spec_docs.items()):
        for para in re.split(r"\n\s*\n", text):
            para = " ".join(para.split())
            if para:
                out.append((doc_id, para))
    return out


def excerpt_score(signal: str, paragraph: str) -> float:
    """Best fuzzy score of ``signal`` against word windows of the paragraph.

    Windows span as many words as the signal has tokens, or one more.
    """
    n = len(canonical_tokens(signal))
    words = [w for w in re.split(r"\s+", paragraph) if w]
    best = 0.0
    for size in (n, n + 1):
        if size > len(words):
            size = len(words)
        for i in range(len(words) - size + 1):
            best = max(best, fuzzy_match(signal, " ".join(words[i : i + size])))
            if best == 1.0:
                return best
    return best


def load_spec_docs(root: str | Path | None) -> dict[str, str]:
    if root is None:
        return {}
    root = Path(root)
    return {
        p.relative_to(root).as_posix(): p.read_text(encoding="utf-8")
        for p in sorted(root.rglob("*"))
        if p.is_file() and p.suffix in SPEC_SUFFIXES
    }


def _design_overview(rtl: RtlCodeMap) -> str:
    rows = []
    for path, text in rtl.files.items():
        modules = re.findall(r"^\s*module\s+(\w+)", text, flags=re.M)
        rows.append(f"- {path} ({len(text.splitlines())} lines): modules {', '.join(modules) or '(none)'}")
    return "\n".join(rows) if rows else "(no RTL files provided)"


def _spec_requirements(spec_docs: Mapping[str, str], limit: int = 2000) -> str:
    body = []
    used = 0
    for doc_id, para in spec_chunks(spec_docs):
        if used + len(para) > limit:
            break
        body.append(f"[{doc_id}] {para}")
        used += len(para)
    return "\n".join(body) if body else "(no specification documents provided)"


def prefetch(
    signals: Iterable[str],
    rtl: RtlCodeMap,
    spec_docs: Mapping[str, str] | None = None,
    threshold: float = DEFAULT_FUZZY_THRESHOLD,
) -> ContextCache:
    if not 0.0 < threshold <= 1.0:
        raise ValueError(f"threshold must be in (0, 1], got {threshold}")
    spec_docs = spec_docs or {}
    chunks = spec_chunks(spec_docs)
    per_signal = {}
    for sig in sorted(set(signals)):
        snippets = tuple(rtl_snippets(sig, rtl))
        excerpts = []
        for doc_id, para in chunks:
            score = excerpt_score(sig, para)
            if score >= threshold:
                excerpts.append(SpecExcerpt(doc_id, para, round(score, 6)))
        excerpts.sort(key=lambda e: (-e.score, e.doc_id))
        per_signal[sig] = SignalContext(
            signal=sig,
            rtl_snippets=snippets,
            spec_excerpts=tuple(excerpts),
            retrieved_at=time.monotonic(),
            flags=() if snippets else (NO_RTL_CONTEXT,),
        )
    glob = {"design_overview": _design_overview(rtl), "specification": _spec_requirements(spec_docs)}
    return ContextCache(global_context=glob, per_signal=per_signal)


def lookup(cache: ContextCache, signal: str) -> SignalContext:
    return cache.per_signal.get(signal) or empty_context(signal)
