"""Hypothesis-quality and fix-success metrics.

Ranking metrics take judged relevance in *system order*: ``rels[i]`` is
the judge's overall score for the hypothesis the pipeline ranked ``i+1``.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import shutil
import subprocess
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol, Sequence

from . import prompts
from .errors import EvalError
from .fixes import Fix, apply_to_tree, revert_in_tree
from .llm import Gateway, GenerationRequest
from .parsing import extract_json

log = logging.getLogger(__name__)

JUDGE_FIELDS = ("relevance", "preciseness", "causal_timeline", "correctness")
TABLE_COLUMNS = ("Method", "Quality@Best", "NDCG@5", "MRR", "Kendall's τ", "Pass@1", "Pass@5")
PASS, FAIL, ERROR = "pass", "fail", "error"


class DegenerateRanking(EvalError):
    pass


# ---------------------------------------------------------------------------
# judging


@dataclass(frozen=True)
class JudgedScores:
    relevance: float
    preciseness: float
    causal_timeline: float
    correctness: float
    reasoning: str = ""

    @property
    def overall(self) -> float:
        return sum(getattr(self, f) for f in JUDGE_FIELDS) / len(JUDGE_FIELDS)

    def to_dict(self) -> dict:
        d = {f: getattr(self, f) for f in JUDGE_FIELDS}
        d.update(overall=self.overall, reasoning=self.reasoning)
        return d


def parse_judgement(text: str) -> JudgedScores:
    d = extract_json(text, dict)
    vals = {}
    for f in JUDGE_FIELDS:
        v = d.get(f)
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not 0.0 <= v <= 1.0:
            raise ValueError(f"judge field {f!r} must be in [0, 1], got {v!r}")
        vals[f] = float(v)
    return JudgedScores(**vals, reasoning=str(d.get("reasoning", "")))


def judge_hypothesis(
    hypothesis: str,
    golden_answer: str,
    rank: int,
    gateway: Gateway,
    problem_description: str = "",
) -> JudgedScores | None:
    """Score one hypothesis against the golden answer; ``None`` if unparseable."""
    if not hypothesis.strip() or not golden_answer.strip():
        raise EvalError("hypothesis and golden answer must be non-empty")
    prompt = prompts.render(
        prompts.JUDGE,
        problem_description=problem_description.strip() or "(none provided)",
        golden_answer=golden_answer.strip(),
        hypothesis_rank=rank,
        hypothesis=hypothesis.strip(),
    )
    try:
        return parse_judgement(gateway.generate(GenerationRequest(prompt=prompt, tag="judge")))
    except ValueError as exc:
        log.warning("judge reply for rank %d unusable: %s", rank, exc)
        return None


# ---------------------------------------------------------------------------
# ranking metrics


def quality_at_best(overalls: Sequence[float]) -> float:
    if not overalls:
        raise EvalError("Quality@Best needs at least one hypothesis")
    return max(overalls)


def mean(xs: Sequence[float]) -> float:
    return sum(xs) / len(xs) if xs else float("nan")


def dcg(rels: Sequence[float], k: int) -> float:
    return sum(r / math.log2(i + 2) for i, r in enumerate(rels[:k]))


def ndcg_at_k(rels: Sequence[float], k: int = 5, binary: bool = False, threshold: float = 0.5) -> float:
    """Linear-gain NDCG over judged relevance in system order (1.0 if all zero)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if binary:
        rels = [1.0 if r >= threshold else 0.0 for r in rels]
    ideal = dcg(sorted(rels, reverse=True), k)
    if ideal == 0:
        return 1.0
    return dcg(list(rels), k) / ideal


def reciprocal_rank(rels: Sequence[float], threshold: float = 0.5) -> float:
    for i, r in enumerate(rels, 1):
        if r >= threshold:
            return 1.0 / i
    return 0.0


def mrr(orders: Sequence[Sequence[float]], threshold: float = 0.5) -> float:
    return mean([reciprocal_rank(r, threshold) for r in orders])


def _merge_count(a: list[float]) -> tuple[list[float], int]:
    """Merge sort returning the number of inversions (strict a[i] > a[j], i < j)."""
    if len(a) <= 1:
        return a, 0
    mid = len(a) // 2
    left, x = _merge_count(a[:mid])
    right, y = _merge_count(a[mid:])
    out, swaps, i, j = [], x + y, 0, 0
    while i < len(left) and j < len(right):
        if right[j] < left[i]:
            out.append(right[j])
            swaps += len(left) - i
            j += 1
        else:
            out.append(left[i])
            i += 1
    out.extend(left[i:])
    out.extend(right[j:])
    return out, swaps


def _tied_pairs(xs: Sequence) -> int:
    total, run = 0, 1
    for i in range(1, len(xs) + 1):
        if i < len(xs) and xs[i] == xs[i - 1]:
            run += 1
        else:
            total += run * (run - 1) // 2
            run = 1
    return total


def kendall_tau(system: Sequence[float], truth: Sequence[float]) -> float:
    """Tie-corrected Kendall tau-b in O(n log n) (Knight's algorithm)."""
    n = len(system)
    if n != len(truth):
        raise ValueError("rankings must cover the same items")
    if n < 2:
        raise DegenerateRanking("tau needs at least two items")
    pairs = sorted(zip(system, truth))
    n0 = n * (n - 1) // 2
    n1 = _tied_pairs([p[0] for p in pairs])
    n3 = _tied_pairs(pairs)
    _, swaps = _merge_count([p[1] for p in pairs])
    n2 = _tied_pairs(sorted(truth))
    if n0 == n1 or n0 == n2:
        raise DegenerateRanking("one ranking is entirely tied")
    return (n0 - n1 - n2 + n3 - 2 * swaps) / math.sqrt((n0 - n1) * (n0 - n2))


def system_scores(n: int) -> list[float]:
    """Rank positions 1..n as scores where larger means ranked higher."""
    return [float(n - i) for i in range(n)]


# ---------------------------------------------------------------------------
# fix verification


class Verifier(Protocol):
    def __call__(self, fix: Fix, problem: str, sandbox: Path) -> str: ...


@dataclass
class TableVerifier:
    """Mock re-verification: outcome looked up by fix signature."""

    table: dict[str, str]
    default: str = FAIL

    @classmethod
    def load(cls, path: str | Path) -> "TableVerifier":
        d = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(dict(d.get("outcomes", {})), d.get("default", FAIL))

    def __call__(self, fix: Fix, problem: str, sandbox: Path) -> str:
        return self.table.get(fix.signature, self.default)


@dataclass
class CommandVerifier:
    """Re-verification by an external command run inside the patched sandbox.

    Exit status 0 is a pass, 1 a fail, anything else an error.
    """

    command: Sequence[str]
    timeout: float = 600.0

    def __call__(self, fix: Fix, problem: str, sandbox: Path) -> str:
        args = [a.format(problem=problem, sandbox=str(sandbox)) for a in self.command]
        try:
            proc = subprocess.run(args, cwd=sandbox, capture_output=True, timeout=self.timeout)
        except (OSError, subprocess.TimeoutExpired) as exc:
            log.warning("verifier command failed: %s", exc)
            return ERROR
        return {0: PASS, 1: FAIL}.get(proc.returncode, ERROR)


def _snapshot(root: Path) -> dict[str, bytes]:
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@dataclass
class PassRecord:
    outcomes: list[str]

    def passed_at(self, k: int) -> bool:
        return PASS in self.outcomes[:k]


def verify_fixes(
    fixes: Sequence[Fix],
    verifier: Callable[[Fix, str, Path], str],
    rtl_root: str | Path,
    problem: str = "",
    limit: int = 5,
) -> PassRecord:
    """Try the top ``limit`` fixes one at a time in a sandbox copy of ``rtl_root``.

    Every attempt patches, verifies and reverts; the sandbox is checked
    byte-for-byte against the original afterwards.
    """
    outcomes = []
    with tempfile.TemporaryDirectory(prefix="cexroot-sandbox-") as tmp:
        sandbox = Path(tmp) / "rtl"
        shutil.copytree(rtl_root, sandbox)
        before = _snapshot(sandbox)
        for fix in fixes[:limit]:
            original = None
            try:
                original = apply_to_tree(sandbox, fix)
                outcome = verifier(fix, problem, sandbox)
            except Exception as exc:  # a broken verifier is a failed attempt
                log.warning("verification of %s raised: %s", fix.signature, exc)
                outcome = ERROR
            finally:
                if original is not None:
                    revert_in_tree(sandbox, fix, original)
            outcomes.append(outcome if outcome in (PASS, FAIL, ERROR) else ERROR)
        if _snapshot(sandbox) != before:
            raise EvalError("sandbox differs from the original after verification")
    return PassRecord(outcomes)


def pass_at_k(
    fixes: Sequence[Fix],
    verifier: Callable[[Fix, str, Path], str],
    k: int,
    rtl_root: str | Path,
    problem: str = "",
) -> bool:
    if k < 1:
        raise ValueError("k must be >= 1")
    return verify_fixes(fixes, verifier, rtl_root, problem, limit=k).passed_at(k)


# ---------------------------------------------------------------------------
# per-problem and corpus aggregation


@dataclass
class ProblemMetrics:
    problem: str
    judged: list[float | None]
    pass_outcomes: list[str] = field(default_factory=list)

    @property
    def rels(self) -> list[float]:
        return [j for j in self.judged if j is not None]

    @property
    def missing_judgements(self) -> int:
        return sum(j is None for j in self.judged)

    def quality_at_best(self) -> float | None:
        return quality_at_best(self.rels) if self.rels else None

    def ndcg(self, k: int = 5, binary: bool = False) -> float | None:
        return ndcg_at_k(self.rels, k, binary) if self.rels else None

    def rr(self, threshold: float = 0.5) -> float | None:
        return reciprocal_rank(self.rels, threshold) if self.rels else None

    def tau(self) -> float | None:
        try:
            return kendall_tau(system_scores(len(self.rels)), self.rels)
        except DegenerateRanking:
            return None

    def passed_at(self, k: int) -> bool:
        return PASS in self.pass_outcomes[:k]

    def to_dict(self) -> dict:
        return {
            "problem": self.problem,
            "judged": self.judged,
            "pass_outcomes": self.pass_outcomes,
            "quality_at_best": self.quality_at_best(),
            "ndcg_at_5": self.ndcg(),
            "reciprocal_rank": self.rr(),
            "kendall_tau": self.tau(),
            "pass_at_1": self.passed_at(1),
            "pass_at_5": self.passed_at(5),
        }


def _mean_present(xs) -> float | None:
    xs = [x for x in xs if x is not None]
    return mean(xs) if xs else None


def aggregate(problems: Sequence[ProblemMetrics], method: str = "cexroot", binary_ndcg: bool = False, threshold: float = 0.5) -> dict:
    return {
        "Method": method,
        "Quality@Best": _mean_present(p.quality_at_best() for p in problems),
        "NDCG@5": _mean_present(p.ndcg(5, binary_ndcg) for p in problems),
        "MRR": _mean_present(p.rr(threshold) for p in problems),
        "Kendall's τ": _mean_present(p.tau() for p in problems),
        "Pass@1": mean([float(p.passed_at(1)) for p in problems]) if problems else None,
        "Pass@5": mean([float(p.passed_at(5)) for p in problems]) if problems else None,
    }


def results_table(rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TABLE_COLUMNS)
    for row in rows:
        cells = []
        for c in TABLE_COLUMNS:
            v = row.get(c)
            cells.append("" if v is None else (f"{v:.3f}" if isinstance(v, float) else str(v)))
        w.writerow(cells)
    return buf.getvalue()
