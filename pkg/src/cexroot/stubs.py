"""Scripted model stand-ins for tests, demos and fixture recording.

These read the prompts the pipeline builds and answer in the expected
reply formats, so whole runs can execute offline.
"""

from __future__ import annotations

import json
import random
import re
from dataclasses import dataclass, field
from typing import Callable, Mapping

from .llm import GenerationRequest

_ROW = re.compile(r"^\| (n\d+) \| (.+?) \| (\d+) \| (.*?) \|$", re.M)
_FRONTIER = re.compile(r"^- (\S+@\d+): ", re.M)
_HYP_ID = re.compile(r"^### Hypothesis (\S+):", re.M)
_NODE = re.compile(r"^Node to analyze: (.+?) at cycle (\d+)$", re.M)
_SEED = re.compile(r"^Node: (.+?) at cycle (\d+)$", re.M)


def table_rows(prompt: str) -> list[tuple[str, str, int, str]]:
    """``(node_id, signal, cycle, value)`` rows of a scan prompt's node table."""
    return [(m[1], m[2], int(m[3]), m[4]) for m in _ROW.finditer(prompt)]


def frontier_keys(prompt: str) -> list[str]:
    return _FRONTIER.findall(prompt)


def hypothesis_ids(prompt: str) -> list[str]:
    return _HYP_ID.findall(prompt)


def analysed_node(prompt: str) -> str | None:
    m = _NODE.search(prompt) or _SEED.search(prompt)
    return f"{m[1]}@{m[2]}" if m else None


def analysis_markdown(
    behaviour: str,
    for_args: tuple[str, ...] = ("Value could hide a timing problem.", "An edge case may not be covered."),
    against_args: tuple[str, ...] = ("Value follows from its drivers.", "Nothing in the spec contradicts it."),
    conclusion: str = "Consistent with the surrounding logic.",
    root: str = "Not a root cause.",
    fix: str = "No fix required",
) -> str:
    out = [
        "## Signal Behavior", behaviour, "",
        "## RTL Evidence", "- File: (see context)", "",
        "## Arguments FOR Being Suspicious (REQUIRED - MIN 2)", *(f"- {a}" for a in for_args), "",
        "## Arguments AGAINST Being Suspicious (REQUIRED - MIN 2)", *(f"- {a}" for a in against_args), "",
        "## Balanced Conclusion", conclusion, "",
        "## Root Cause vs Symptom", root, "",
        "## Fix Required", fix,
    ]
    return "\n".join(out)


@dataclass(frozen=True)
class Verdict:
    suspicious: bool = False
    score: float = 0.1
    importance: float = 0.3
    key_event: bool = False
    markdown: str | None = None


def scan_reply(prompt: str, verdicts: Mapping[str, Verdict] | None = None) -> str:
    """Reply covering every table row; unknown nodes get a benign verdict."""
    verdicts = verdicts or {}
    out = {}
    for nid, signal, cycle, value in table_rows(prompt):
        v = verdicts.get(f"{signal}@{cycle}", Verdict())
        out[nid] = {
            "is_suspicious": v.suspicious,
            "is_key_event": v.key_event,
            "suspicion_score": v.score,
            "importance_score": v.importance,
            "causal_validity": {},
            "analysis": v.markdown or analysis_markdown(f"{signal} is {value} at cycle {cycle}."),
        }
    return json.dumps(out, indent=1)


def benign_scan(request: GenerationRequest) -> str:
    return scan_reply(request.prompt)


@dataclass
class RandomResponder:
    """Seeded random answers for every pipeline stage (property tests).

    ``garble`` is the chance that any reply is unusable text.
    """

    seed: int = 0
    garble: float = 0.0
    rng: random.Random = field(init=False)

    def __post_init__(self):
        self.rng = random.Random(self.seed)

    def __call__(self, request: GenerationRequest) -> str:
        r = self.rng
        if self.garble and r.random() < self.garble:
            return "I cannot answer that."
        tag, prompt = request.tag, request.prompt
        if tag == "scan":
            verdicts = {}
            for _, signal, cycle, _ in table_rows(prompt):
                s = round(r.random(), 3)
                verdicts[f"{signal}@{cycle}"] = Verdict(r.random() < 0.5, s, round(r.random(), 3), r.random() < 0.3)
            return scan_reply(prompt, verdicts)
        if tag == "rove.seed":
            return json.dumps({"title": f"Theory {r.randrange(1000)}", "hypothesis": "Something upstream is wrong.",
                               "initial_insights": ["first look"]})
        if tag == "rove.select":
            keys = frontier_keys(prompt)
            picks = r.sample(keys, min(len(keys), r.randint(0, 4))) + (["bogus@1"] if r.random() < 0.2 else [])
            return json.dumps({"targets": picks})
        if tag == "rove.analyze":
            n_for, n_against = r.randint(0, 3), r.randint(0, 3)
            return json.dumps({
                "is_relevant": r.random() < 0.8,
                "is_critical": r.random() < 0.3,
                "event_description": "observed",
                "importance": round(r.random(), 3),
                "evidence_strength": round(r.random(), 3),
                "evidence_for": [f"fact {r.randrange(50)}" for _ in range(n_for)],
                "evidence_against": [f"counter {r.randrange(50)}" for _ in range(n_against)],
                "new_insights": [],
            })
        if tag == "rove.rank":
            recs = [
                {"hypothesis_id": hid, **{c: round(r.random(), 3) for c in
                 ("sufficiency", "evidence", "mechanistic_insight", "actionability", "coherence")},
                 "overall_score": r.random()}
                for hid in hypothesis_ids(prompt)
            ]
            r.shuffle(recs)
            return json.dumps(recs)
        if tag == "rove.pairwise":
            ids = re.findall(r"HYPOTHESIS [AB] \(ID: (\S+)\)", prompt)
            return json.dumps({"winner": r.choice(ids) if ids else ""})
        if tag == "judge":
            return json.dumps({k: round(r.random(), 2) for k in ("relevance", "preciseness", "causal_timeline", "correctness")})
        return json.dumps({"fixes": []})


def routed(routes: Mapping[str, Callable[[GenerationRequest], str]], default: Callable[[GenerationRequest], str] | None = None):
    """Dispatch by exact tag, then by tag prefix before the first dot."""

    def respond(request: GenerationRequest) -> str:
        fn = routes.get(request.tag) or routes.get(request.tag.split(".", 1)[0]) or default
        if fn is None:
            raise KeyError(f"no scripted reply for tag {request.tag!r}")
        return fn(request)

    return respond
