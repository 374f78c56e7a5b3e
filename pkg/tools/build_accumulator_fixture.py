"""Regenerate the bundled accumulator problem: dump, verifier table and cassette.

The cassette is recorded from a scripted responder that plays the model,
so the fixture changes whenever a prompt template does. Run from the
repository root:

    python3 tools/build_accumulator_fixture.py [problem_dir]
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

from cexroot.config import RunConfig
from cexroot.corpus import evaluate_problem, load_problem
from cexroot.fixes import signature_of
from cexroot.graph import SignalEvent
from cexroot.llm import GenerationRequest
from cexroot.oracle import DumpOracle, write_dump
from cexroot import stubs

DEFAULT_DIR = Path(__file__).resolve().parents[1] / "src" / "cexroot" / "data" / "corpus" / "accumulator"
ROOT = "accu.valid_out_check_2_assertion"

# (signal, cycle, value, causes)
EVENTS = [
    (ROOT, 3, "FAIL", ["valid_out@3", "count@3", "valid_in@3"]),
    ("valid_out", 3, "1'b0", ["end_cnt@2", "valid_out@2"]),
    ("count", 3, "2'b11", ["count@2", "ready_add@2"]),
    ("valid_in", 3, "1'b1", []),
    ("end_cnt", 2, "1'b0", ["ready_add@2", "count@2"]),
    ("valid_out", 2, "1'b0", ["end_cnt@1", "valid_out@1"]),
    ("count", 2, "2'b11", ["count@1", "ready_add@1"]),
    ("ready_add", 2, "1'b0", ["valid_out@2", "valid_in@2"]),
    ("valid_in", 2, "1'b1", []),
    ("end_cnt", 1, "1'b0", ["ready_add@1", "count@1"]),
    ("ready_add", 1, "1'b0", ["valid_out@1", "valid_in@1"]),
    ("valid_out", 1, "1'b0", []),
    ("valid_in", 1, "1'b1", []),
    ("count", 1, "2'b11", []),
]

BUGGY = "assign ready_add = valid_out | !valid_in;"
FIXED = "assign ready_add = valid_in & !valid_out;"

# -- scanner verdicts ------------------------------------------------------

READY_ADD_MD = stubs.analysis_markdown(
    "ready_add is 1'b0 at cycle 1 while valid_in is 1'b1 and valid_out is 1'b0.",
    for_args=(
        "The logic `valid_out | !valid_in` seems counterintuitive because `ready_add` should ideally be high "
        "when `valid_in` is high (indicating new data is ready), not when it's low.",
        "The dependency on `valid_out` being high to set `ready_add` might create a circular dependency or delay "
        "in processing new inputs when `valid_out` is low.",
    ),
    against_args=(
        "The design might intend for `ready_add` to be high in scenarios other than just new data arrival, "
        "such as during certain states of output validity.",
        "The inversion of `valid_in` might be a design choice to handle specific edge cases or reset conditions "
        "not detailed in the provided context.",
    ),
    conclusion="The behavior of `ready_add` is suspicious due to its reliance on the inverted `valid_in`, which "
    "contradicts typical ready signal behavior. This is likely a root cause of potential data handling issues.",
    root="Classification: ROOT CAUSE (Suspicion score: 0.70)",
    fix=f"Replace `{BUGGY}` with `{FIXED}`.",
)

VALID_OUT_MD = stubs.analysis_markdown(
    "valid_out stays 1'b0 at cycle 3 although the assertion expects it high.",
    for_args=("The assertion fires on exactly this value.", "valid_out is only raised through end_cnt."),
    against_args=("The register just follows end_cnt from the previous cycle.", "No logic on this register looks wrong."),
    conclusion="A symptom: valid_out is low because end_cnt never rose.",
    root="Symptom of the ready_add logic feeding end_cnt.",
)

VERDICTS = {
    "ready_add@1": stubs.Verdict(True, 0.70, 0.9, True, READY_ADD_MD),
    "valid_out@3": stubs.Verdict(True, 0.40, 0.8, True, VALID_OUT_MD),
    "end_cnt@1": stubs.Verdict(False, 0.35, 0.7, True),
    "ready_add@2": stubs.Verdict(False, 0.30, 0.5),
    "end_cnt@2": stubs.Verdict(False, 0.30, 0.5),
    "count@1": stubs.Verdict(False, 0.20, 0.4),
}

# -- rover script ----------------------------------------------------------

SEEDS = {
    "ready_add@1": {
        "title": "Wrong Condition in ready_add Signal",
        "hypothesis": "ready_add is built with an OR of valid_out and the inverted valid_in, so it is low exactly "
        "when a valid beat arrives and the count never completes.",
        "initial_insights": ["ready_add gates both the beat counter and end_cnt."],
    },
    "end_cnt@1": {
        "title": "Upstream Control Logic Issue",
        "hypothesis": "The control chain feeding end_cnt keeps it low when count reaches 3, so valid_out is never "
        "set two cycles later.",
        "initial_insights": ["end_cnt is the only path that raises valid_out."],
    },
}

# per narrative: nodes to ask for first, and relevant-node verdicts
PLANS = {
    "Wrong Condition": (
        ["end_cnt@1", "valid_in@1"],
        {
            "end_cnt@1": dict(
                is_critical=True,
                event_description="end_cnt is 1'b0 although count is 2'b11; it is gated by ready_add.",
                importance=0.5, evidence_strength=0.4,
                evidence_for=[
                    "accu.v: `assign end_cnt = ready_add && (count == 'd3);` so a low ready_add blocks end_cnt.",
                    "count is 2'b11 at cycle 1, so only ready_add keeps end_cnt low.",
                ],
                evidence_against=["end_cnt being low is the documented result when ready_add is low."],
            ),
            "valid_in@1": dict(
                event_description="valid_in is 1'b1: a valid beat is offered.",
                importance=0.85, evidence_strength=0.6,
                evidence_against=["The property may simply be missing an assumption on valid_in."],
            ),
        },
    ),
    "Upstream Control": (
        ["ready_add@1", "count@1", "valid_out@2", "valid_out@3"],
        {
            "ready_add@1": dict(
                event_description="ready_add is 1'b0, which holds end_cnt low.",
                importance=0.5, evidence_strength=0.5,
                evidence_for=[
                    "accu.v: `always` block for valid_out has `else if (end_cnt) valid_out <= 1'b1;`, and end_cnt "
                    "needs ready_add.",
                    "The assertion accu.valid_out_check_2_assertion fails at cycle 3 with valid_out low.",
                ],
            ),
            "count@1": dict(
                event_description="count is 2'b11, the value at which end_cnt should fire.",
                importance=0.8, evidence_strength=0.5,
                evidence_for=["count already equals 3 at cycle 1."],
                evidence_against=[
                    "Gating end_cnt on ready_add is deliberate in the RTL, so a low end_cnt follows the design.",
                    "The OR form of ready_add could be intended for a particular input protocol.",
                ],
            ),
            "valid_out@3": dict(
                event_description="valid_out is still low when the assertion samples it.",
                importance=0.9, evidence_strength=0.7,
                evidence_for=["valid_out is 1'b0 at cycle 3, which is what the assertion reports."],
                evidence_against=["valid_out itself is a plain register and follows end_cnt."],
            ),
        },
    ),
}

RANK_SCORES = {
    "Upstream Control": (0.80, 0.75, 0.70, 0.60, 0.85),
    "Wrong Condition": (0.70, 0.70, 0.65, 0.70, 0.80),
}

JUDGE_SCORES = {
    "Wrong Condition": (0.95, 0.90, 0.70, 0.95),
    "Upstream Control": (0.70, 0.50, 0.80, 0.60),
}


def _plan(prompt: str):
    narrative = prompt.split("Narrative: ", 1)[1]
    return next(plan for name, plan in PLANS.items() if name in narrative.split("\n", 1)[0])


def _fix(buggy: str, code: str, confidence: float, description: str) -> dict:
    return {
        "buggy_code": buggy,
        "code": code,
        "description": description,
        "confidence": confidence,
        "location": {"module": "accu", "signal": "ready_add", "file": "accu.v", "line": 15},
    }


MAIN = _fix(BUGGY, FIXED, 0.9, "Be ready only when a valid beat arrives and no result is being presented.")

FIX_REPLIES = {
    "full_context": [[MAIN, _fix("assign end_cnt = ready_add && (count == 'd3);",
                                 "assign end_cnt = valid_in && (count == 'd3);", 0.5,
                                 "Count the final beat from valid_in directly.")]],
    "suspicious_focus": [[_fix(BUGGY, "assign ready_add = !valid_out & valid_in;", 0.85,
                               "Swap the polarity so valid input enables accumulation.")]],
    "causal_narratives_focus": [[_fix("assign ready_add =\tvalid_out | !valid_in;", FIXED, 0.8,
                                      "Accumulate on valid input while the output is idle.")]],
    "minimal_context": [[MAIN, _fix(BUGGY, "assign ready_add = valid_in;", 0.4, "Accept every valid beat.")]],
    # first answer uses a placeholder and is rejected, the retry succeeds
    "bugs_and_suggestions_only": [
        [_fix(BUGGY, "assign ready_add = TODO;", 0.6, "placeholder")],
        [_fix(BUGGY, FIXED, 0.85, "Follow the Fix Required note of the scan.")],
    ],
    "best_of": [[MAIN]],
}


def responder():
    attempts: dict[str, int] = {}

    def respond(req: GenerationRequest) -> str:
        tag, prompt = req.tag, req.prompt
        if tag == "scan":
            return stubs.scan_reply(prompt, VERDICTS)
        if tag == "rove.seed":
            return json.dumps(SEEDS[stubs.analysed_node(prompt)])
        if tag == "rove.select":
            wanted, _ = _plan(prompt)
            listed = stubs.frontier_keys(prompt)
            return json.dumps({"targets": [k for k in wanted if k in listed][:3]})
        if tag == "rove.analyze":
            _, verdicts = _plan(prompt)
            v = verdicts.get(stubs.analysed_node(prompt))
            if v is None:
                return json.dumps({"is_relevant": False, "is_critical": False, "importance": 0.0,
                                   "evidence_strength": 0.0, "evidence_for": [], "evidence_against": [],
                                   "new_insights": []})
            return json.dumps({"is_relevant": True, "is_critical": False, "evidence_for": [],
                               "evidence_against": [], "new_insights": [], **v})
        if tag == "rove.rank":
            out = []
            for block in prompt.split("### Hypothesis ")[1:]:
                hid = block.split(":", 1)[0]
                name = next(n for n in RANK_SCORES if n in block.split("\n", 1)[0])
                s = RANK_SCORES[name]
                out.append({"hypothesis_id": hid, "sufficiency": s[0], "evidence": s[1],
                            "mechanistic_insight": s[2], "actionability": s[3], "coherence": s[4],
                            "reasoning": f"{name} scored on its evidence."})
            return json.dumps(out, indent=1)
        if tag.startswith("fix."):
            strategy = tag.split(".", 1)[1]
            n = attempts.get(strategy, 0)
            attempts[strategy] = n + 1
            replies = FIX_REPLIES[strategy]
            return json.dumps({"category": "RTL Bug", "analysis": "ready_add polarity is inverted.",
                               "fixes": replies[min(n, len(replies) - 1)]}, indent=1)
        if tag == "judge":
            name = next(n for n in JUDGE_SCORES if n in prompt.split("HYPOTHESIS TO EVALUATE", 1)[1])
            r = JUDGE_SCORES[name]
            return json.dumps({"relevance": r[0], "preciseness": r[1], "causal_timeline": r[2],
                               "correctness": r[3], "reasoning": "Compared with the golden answer."})
        raise KeyError(f"no scripted reply for {tag}")

    return respond


def write_inputs(target: Path) -> None:
    events = {f"{s}@{c}": SignalEvent(s, c, v) for s, c, v, _ in EVENTS}
    parents = {f"{s}@{c}": list(p) for s, c, _, p in EVENTS}
    write_dump(DumpOracle(f"{ROOT}@3", events, parents), target / "dump.json")
    sig = signature_of(MAIN["buggy_code"], MAIN["code"])
    (target / "verifier.json").write_text(
        json.dumps({"default": "fail", "outcomes": {sig: "pass"}}, indent=2) + "\n", encoding="utf-8"
    )


def build(target: Path, out_dir: Path) -> None:
    write_inputs(target)
    cassette = target / "cassette.jsonl"
    if cassette.exists():
        cassette.unlink()
    config = RunConfig(mode="record", cassette=str(cassette), max_in_flight=1)
    evaluate_problem(load_problem(target), config, out_dir, transport=responder())


if __name__ == "__main__":
    import tempfile

    target = Path(sys.argv[1]) if len(sys.argv) > 1 else DEFAULT_DIR
    with tempfile.TemporaryDirectory() as tmp:
        build(target, Path(tmp))
    print(f"wrote {target}")
