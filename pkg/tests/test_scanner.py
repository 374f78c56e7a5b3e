import json
import math
import random

import pytest
from hypothesis import given, settings, strategies as st

from cexroot import prompts, stubs
from cexroot.context import NO_RTL_CONTEXT, RtlCodeMap, prefetch
from cexroot.graph import CausalGraph, SignalEvent
from cexroot.llm import TokenBudget, scripted
from cexroot.scanner import (
    MissingAnalysis,
    MissingForAgainst,
    NO_SCENARIO,
    NodeAnalysis,
    SchemaViolation,
    ScanConfig,
    ScanResult,
    SingleNodeOverBudget,
    Unparseable,
    binary_search_max_batch,
    build_scan_prompt,
    parse_scan_response,
    scan,
)

from conftest import ACC, GOLDEN, acc_stage_inputs, cassette_responses


def linear_cost_builder(overhead, costs):
    """Prompt whose token count is overhead + sum of the batch's node costs (4 bytes per token)."""
    builds = []

    def build(batch):
        builds.append(len(batch))
        return "x" * (4 * (overhead + sum(costs[i] for i in batch)))

    return build, builds


def linear_scan_oracle(overhead, costs, budget):
    best = 0
    for n in range(1, len(costs) + 1):
        if overhead + sum(costs[:n]) <= budget:
            best = n
    return best


# --- batching -------------------------------------------------------------

def test_analytic_batch_size_is_45():
    build, _ = linear_cost_builder(5000, [1000] * 170)
    assert binary_search_max_batch(list(range(170)), TokenBudget(50_000), build) == 45


def test_single_node_fits():
    build, _ = linear_cost_builder(10, [5])
    assert binary_search_max_batch([0], 100, build) == 1


def test_single_node_over_budget():
    build, _ = linear_cost_builder(10, [500])
    with pytest.raises(SingleNodeOverBudget):
        binary_search_max_batch([0], 100, build)


@settings(max_examples=200)
@given(st.integers(0, 3000), st.lists(st.integers(1, 2000), min_size=1, max_size=120), st.integers(1, 60_000))
def test_batch_matches_linear_scan(overhead, costs, budget):
    build, builds = linear_cost_builder(overhead, costs)
    nodes = list(range(len(costs)))
    want = linear_scan_oracle(overhead, costs, budget)
    if want == 0:
        with pytest.raises(SingleNodeOverBudget):
            binary_search_max_batch(nodes, budget, build)
        return
    got = binary_search_max_batch(nodes, budget, build)
    assert got == want
    assert len(builds) - 1 <= math.ceil(math.log2(len(nodes))) + 2


# --- prompt ---------------------------------------------------------------

def test_golden_prompt_ready_add():
    graph, inputs, cache, _ = acc_stage_inputs()
    prompt = build_scan_prompt(["ready_add@1"], graph, cache, inputs.scenario)
    assert prompt == (GOLDEN / "scan_prompt_ready_add.txt").read_text()
    assert "| n1 | ready_add | 1 | 1'b0 |" in prompt
    assert "assign ready_add = valid_out | !valid_in;" in prompt
    assert prompt.endswith(prompts.SCAN_INSTRUCTIONS)


def test_prompt_section_order():
    graph, inputs, cache, _ = acc_stage_inputs()
    prompt = build_scan_prompt(["ready_add@1"], graph, cache, inputs.scenario)
    heads = ["SCENARIO", "GLOBAL CONTEXT", "NODES TO ANALYZE", "SUBGRAPH EDGE LIST", "NODE-SPECIFIC CONTEXT"]
    positions = [prompt.index(h) for h in heads]
    assert positions == sorted(positions)


def test_empty_scenario_marked():
    graph, _, cache, _ = acc_stage_inputs()
    prompt = build_scan_prompt(["ready_add@1"], graph, cache, "")
    assert NO_SCENARIO in prompt


def test_missing_rtl_context_stated():
    graph, _, _, _ = acc_stage_inputs()
    cache = prefetch({e.signal for e in graph.nodes.values()}, RtlCodeMap({}))
    assert NO_RTL_CONTEXT in build_scan_prompt(["ready_add@1"], graph, cache, "x")


# --- parsing --------------------------------------------------------------

def rec(score=0.2, suspicious=False, md=None, **extra):
    return {
        "is_suspicious": suspicious,
        "is_key_event": False,
        "suspicion_score": score,
        "importance_score": 0.5,
        "causal_validity": {},
        "analysis": md or stubs.analysis_markdown("steady"),
        **extra,
    }


def test_two_node_reply():
    out = parse_scan_response(json.dumps({"n1": rec(), "n2": rec()}), ["a@1", "b@1"])
    assert all(isinstance(v, NodeAnalysis) for v in out.values()) and len(out) == 2


def test_reply_in_prose_and_fence():
    text = "Sure, here it is:\n```json\n" + json.dumps({"n1": rec()}) + "\n```\nHope this helps."
    assert isinstance(parse_scan_response(text, ["a@1"])["a@1"], NodeAnalysis)


def test_score_out_of_range():
    out = parse_scan_response(json.dumps({"n1": rec(1.4)}), ["a@1"])
    assert isinstance(out["a@1"], SchemaViolation) and out["a@1"].field == "suspicion_score"


def test_missing_node():
    out = parse_scan_response(json.dumps({"n1": rec()}), ["a@1", "b@1"])
    assert isinstance(out["b@1"], MissingAnalysis)


def test_too_few_bullets():
    md = stubs.analysis_markdown("x", for_args=("only one",))
    out = parse_scan_response(json.dumps({"n1": rec(md=md)}), ["a@1"])
    assert isinstance(out["a@1"], MissingForAgainst)


def test_unparseable():
    with pytest.raises(Unparseable):
        parse_scan_response("no json here", ["a@1"])


def test_suspicion_floor():
    out = parse_scan_response(json.dumps({"n1": rec(0.4, True), "n2": rec(0.5, True)}), ["a@1", "b@1"])
    assert out["a@1"].is_suspicious is False and out["a@1"].model_flagged is True
    assert out["b@1"].is_suspicious is True


def test_keys_by_node_key_and_parent_labels():
    r = rec(causal_validity={"n2 (b@0)": True, "c@0": False})
    out = parse_scan_response(json.dumps({"a@1": r}), ["a@1", "b@0"])
    assert out["a@1"].causal_validity == {"b@0": True, "c@0": False}


def test_appendix_b_ready_add():
    md = (GOLDEN / "appb_ready_add_analysis.md").read_text()
    assert "ROOT CAUSE (Suspicion score: 0.70)" in md
    out = parse_scan_response(json.dumps({"n1": rec(0.70, True, md)}), ["ready_add@1"])
    a = out["ready_add@1"]
    assert a.suspicion_score == 0.70 and a.is_suspicious
    assert len(a.arguments_for) == 2 and len(a.arguments_against) == 2


# --- the scan loop ------------------------------------------------------------

def test_one_node_benign():
    g = CausalGraph([SignalEvent("P", 1, "FAIL")], [], "P@1")
    result = scan(g, prefetch(["P"], RtlCodeMap({})), scripted(stubs.benign_scan))
    assert result.suspicious == [] and list(result.analyses) == ["P@1"] and result.batches_issued == 1


def test_accumulator_replay_flags_ready_add():
    graph, inputs, cache, _ = acc_stage_inputs()
    replies = iter(cassette_responses(ACC, "scan"))
    result = scan(graph, cache, scripted(lambda r: next(replies)), ScanConfig(inputs.scenario))
    assert result.suspicious == ["ready_add@1"]
    assert result.analyses["ready_add@1"].suspicion_score == 0.70
    assert not result.unanalyzed and len(result.analyses) == len(graph)


def test_level_order_and_parent_summaries():
    graph, inputs, cache, _ = acc_stage_inputs()
    seen = []

    def respond(req):
        rows = stubs.table_rows(req.prompt)
        seen.append([f"{s}@{c}" for _, s, c, _ in rows])
        return stubs.benign_scan(req)

    scan(graph, cache, scripted(respond, max_in_flight=1), ScanConfig(inputs.scenario))
    level = {k: i for i, layer in enumerate(graph.levels) for k in layer}
    flat = [level[k] for batch in seen for k in batch]
    assert flat == sorted(flat)


def test_retry_with_strict_reminder_then_unanalyzed():
    g = CausalGraph([SignalEvent("P", 1, "FAIL")], [], "P@1")
    prompts_seen = []

    def bad(req):
        prompts_seen.append(req.prompt)
        return "nope"

    result = scan(g, prefetch(["P"], RtlCodeMap({})), scripted(bad))
    assert len(prompts_seen) == 2 and prompts_seen[1].endswith(prompts.SCAN_STRICT_REMINDER)
    assert "P@1" in result.unanalyzed and result.calls == 2


def test_retry_recovers():
    g = CausalGraph([SignalEvent("P", 1, "FAIL")], [], "P@1")
    answers = iter(["garbage", None])

    def flaky(req):
        a = next(answers)
        return a if a is not None else stubs.benign_scan(req)

    result = scan(g, prefetch(["P"], RtlCodeMap({})), scripted(flaky))
    assert list(result.analyses) == ["P@1"] and not result.unanalyzed


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32))
def test_coverage_and_order_under_random_replies(seed):
    from cexroot.synthetic import lsu_dump
    from cexroot.graph import build_trace_tree, consolidate

    oracle = lsu_dump(seed=seed % 50, nodes=40, edges=50, signals=30)
    g = consolidate(build_trace_tree(oracle, oracle.root, 40))
    cache = prefetch({e.signal for e in g.nodes.values()}, RtlCodeMap({}))
    result = scan(g, cache, scripted(stubs.RandomResponder(seed, garble=0.1), max_in_flight=1))
    assert len(result.analyses) + len(result.unanalyzed) == len(g)
    scores = [result.analyses[k].suspicion_score for k in result.suspicious]
    assert scores == sorted(scores, reverse=True)
    assert all(result.analyses[k].suspicion_score >= 0.5 for k in result.suspicious)


def test_scan_result_round_trip():
    graph, inputs, cache, _ = acc_stage_inputs()
    replies = iter(cassette_responses(ACC, "scan"))
    result = scan(graph, cache, scripted(lambda r: next(replies)), ScanConfig(inputs.scenario))
    back = ScanResult.from_dict(json.loads(json.dumps(result.to_dict(graph))))
    assert back.analyses == result.analyses and back.suspicious == result.suspicious
