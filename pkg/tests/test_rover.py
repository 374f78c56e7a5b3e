import json
import random

import pytest
from hypothesis import given, settings, strategies as st

from cexroot import stubs
from cexroot.context import ContextCache, RtlCodeMap, prefetch
from cexroot.graph import CausalGraph, SignalEvent, build_trace_tree, consolidate
from cexroot.llm import Cassette, Gateway, scripted
from cexroot.rover import (
    ACTIVE,
    CONVERGED,
    RANKING_WEIGHTS,
    UNSEEDED,
    WEAK,
    Hypothesis,
    NoSuspiciousNodes,
    Pool,
    RoverConfig,
    explore,
    explore_step,
    manage_pool,
    max_comparisons,
    rank_hypotheses,
    seed_hypotheses,
    select_targets,
    weighted_overall,
)
from cexroot.scanner import NodeAnalysis, ScanResult
from cexroot.synthetic import lsu_dump

from conftest import acc_replay


def star_graph(n_leaves=6):
    """Root R@5 with causes x0..xk at cycle 4, each with one cause y_i at cycle 3."""
    events = [SignalEvent("R", 5, "FAIL")]
    edges = []
    for i in range(n_leaves):
        events += [SignalEvent(f"x{i}", 4, "1'b0"), SignalEvent(f"y{i}", 3, "1'b1")]
        edges += [(f"x{i}@4", "R@5"), (f"y{i}@3", f"x{i}@4")]
    return CausalGraph(events, edges, "R@5")


def scan_of(graph, scores):
    analyses = {
        k: NodeAnalysis(k, s >= 0.5, False, s, 0.5, {}, stubs.analysis_markdown("x"))
        for k, s in scores.items()
    }
    suspicious = sorted((k for k, s in scores.items() if s >= 0.5), key=lambda k: -scores[k])
    return ScanResult(suspicious, analyses, 1)


def seed_reply(_req):
    return json.dumps({"title": "T", "hypothesis": "S", "initial_insights": []})


def analyze_reply(**fields):
    base = {"is_relevant": True, "is_critical": False, "event_description": "seen", "importance": 0.0,
            "evidence_strength": 0.0, "evidence_for": [], "evidence_against": [], "new_insights": []}
    base.update(fields)
    return lambda _req: json.dumps(base)


EMPTY = ContextCache({})


# --- seeding ----------------------------------------------------------------

def test_one_suspicious_leaves_two_vacancies():
    g = star_graph()
    pool = seed_hypotheses(["x0@4"], g, scripted(seed_reply), EMPTY, scan_of(g, {"x0@4": 0.8}))
    assert len(pool.hypotheses) == 1 and pool.vacancies == 2 and pool.slots == 3


def test_five_suspicious_five_hypotheses():
    g = star_graph()
    keys = [f"x{i}@4" for i in range(5)]
    pool = seed_hypotheses(keys, g, scripted(seed_reply), EMPTY, scan_of(g, {k: 0.7 for k in keys}))
    assert [h.seed_key for h in pool.hypotheses] == keys and pool.vacancies == 0


def test_empty_suspicious():
    g = star_graph()
    with pytest.raises(NoSuspiciousNodes):
        seed_hypotheses([], g, scripted(seed_reply), EMPTY, scan_of(g, {}))


def test_seed_excluded_from_frontier():
    g = star_graph()
    pool = seed_hypotheses(["x0@4"], g, scripted(seed_reply), EMPTY, scan_of(g, {"x0@4": 0.8}))
    h = pool.hypotheses[0]
    assert h.seed_key not in h.frontier and h.seed_key not in h.explored
    assert set(h.frontier) == {"R@5", "y0@3"} and h.confidence == 0.5


def test_failed_seed_is_unseeded():
    g = star_graph()
    pool = seed_hypotheses(["x0@4"], g, scripted(lambda r: "no"), EMPTY, scan_of(g, {"x0@4": 0.8}))
    assert pool.hypotheses[0].status == UNSEEDED


# --- selection ----------------------------------------------------------------

def hyp(frontier, **kw):
    return Hypothesis(id="H1", seed_key="x0@4", seed_suspicion=0.8, title="T", statement="S", frontier=list(frontier), **kw)


def test_select_single_frontier():
    g = star_graph()
    h = hyp(["R@5"])
    assert select_targets(h, scripted(lambda r: "{}"), g, scan_of(g, {})) == ["R@5"]


def test_select_drops_unknown_then_falls_back():
    g = star_graph()
    h = hyp(["y0@3", "R@5"])
    scan = scan_of(g, {"y0@3": 0.3, "R@5": 0.6})
    got = select_targets(h, scripted(lambda r: json.dumps({"targets": ["ghost@1"]})), g, scan)
    assert got == ["R@5"]  # highest suspicion


def test_select_keeps_reply_order():
    g = star_graph()
    keys = ["y0@3", "y1@3", "y2@3", "y3@3"]
    h = hyp(keys)
    reply = json.dumps({"targets": ["y2@3", "y0@3", "y3@3"]})
    assert select_targets(h, scripted(lambda r: reply), g, scan_of(g, {})) == ["y2@3", "y0@3", "y3@3"]


def test_select_caps_at_three():
    g = star_graph()
    keys = [f"y{i}@3" for i in range(5)]
    reply = json.dumps({"targets": keys})
    assert len(select_targets(hyp(keys), scripted(lambda r: reply), g, scan_of(g, {}))) == 3


# --- exploration step -------------------------------------------------------------

def test_irrelevant_step():
    g = star_graph()
    h = hyp(["y0@3"], timeline=[])
    explore_step(h, "y0@3", g, EMPTY, scripted(analyze_reply(is_relevant=False)), scan_of(g, {}))
    assert h.timeline == [] and h.frontier == [] and h.explored == {"y0@3"}


def test_relevant_step_extends_frontier():
    g = star_graph()
    h = hyp(["R@5"])
    explore_step(h, "R@5", g, EMPTY, scripted(analyze_reply()), scan_of(g, {}))
    # R's neighbours minus the seed
    assert set(h.frontier) == {f"x{i}@4" for i in range(1, 6)}


def test_confidence_update_example():
    g = star_graph()
    h = hyp(["y0@3"], confidence=0.4)
    reply = analyze_reply(importance=1.0, evidence_strength=0.5, evidence_for=["a", "b"])
    explore_step(h, "y0@3", g, EMPTY, scripted(reply), scan_of(g, {}))
    assert h.confidence == pytest.approx(0.45, abs=1e-12)


def test_confidence_clamped():
    g = star_graph()
    h = hyp(["y0@3"], confidence=1.0)
    explore_step(h, "y0@3", g, EMPTY, scripted(analyze_reply(importance=1.0, evidence_strength=1.0,
                                                              evidence_for=["a"])), scan_of(g, {}))
    assert h.confidence == 1.0


def test_duplicate_evidence_does_not_count():
    g = star_graph()
    h = hyp(["y0@3"], confidence=0.5, evidence_for=["a"])
    reply = analyze_reply(importance=1.0, evidence_strength=1.0, evidence_for=["a"], evidence_against=["b"])
    explore_step(h, "y0@3", g, EMPTY, scripted(reply), scan_of(g, {}))
    assert h.confidence == pytest.approx(0.4)


@given(st.floats(0, 1), st.floats(0, 1), st.floats(0, 1), st.integers(0, 3), st.integers(0, 3))
def test_update_formula_oracle(old, imp, strength, n_for, n_against):
    g = star_graph()
    h = hyp(["y0@3"], confidence=old)
    reply = analyze_reply(importance=imp, evidence_strength=strength,
                          evidence_for=[f"f{i}" for i in range(n_for)],
                          evidence_against=[f"a{i}" for i in range(n_against)])
    explore_step(h, "y0@3", g, EMPTY, scripted(reply), scan_of(g, {}))
    sign = 1 if n_for > n_against else -1 if n_for < n_against else 0
    assert h.confidence == pytest.approx(min(1.0, max(0.0, old + 0.1 * imp * strength * sign)), abs=1e-12)


# --- pool management ----------------------------------------------------------------

def test_weak_and_converged_marking():
    g = star_graph()
    weak = hyp(["y0@3"], confidence=0.15, iterations_survived=2)
    young = Hypothesis("H2", "x1@4", 0.7, "T", "S", confidence=0.15, frontier=["y1@3"])
    conv = Hypothesis("H3", "x2@4", 0.7, "T", "S", confidence=0.92, frontier=["y2@3"])
    pool = Pool([weak, young, conv], 3)
    manage_pool(pool, [], g, EMPTY, scripted(seed_reply), scan_of(g, {}))
    assert weak.status == WEAK and young.status == ACTIVE and conv.status == CONVERGED


def test_vacancies_refill_suspicious_then_critical():
    g = star_graph()
    h1 = hyp(["y0@3"], critical=["y5@3"], confidence=0.92)
    pool = Pool([h1], 3)
    scan = scan_of(g, {"x0@4": 0.8, "x3@4": 0.6})
    manage_pool(pool, ["x0@4", "x3@4"], g, EMPTY, scripted(seed_reply), scan)
    assert [(h.seed_key, h.origin) for h in pool.hypotheses[1:]] == [("x3@4", "suspicious"), ("y5@3", "critical")]
    # H1 converged, so only the two new hypotheses are active
    assert pool.vacancies == 1


# --- ranking ------------------------------------------------------------------------

APP_D_SCORES = {"sufficiency": 0.85, "evidence": 0.90, "mechanistic_insight": 0.80, "actionability": 0.75,
                "coherence": 0.95}


def test_weighted_overall_example():
    assert weighted_overall(APP_D_SCORES) == pytest.approx(0.84, abs=1e-12)
    assert sum(RANKING_WEIGHTS.values()) == pytest.approx(1.0)


def rank_reply(recs):
    return lambda r: json.dumps(recs)


def test_single_hypothesis_rank_one():
    h = hyp([])
    ranked = rank_hypotheses(Pool([h], 3), scripted(rank_reply([{"hypothesis_id": "H1", **APP_D_SCORES,
                                                                   "overall_score": 0.1}])))
    assert ranked.order == ["H1"]
    assert ranked.entries[0].overall == pytest.approx(0.84)  # the model's overall_score is ignored


def test_batch_rank_orders_by_local_sum():
    a, b = hyp([]), Hypothesis("H2", "x1@4", 0.6, "T2", "S2")
    low = {c: 0.1 for c in RANKING_WEIGHTS}
    ranked = rank_hypotheses(Pool([a, b], 3), scripted(rank_reply(
        [{"hypothesis_id": "H1", **low}, {"hypothesis_id": "H2", **APP_D_SCORES}])))
    assert ranked.order == ["H2", "H1"] and ranked.mode == "batch"


def test_rank_parse_failure_falls_back_to_confidence():
    a, b = hyp([], confidence=0.3), Hypothesis("H2", "x1@4", 0.6, "T2", "S2", confidence=0.7)
    ranked = rank_hypotheses(Pool([a, b], 3), scripted(lambda r: "no idea"))
    assert ranked.order == ["H2", "H1"] and ranked.mode == "confidence"


def test_tournament_within_comparison_bound():
    hyps = [Hypothesis(f"H{i}", f"x{i}@4", 0.6, f"T{i}", "S", confidence=i / 10) for i in range(1, 6)]
    calls = []

    def judge(req):
        calls.append(req)
        ids = [h.id for h in hyps if f"(ID: {h.id})" in req.prompt]
        return json.dumps({"winner": min(ids)})

    ranked = rank_hypotheses(Pool(hyps, 3), scripted(judge), RoverConfig(ranking_mode="tournament"))
    assert ranked.order == ["H1", "H2", "H3", "H4", "H5"]
    assert len(calls) <= max_comparisons(5)


# --- full loop ------------------------------------------------------------------------

def test_accumulator_confidences(tmp_path):
    result = acc_replay(tmp_path)
    ranked = result.rover.ranked()
    assert [round(h.confidence, 3) for h in ranked] == [0.485, 0.469]
    assert ranked[0].title == "Upstream Control Logic Issue"


def test_explore_without_suspicious():
    g = star_graph()
    with pytest.raises(NoSuspiciousNodes):
        explore(g, EMPTY, scan_of(g, {}), scripted(seed_reply))
