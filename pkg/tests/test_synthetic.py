import collections
import importlib.util
import json
from pathlib import Path

import pytest

from cexroot.graph import build_trace_tree, consolidate, topological_levels
from cexroot.synthetic import LSU_EDGES, LSU_NODES, LSU_SIGNALS, lsu_dump

from conftest import ACC

TOOLS = Path(__file__).resolve().parents[1] / "tools"


def lsu_graph(**kw):
    oracle = lsu_dump(**kw)
    return consolidate(build_trace_tree(oracle, oracle.root, 40))


def test_lsu_profile():
    s = lsu_graph().stats()
    assert (s.node_count, s.edge_count, s.unique_signal_count) == (LSU_NODES, LSU_EDGES, LSU_SIGNALS) == (170, 239, 122)


def test_lsu_root_is_failing_assertion():
    g = lsu_graph()
    assert g.nodes[g.root].value == "FAIL" and g.effects(g.root) == ()
    assert topological_levels(g)[-1] == [g.root]


def test_lsu_is_deterministic():
    assert lsu_dump(seed=3).to_dict() == lsu_dump(seed=3).to_dict()
    assert lsu_dump(seed=3).to_dict() != lsu_dump(seed=4).to_dict()


@pytest.mark.parametrize("seed", range(10))
def test_other_sizes(seed):
    s = lsu_graph(seed=seed, nodes=60, edges=80, signals=40).stats()
    assert (s.node_count, s.edge_count, s.unique_signal_count) == (60, 80, 40)


def test_bad_sizes():
    with pytest.raises(ValueError):
        lsu_dump(nodes=10, edges=5, signals=4)


def load_builder():
    spec = importlib.util.spec_from_file_location("build_accumulator_fixture", TOOLS / "build_accumulator_fixture.py")
    mod = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(mod)
    return mod


def test_fixture_builder_reproduces_bundled_cassette(tmp_path, acc_copy):
    builder = load_builder()
    builder.build(acc_copy, tmp_path / "out")

    def records(p):
        return collections.Counter(p.read_text().splitlines())

    assert records(acc_copy / "cassette.jsonl") == records(ACC / "cassette.jsonl")
    for name in ("dump.json", "verifier.json"):
        assert json.loads((acc_copy / name).read_text()) == json.loads((ACC / name).read_text())
