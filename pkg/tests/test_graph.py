import random
import xml.etree.ElementTree as ET

import networkx as nx
import pytest
from hypothesis import given, settings, strategies as st

from cexroot.graph import (
    CausalGraph,
    CycleDetected,
    DepthZero,
    EmptyGraph,
    OracleFailure,
    SignalEvent,
    ValueConflict,
    build_trace_tree,
    consolidate,
    export_graph,
    parse_node_key,
    topological_levels,
    tree_from_graph,
)
from cexroot.oracle import load_dump

from conftest import MapOracle, random_tree


def ev(sig, cyc, val="1'b0"):
    return SignalEvent(sig, cyc, val)


def random_dag(rng, max_nodes=100):
    n = rng.randint(1, max_nodes)
    events = [ev(f"v{i}", i) for i in range(n)]
    edges = {(f"v{i}@{i}", f"v{j}@{j}") for j in range(n) for i in range(j) if rng.random() < 3 / max(n, 1)}
    return CausalGraph(events, edges, None)


def longest_path_levels(graph):
    """Oracle: level(v) = length of the longest cause chain ending at v, by memoised recursion."""
    memo = {}

    def depth(k):
        if k not in memo:
            memo[k] = 1 + max((depth(c) for c in graph.causes(k)), default=-1)
        return memo[k]

    return {k: depth(k) for k in graph.nodes}


# --- build_trace_tree -------------------------------------------------------

def test_single_parent_chain():
    root = ev("P", 3, "FAIL")
    oracle = MapOracle({"P@3": [ev("a", 3)], "a@3": []})
    tree = build_trace_tree(oracle, root, 20)
    assert len(tree) == 2 and tree.edge_count() == 1


def test_accumulator_tree_contains_timeline_events(acc_dir):
    oracle = load_dump(acc_dir / "dump.json")
    tree = build_trace_tree(oracle, oracle.root, 20)
    have = {(e.signal, e.cycle, e.value) for e in tree.events}
    for want in [("valid_out", 3, "1'b0"), ("count", 3, "2'b11"), ("end_cnt", 1, "1'b0"), ("ready_add", 1, "1'b0")]:
        assert want in have


def test_depth_window_is_measured_in_cycles():
    # 20 cycles back from 25 reaches cycle 5; cycle 4 is 21 cycles earlier
    root = ev("P", 25, "FAIL")
    oracle = MapOracle({"P@25": [ev("in", 5), ev("out", 4)], "in@5": []})
    tree = build_trace_tree(oracle, root, 20)
    assert [e.key for e in tree.events] == ["P@25", "in@5"]


@given(st.integers(1, 30), st.integers(0, 40), st.lists(st.integers(0, 40), max_size=8))
def test_depth_window_matches_filter_oracle(depth, root_cycle, parent_cycles):
    parents = [ev(f"p{i}", min(c, root_cycle)) for i, c in enumerate(parent_cycles)]
    table = {"R@%d" % root_cycle: parents, **{p.key: [] for p in parents}}
    tree = build_trace_tree(MapOracle(table), ev("R", root_cycle, "FAIL"), depth)
    expected = [p.key for p in parents if p.cycle >= root_cycle - depth]
    assert [e.key for e in tree.events[1:]] == expected


def test_depth_zero_rejected():
    with pytest.raises(DepthZero):
        build_trace_tree(MapOracle({}), ev("P", 1), 0)


def test_oracle_failure_flags_partial_tree():
    class Broken:
        def parents_of(self, key):
            if key == "P@2":
                return [ev("a", 1)]
            raise RuntimeError("tool crashed")

    with pytest.raises(OracleFailure) as info:
        build_trace_tree(Broken(), ev("P", 2, "FAIL"), 5)
    assert info.value.partial_tree.valid is False
    assert len(info.value.partial_tree) == 2


def test_cyclic_oracle_detected():
    oracle = MapOracle({"a@1": [ev("b", 1)], "b@1": [ev("a", 1)]})
    with pytest.raises(CycleDetected):
        build_trace_tree(oracle, ev("a", 1), 5)


# --- consolidate --------------------------------------------------------------

def test_reconvergence_merges_node():
    shared = ev("a", 1)
    oracle = MapOracle({"P@2": [ev("x", 2), ev("y", 2)], "x@2": [shared], "y@2": [shared], "a@1": []})
    tree = build_trace_tree(oracle, ev("P", 2, "FAIL"), 5)
    g = consolidate(tree)
    assert len(tree) == 5 and len(g) == 4
    assert g.effects("a@1") == ("x@2", "y@2")


def test_distinct_tree_is_isomorphic():
    oracle = MapOracle({"P@2": [ev("x", 2), ev("y", 1)], "x@2": [], "y@1": []})
    tree = build_trace_tree(oracle, ev("P", 2, "FAIL"), 5)
    g = consolidate(tree)
    assert len(g) == len(tree) and len(g.edges) == tree.edge_count()


def test_value_conflict():
    oracle = MapOracle({"P@2": [ev("x", 2), ev("y", 2)], "x@2": [ev("a", 1, "1'b0")], "y@2": [ev("a", 1, "1'b1")],
                        "a@1": []})
    tree = build_trace_tree(oracle, ev("P", 2, "FAIL"), 5)
    with pytest.raises(ValueConflict):
        consolidate(tree)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32))
def test_consolidation_properties(seed):
    tree = random_tree(random.Random(seed))
    g = consolidate(tree)
    assert len(g) == len({e.key for e in tree.events})
    assert len(g) <= len(tree) and len(g.edges) <= tree.edge_count()
    for path in tree.paths():
        for effect, cause in zip(path, path[1:]):
            assert (cause, effect) in g.edges
    assert consolidate(tree_from_graph(g)) == g


# --- levels ---------------------------------------------------------------------

def test_chain_levels():
    g = CausalGraph([ev("x", 0), ev("y", 1), ev("z", 2)], [("x@0", "y@1"), ("y@1", "z@2")], "z@2")
    assert topological_levels(g) == [["x@0"], ["y@1"], ["z@2"]]


def test_diamond_levels():
    g = CausalGraph([ev("a", 0), ev("b", 1), ev("c", 1), ev("d", 2)],
                    [("a@0", "b@1"), ("a@0", "c@1"), ("b@1", "d@2"), ("c@1", "d@2")], "d@2")
    assert topological_levels(g) == [["a@0"], ["b@1", "c@1"], ["d@2"]]


def test_within_level_order_is_cycle_then_signal():
    g = CausalGraph([ev("b", 0), ev("a", 1), ev("a", 0)], [], None)
    assert topological_levels(g) == [["a@0", "b@0", "a@1"]]


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32))
def test_levels_match_longest_path(seed):
    g = random_dag(random.Random(seed))
    levels = topological_levels(g)
    where = {k: i for i, layer in enumerate(levels) for k in layer}
    assert where == longest_path_levels(g)
    assert all(where[u] < where[v] for u, v in g.edges)


def test_cycle_detected_in_levels():
    g = CausalGraph([ev("a", 0), ev("b", 0)], [("a@0", "b@0"), ("b@0", "a@0")], None)
    with pytest.raises(CycleDetected):
        topological_levels(g)


# --- export -------------------------------------------------------------------

def test_csv_two_node_chain():
    g = CausalGraph([ev("a", 0), ev("P", 1, "FAIL")], [("a@0", "P@1")], "P@1")
    assert export_graph(g, "edge-list-csv") == "source,target\na@0,P@1\n"


def test_ascii_tree_root_line(acc_dir):
    oracle = load_dump(acc_dir / "dump.json")
    g = consolidate(build_trace_tree(oracle, oracle.root, 20))
    text = export_graph(g, "ascii-tree")
    assert text.splitlines()[0] == "accu.valid_out_check_2_assertion (C:3, V:FAIL)"
    assert "[dup]" in text  # count@2 and ready_add@2 reconverge


def test_empty_graph_export():
    with pytest.raises(EmptyGraph):
        export_graph(CausalGraph([], [], None), "gexf")


def read_gexf(text):
    """Independent reader: networkx's GEXF parser."""
    import io

    return nx.read_gexf(io.BytesIO(text.encode("utf-8")))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32))
def test_gexf_round_trip(seed):
    g = consolidate(random_tree(random.Random(seed), max_nodes=60))
    back = read_gexf(export_graph(g, "gexf"))
    assert set(back.nodes) == set(g.nodes)
    assert set(back.edges) == set(g.edges)
    for k, data in back.nodes(data=True):
        e = g.nodes[k]
        assert (data["signal"], int(data["cycle"]), data["value"]) == (e.signal, e.cycle, e.value)


def test_gexf_is_version_1_2():
    g = CausalGraph([ev("a", 0)], [], "a@0")
    root = ET.fromstring(export_graph(g, "gexf").split("\n", 1)[1])
    assert root.tag.endswith("gexf") and root.get("version") == "1.2"


# --- keys and stats -------------------------------------------------------------

def test_node_key_grammar():
    assert parse_node_key("lsu.d_i[196]@12") == ("lsu.d_i[196]", 12)
    with pytest.raises(ValueError):
        parse_node_key("no_cycle")


def test_graph_dict_round_trip(acc_dir):
    oracle = load_dump(acc_dir / "dump.json")
    g = consolidate(build_trace_tree(oracle, oracle.root, 20))
    assert CausalGraph.from_dict(g.to_dict()) == g
    s = g.stats()
    assert s.unique_signal_count <= s.node_count and s.edge_count >= s.node_count - 1
