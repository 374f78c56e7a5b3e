"""Scan a load/store-unit sized graph under a token budget.

The dump is synthetic (170 events, 239 edges, 122 signals) and the model
is a stub that calls everything benign. The point is the batching: with
each node costing about 1000 tokens over a 5000 token base, a 50000 token
budget fits 45 nodes per call.
"""

import math

from cexroot import stubs
from cexroot.context import RtlCodeMap, prefetch
from cexroot.graph import build_trace_tree, consolidate
from cexroot.llm import Cassette, Gateway
from cexroot.scanner import binary_search_max_batch, scan
from cexroot.synthetic import lsu_dump


def counter(text):
    return 5000 + 1000 * len(stubs.table_rows(text))


oracle = lsu_dump()
tree = build_trace_tree(oracle, oracle.root, 40)
graph = consolidate(tree)
s = graph.stats()
print(f"trace tree: {len(tree.events)} nodes")
print(f"graph: {s.node_count} events, {s.edge_count} edges, {s.unique_signal_count} signals, depth {s.max_depth}")
print("level widths:", [len(level) for level in graph.levels])

cache = prefetch({e.signal for e in graph.nodes.values()}, RtlCodeMap({}))
tape = Cassette()
result = scan(graph, cache, Gateway(stubs.benign_scan, mode="record", cassette=tape, counter=counter))

nodes = list(range(s.node_count))
per_call = binary_search_max_batch(nodes, 50_000, len, counter=lambda n: 5000 + 1000 * n)
expected = sum(math.ceil(len(level) / per_call) for level in graph.levels)
print(f"\nlargest batch that fits: {per_call}")
print(f"batches issued: {result.batches_issued} (one level at a time, {expected} expected)")
print(f"nodes analysed: {len(result.analyses)}, suspicious: {len(result.suspicious)}")
