"""Causal graph synthesis: trace-tree expansion, DAG consolidation, levels, export.

Node identity is the ``(signal, cycle)`` pair, rendered as the text key
``<signal>@<cycle>``. Edges point from cause to effect, so the failing
property is the sink of the graph and level 0 holds the deepest causes.
"""

from __future__ import annotations

import csv
import io
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Protocol, Sequence
from xml.etree import ElementTree as ET

from .errors import GraphError

DEFAULT_TRACE_DEPTH = 20
DEFAULT_MAX_TREE_NODES = 200_000

GEXF_NS = "http://www.gexf.net/1.2draft"


class DepthZero(GraphError):
    pass


class OracleFailure(GraphError):
    """An oracle query failed; ``partial_tree`` holds what was built so far."""

    def __init__(self, message: str, partial_tree: "TraceTree | None" = None):
        super().__init__(message)
        self.partial_tree = partial_tree


class ValueConflict(GraphError):
    pass


class CycleDetected(GraphError):
    pass


class EmptyGraph(GraphError):
    pass


class TraceTooLarge(GraphError):
    pass


def node_key(signal: str, cycle: int) -> str:
    return f"{signal}@{cycle}"


def parse_node_key(key: str) -> tuple[str, int]:
    """Split ``<signal>@<cycle>``; the signal may itself contain ``@``-free dots and brackets."""
    signal, sep, cycle = key.rpartition("@")
    if not sep or not signal or not cycle.isdigit():
        raise ValueError(f"malformed node key {key!r}")
    return signal, int(cycle)


@dataclass(frozen=True)
class SignalEvent:
    signal: str
    cycle: int
    value: str

    def __post_init__(self):
        if not self.signal:
            raise ValueError("signal must be non-empty")
        if self.cycle < 0:
            raise ValueError(f"cycle must be non-negative, got {self.cycle}")

    @property
    def key(self) -> str:
        return node_key(self.signal, self.cycle)

    def sort_key(self) -> tuple[int, str]:
        return (self.cycle, self.signal)

    def describe(self) -> str:
        return f"{self.signal} (C:{self.cycle}, V:{self.value})"


class CausalityOracle(Protocol):
    def parents_of(self, key: str) -> list[SignalEvent]: ...


@dataclass
class TraceTree:
    """Tree produced by recursive oracle expansion.

    Tree slot 0 is the root. ``children[i]`` lists the slots of the causal
    parents of slot ``i`` in oracle order; reconvergent events occupy
    several slots.
    """

    events: list[SignalEvent]
    children: dict[int, list[int]]
    depth_limit: int
    valid: bool = True
    oracle_queries: int = 0

    @property
    def root(self) -> SignalEvent:
        return self.events[0]

    def __len__(self) -> int:
        return len(self.events)

    def edge_count(self) -> int:
        return sum(len(c) for c in self.children.values())

    def paths(self) -> list[list[str]]:
        """Every root-to-leaf path as a list of node keys."""
        out = []
        stack = [(0, [self.events[0].key])]
        while stack:
            slot, path = stack.pop()
            kids = self.children.get(slot, [])
            if not kids:
                out.append(path)
            for kid in reversed(kids):
                stack.append((kid, path + [self.events[kid].key]))
        return out


def build_trace_tree(
    oracle: CausalityOracle,
    root: SignalEvent,
    depth_limit: int = DEFAULT_TRACE_DEPTH,
    max_nodes: int = DEFAULT_MAX_TREE_NODES,
) -> TraceTree:
    """Breadth-first expansion of ``root`` through ``oracle.parents_of``.

    Parents more than ``depth_limit`` cycles before the root are dropped.
    """
    if depth_limit < 1:
        raise DepthZero(f"depth_limit must be >= 1, got {depth_limit}")
    floor = root.cycle - depth_limit
    tree = TraceTree(events=[root], children={}, depth_limit=depth_limit)
    # each slot remembers its ancestor keys so a cyclic oracle cannot loop forever
    queue = deque([(0, frozenset([root.key]))])
    while queue:
        slot, ancestors = queue.popleft()
        event = tree.events[slot]
        try:
            parents = oracle.parents_of(event.key)
        except Exception as exc:
            tree.valid = False
            raise OracleFailure(f"oracle could not answer for {event.key}: {exc}", tree) from exc
        tree.oracle_queries += 1
        kids = []
        for parent in parents:
            if parent.cycle < floor:
                continue
            if parent.key in ancestors:
                tree.valid = False
                raise CycleDetected(f"oracle reports {parent.key} as its own ancestor")
            tree.events.append(parent)
            kid = len(tree.events) - 1
            kids.append(kid)
            queue.append((kid, ancestors | {parent.key}))
        if kids:
            tree.children[slot] = kids
        if len(tree.events) > max_nodes:
            tree.valid = False
            raise TraceTooLarge(f"trace tree exceeded {max_nodes} nodes")
    return tree


def _ordered(keys: Iterable[str], events: dict[str, SignalEvent]) -> list[str]:
    return sorted(keys, key=lambda k: events[k].sort_key())


class CausalGraph:
    """Consolidated cause-to-effect DAG over unique ``(signal, cycle)`` events.

    Immutable after construction; adjacency lists are kept in
    ``(cycle, signal)`` order so every consumer iterates deterministically.
    """

    def __init__(self, events: Iterable[SignalEvent], edges: Iterable[tuple[str, str]], root: str | None):
        self.nodes: dict[str, SignalEvent] = {}
        for ev in events:
            if ev.key in self.nodes and self.nodes[ev.key].value != ev.value:
                raise ValueConflict(f"{ev.key}: {self.nodes[ev.key].value!r} vs {ev.value!r}")
            self.nodes[ev.key] = ev
        edge_set = set()
        for src, dst in edges:
            if src not in self.nodes or dst not in self.nodes:
                raise GraphError(f"edge {src} -> {dst} references an unknown node")
            if src == dst:
                raise CycleDetected(f"self-loop on {src}")
            edge_set.add((src, dst))
        if root is not None and root not in self.nodes:
            raise GraphError(f"root {root} is not a node")
        self.root = root
        self.edges = frozenset(edge_set)
        causes: dict[str, list[str]] = {k: [] for k in self.nodes}
        effects: dict[str, list[str]] = {k: [] for k in self.nodes}
        for src, dst in self.edges:
            causes[dst].append(src)
            effects[src].append(dst)
        self._causes = {k: tuple(_ordered(v, self.nodes)) for k, v in causes.items()}
        self._effects = {k: tuple(_ordered(v, self.nodes)) for k, v in effects.items()}
        self._levels: list[list[str]] | None = None

    def __len__(self) -> int:
        return len(self.nodes)

    def __contains__(self, key: str) -> bool:
        return key in self.nodes

    def event(self, key: str) -> SignalEvent:
        return self.nodes[key]

    def causes(self, key: str) -> tuple[str, ...]:
        """Immediate causal parents of ``key``."""
        return self._causes[key]

    def effects(self, key: str) -> tuple[str, ...]:
        """Immediate effects (graph children) of ``key``."""
        return self._effects[key]

    def neighbors(self, key: str) -> list[str]:
        return _ordered(set(self._causes[key]) | set(self._effects[key]), self.nodes)

    def degree(self, key: str) -> tuple[int, int]:
        """(in-degree, out-degree) in cause-to-effect orientation."""
        return len(self._causes[key]), len(self._effects[key])

    def ordered_keys(self) -> list[str]:
        return _ordered(self.nodes, self.nodes)

    def sorted_edges(self) -> list[tuple[str, str]]:
        return sorted(self.edges, key=lambda e: (self.nodes[e[0]].sort_key(), self.nodes[e[1]].sort_key()))

    @property
    def levels(self) -> list[list[str]]:
        if self._levels is None:
            self._levels = topological_levels(self)
        return self._levels

    def level_of(self) -> dict[str, int]:
        return {k: i for i, level in enumerate(self.levels) for k in level}

    def stats(self) -> "GraphStats":
        return GraphStats(
            node_count=len(self.nodes),
            edge_count=len(self.edges),
            unique_signal_count=len({ev.signal for ev in self.nodes.values()}),
            max_depth=max(len(self.levels) - 1, 0),
        )

    def to_dict(self) -> dict:
        return {
            "root": self.root,
            "nodes": [
                {"key": k, "signal": self.nodes[k].signal, "cycle": self.nodes[k].cycle, "value": self.nodes[k].value}
                for k in self.ordered_keys()
            ],
            "edges": [list(e) for e in self.sorted_edges()],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "CausalGraph":
        events = [SignalEvent(n["signal"], int(n["cycle"]), str(n["value"])) for n in data["nodes"]]
        graph = cls(events, [tuple(e) for e in data["edges"]], data.get("root"))
        topological_levels(graph)
        return graph

    def __eq__(self, other) -> bool:
        if not isinstance(other, CausalGraph):
            return NotImplemented
        return self.nodes == other.nodes and self.edges == other.edges and self.root == other.root

    def __repr__(self) -> str:
        return f"CausalGraph(nodes={len(self.nodes)}, edges={len(self.edges)}, root={self.root!r})"


@dataclass(frozen=True)
class GraphStats:
    node_count: int
    edge_count: int
    unique_signal_count: int
    max_depth: int

    def as_dict(self) -> dict:
        return {
            "node_count": self.node_count,
            "edge_count": self.edge_count,
            "unique_signal_count": self.unique_signal_count,
            "max_depth": self.max_depth,
        }


def consolidate(tree: TraceTree) -> CausalGraph:
    """Merge tree slots sharing a ``(signal, cycle)`` key into one DAG node."""
    if not tree.valid:
        raise GraphError("cannot consolidate an invalid (partial) trace tree")
    events: dict[str, SignalEvent] = {}
    for ev in tree.events:
        seen = events.get(ev.key)
        if seen is not None and seen.value != ev.value:
            raise ValueConflict(f"{ev.key} carries both {seen.value!r} and {ev.value!r}")
        events.setdefault(ev.key, ev)
    edges = set()
    for slot, kids in tree.children.items():
        effect = tree.events[slot].key
        for kid in kids:
            edges.add((tree.events[kid].key, effect))
    graph = CausalGraph(events.values(), edges, tree.root.key)
    topological_levels(graph)
    return graph


def topological_levels(graph: CausalGraph) -> list[list[str]]:
    """Longest-path layering: a node sits one level above its deepest cause.

    Kahn's algorithm; raises CycleDetected when some node never becomes ready.
    """
    pending = {k: len(graph.causes(k)) for k in graph.nodes}
    level = {k: 0 for k in graph.nodes}
    ready = deque(k for k, n in pending.items() if n == 0)
    done = 0
    while ready:
        k = ready.popleft()
        done += 1
        for eff in graph.effects(k):
            level[eff] = max(level[eff], level[k] + 1)
            pending[eff] -= 1
            if pending[eff] == 0:
                ready.append(eff)
    if done != len(graph.nodes):
        stuck = sorted(k for k, n in pending.items() if n > 0)
        raise CycleDetected(f"causal cycle among {stuck[:5]}")
    layers: list[list[str]] = [[] for _ in range(max(level.values(), default=-1) + 1)]
    for k, lv in level.items():
        layers[lv].append(k)
    return [_ordered(layer, graph.nodes) for layer in layers]


# ---------------------------------------------------------------------------
# export


def export_graph(graph: CausalGraph, fmt: str) -> str:
    if not graph.nodes:
        raise EmptyGraph("nothing to export")
    if fmt == "edge-list-csv":
        return _export_csv(graph)
    if fmt == "gexf":
        return _export_gexf(graph)
    if fmt == "ascii-tree":
        return _export_ascii(graph)
    raise ValueError(f"unknown export format {fmt!r}")


EXPORT_FORMATS = ("edge-list-csv", "gexf", "ascii-tree")


def _export_csv(graph: CausalGraph) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["source", "target"])
    writer.writerows(graph.sorted_edges())
    return buf.getvalue()


def _export_gexf(graph: CausalGraph) -> str:
    ET.register_namespace("", GEXF_NS)
    q = lambda tag: f"{{{GEXF_NS}}}{tag}"  # noqa: E731
    gexf = ET.Element(q("gexf"), {"version": "1.2"})
    meta = ET.SubElement(gexf, q("meta"))
    ET.SubElement(meta, q("creator")).text = "cexroot"
    g = ET.SubElement(gexf, q("graph"), {"mode": "static", "defaultedgetype": "directed"})
    attrs = ET.SubElement(g, q("attributes"), {"class": "node", "mode": "static"})
    for idx, (name, typ) in enumerate([("signal", "string"), ("cycle", "integer"), ("value", "string")]):
        ET.SubElement(attrs, q("attribute"), {"id": str(idx), "title": name, "type": typ})
    nodes = ET.SubElement(g, q("nodes"))
    for key in graph.ordered_keys():
        ev = graph.nodes[key]
        n = ET.SubElement(nodes, q("node"), {"id": key, "label": key})
        vals = ET.SubElement(n, q("attvalues"))
        for idx, v in enumerate([ev.signal, str(ev.cycle), ev.value]):
            ET.SubElement(vals, q("attvalue"), {"for": str(idx), "value": v})
    edges = ET.SubElement(g, q("edges"))
    for i, (src, dst) in enumerate(graph.sorted_edges()):
        ET.SubElement(edges, q("edge"), {"id": str(i), "source": src, "target": dst})
    ET.indent(gexf)
    return '<?xml version="1.0" encoding="UTF-8"?>\n' + ET.tostring(gexf, encoding="unicode") + "\n"


def _export_ascii(graph: CausalGraph) -> str:
    if graph.root is None:
        raise EmptyGraph("ascii-tree export needs a root")
    lines = [graph.nodes[graph.root].describe()]
    seen = {graph.root}

    def walk(key: str, prefix: str) -> None:
        kids = graph.causes(key)
        for i, kid in enumerate(kids):
            last = i == len(kids) - 1
            branch = "`-- " if last else "|-- "
            if kid in seen:
                lines.append(prefix + branch + graph.nodes[kid].describe() + " [dup]")
                continue
            seen.add(kid)
            lines.append(prefix + branch + graph.nodes[kid].describe())
            walk(kid, prefix + ("    " if last else "|   "))

    walk(graph.root, "")
    return "\n".join(lines) + "\n"


def tree_from_graph(graph: CausalGraph) -> TraceTree:
    """Unfold ``graph`` from its root into a trace tree that consolidates back to it.

    Each node is expanded once; later occurrences stay as childless leaves,
    which keeps the tree linear in the graph size.
    """
    if graph.root is None:
        raise EmptyGraph("cannot unfold a graph without a root")
    root = graph.nodes[graph.root]
    tree = TraceTree(events=[root], children={}, depth_limit=max(root.cycle - min(e.cycle for e in graph.nodes.values()), 1))
    expanded = {graph.root}
    queue = deque([0])
    while queue:
        slot = queue.popleft()
        kids = []
        for k in graph.causes(tree.events[slot].key):
            tree.events.append(graph.nodes[k])
            kids.append(len(tree.events) - 1)
            if k not in expanded:
                expanded.add(k)
                queue.append(kids[-1])
        if kids:
            tree.children[slot] = kids
    return tree


def subgraph_edges(graph: CausalGraph, keys: Sequence[str]) -> list[tuple[str, str]]:
    """Edges of the subgraph induced by ``keys`` plus edges from their immediate causes."""
    wanted = set(keys)
    out = []
    for k in keys:
        for c in graph.causes(k):
            out.append((c, k))
    out = sorted(set(out), key=lambda e: (graph.nodes[e[1]].sort_key(), graph.nodes[e[0]].sort_key()))
    return [e for e in out if e[1] in wanted]
