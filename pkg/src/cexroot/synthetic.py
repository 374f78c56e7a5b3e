"""Deterministic synthetic causality dumps.

``lsu_dump`` reproduces the size profile of a load/store-unit counterexample
(170 events, 239 causal edges, 122 distinct signals). The shape is a
backbone tree toward the failing assertion plus reconvergent edges from
primary inputs, so the trace tree stays small while the DAG is not a tree.
"""

from __future__ import annotations

import random

from .graph import SignalEvent, node_key
from .oracle import DumpOracle

LSU_NODES, LSU_EDGES, LSU_SIGNALS = 170, 239, 122

_UNITS = ("load_unit", "store_unit", "lsu_bypass", "mmu", "amo_buffer", "store_buffer", "pmp", "dcache_if")
_STEMS = (
    "valid", "ready", "req", "gnt", "addr", "data", "be", "we", "ex_valid", "flush", "kill", "pop", "push",
    "full", "empty", "state", "cnt", "rvalid", "tag", "idx", "page_offset", "misaligned", "commit", "lsu_ctrl",
)


def _signal_names(n: int, rng: random.Random) -> list[str]:
    pool = [f"lsu.{u}.{s}" for u in _UNITS for s in _STEMS]
    rng.shuffle(pool)
    names = pool[:n]
    if len(names) < n:
        raise ValueError("not enough synthetic signal names")
    # a few bit-selects, as real traces carry them
    for i in range(0, n, 17):
        names[i] = f"{names[i]}[{i % 8}]"
    return names


def lsu_dump(seed: int = 7, nodes: int = LSU_NODES, edges: int = LSU_EDGES, signals: int = LSU_SIGNALS) -> DumpOracle:
    if not (1 < signals <= nodes and nodes - 1 <= edges):
        raise ValueError("need 1 < signals <= nodes and edges >= nodes - 1")
    rng = random.Random(seed)
    names = ["lsu.assert_store_order"] + _signal_names(signals - 1, rng)

    # backbone: node i is a cause of tree[i] (lower index, same or later cycle)
    tree = [-1]
    cycle = [20]
    for i in range(1, nodes):
        p = rng.randrange(max(0, i - 9), i)
        tree.append(p)
        cycle.append(max(0, cycle[p] - rng.choice((0, 1, 1, 1, 2))))

    sig = [0] + list(range(1, signals)) + [0] * (nodes - signals)
    used = {(sig[i], cycle[i]) for i in range(signals)}
    for i in range(signals, nodes):
        # reuse an earlier signal at a cycle it does not yet occupy
        free = [s for s in range(1, signals) if (s, cycle[i]) not in used]
        sig[i] = rng.choice(free)
        used.add((sig[i], cycle[i]))

    parents: dict[int, list[int]] = {i: [] for i in range(nodes)}
    for i in range(1, nodes):
        parents[tree[i]].append(i)
    leaves = [i for i in range(1, nodes) if not parents[i]]

    extra = edges - (nodes - 1)
    attempts = 0
    while extra:
        attempts += 1
        if attempts > 100_000:
            raise ValueError("could not place the requested reconvergent edges")
        src = rng.choice(leaves)
        dst = rng.randrange(0, src)
        if dst == tree[src] or src in parents[dst] or cycle[dst] < cycle[src]:
            continue
        parents[dst].append(src)
        extra -= 1

    def value(i: int) -> str:
        if i == 0:
            return "FAIL"
        return rng.choice(("1'b0", "1'b1", "4'h3", "32'h8000_0040", "2'b10"))

    events = [SignalEvent(names[sig[i]], cycle[i], value(i)) for i in range(nodes)]
    keys = [node_key(ev.signal, ev.cycle) for ev in events]
    return DumpOracle(
        keys[0],
        {keys[i]: events[i] for i in range(nodes)},
        {keys[i]: [keys[j] for j in parents[i]] for i in range(nodes)},
    )
