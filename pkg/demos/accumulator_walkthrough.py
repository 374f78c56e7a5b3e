"""Walk through the accumulator counterexample one stage at a time.

Replays the bundled cassette, so no model access is needed. Prints what
each stage found and leaves the artifacts in a temporary directory.
"""

import sys
import tempfile
from importlib.resources import files
from pathlib import Path

from cexroot import pipeline as pl
from cexroot.config import RunConfig
from cexroot.oracle import load_dump

problem = Path(str(files("cexroot") / "data" / "corpus" / "accumulator"))
out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="accu-"))

config = RunConfig(mode="replay", cassette=str(problem / "cassette.jsonl"))
oracle = load_dump(problem / "dump.json")
inputs = pl.Inputs.from_paths(problem / "rtl", problem / "spec", problem / "scenario.txt")
gateway = pl.make_gateway(config)

graph = pl.stage_graph(oracle, oracle.root, config)
s = graph.stats()
print(f"failing event: {graph.root}")
print(f"causal graph: {s.node_count} events, {s.edge_count} edges, {len(graph.levels)} levels")

cache = pl.build_cache(graph, inputs, config)
scan = pl.stage_scan(graph, cache, inputs, gateway, config)
print(f"\nscan: {scan.batches_issued} batch(es), {len(scan.suspicious)} suspicious")
for key in scan.suspicious:
    print("  ", scan.analyses[key].summary_line())

rover = pl.stage_rove(graph, cache, scan, inputs, gateway, config)
print("\nnarratives, best first:")
for h in rover.ranked():
    print(f"  {h.confidence:6.1%}  {h.status:<10} {h.title}")

fixes = pl.stage_fix(graph, scan, rover, inputs, gateway, config)
print(f"\nfixes: {len(fixes.fixes)} validated")
for f in fixes.fixes[:3]:
    print(f"  {f.final_confidence:6.1%}  {f.file}:{f.line}  {f.buggy_code.strip()}  ->  {f.code.strip()}")

report = pl.stage_report(graph, cache, scan, rover, fixes, {}, config, None)
pl.write_report(out, report)
print(f"\nmodel calls: {gateway.stats.calls}")
print(f"report written to {out / 'report.md'}")
