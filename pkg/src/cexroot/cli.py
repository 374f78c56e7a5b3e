"""Command-line front end: ``cexroot <graph|scan|rove|fix|report|run|eval>``.

Exit status is 0 on success, 1 when a pipeline stage fails and 2 for
usage errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import fields
from pathlib import Path

from . import pipeline as pl
from .config import RunConfig, load_config
from .corpus import PER_PROBLEM, evaluate_corpus
from .errors import CexRootError, ConfigError
from .evaluation import results_table
from .graph import EXPORT_FORMATS, SignalEvent, export_graph, parse_node_key
from .oracle import adapter_oracle, load_dump

DEFAULT_OUT = "./cexroot-out"


class UsageError(Exception):
    pass


def _config_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("configuration (overrides --config)")
    defaults = RunConfig()
    for f in fields(RunConfig):
        if f.name in ("mode", "cassette", "strict_replay", "binary_ndcg"):
            continue
        kind = type(getattr(defaults, f.name))
        g.add_argument(
            "--" + f.name.replace("_", "-"),
            dest=f.name,
            type=kind if kind in (int, float) else str,
            default=None,
            metavar=f.name.upper(),
            help=f"default {getattr(defaults, f.name)}",
        )
    g.add_argument("--active-narratives", dest="min_narratives", type=int, default=None, help="alias of --min-narratives")
    g.add_argument("--binary-ndcg", dest="binary_ndcg", action="store_const", const=True, default=None)
    g.add_argument("--lenient-replay", dest="strict_replay", action="store_const", const=False, default=None)


def _gateway_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("model access")
    g.add_argument("--cassette", default=None, help="cassette file for replay or record")
    m = g.add_mutually_exclusive_group()
    m.add_argument("--replay", dest="mode", action="store_const", const="replay", default=None)
    m.add_argument("--record", dest="mode", action="store_const", const="record")
    m.add_argument("--live", dest="mode", action="store_const", const="live")


def _input_flags(p: argparse.ArgumentParser, dump: bool = False) -> None:
    if dump:
        p.add_argument("--dump", help="causality dump (JSON)")
        p.add_argument("--adapter", help="command speaking the WHY/PARENTS protocol (instead of --dump)")
        p.add_argument("--root", help="root node key when using --adapter")
        p.add_argument("--root-value", default="FAIL", help="root value when using --adapter")
    p.add_argument("--rtl", help="directory of RTL sources")
    p.add_argument("--spec", help="directory of specification documents")
    p.add_argument("--scenario", help="text file describing the failure scenario")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cexroot", description="Root-cause analysis for formal counterexamples.")
    parser.add_argument("-v", "--verbose", action="store_true")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out-dir", default=DEFAULT_OUT, help=f"artifact directory (default {DEFAULT_OUT})")
    common.add_argument("--config", help="key = value configuration file")
    _config_flags(common)
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    g = sub.add_parser("graph", parents=[common], help="build the causal graph from a dump or adapter")
    _input_flags(g, dump=True)
    g.add_argument("--export", choices=EXPORT_FORMATS, help="print the graph in this format")

    for name, text in (("scan", "scan every node"), ("rove", "explore failure narratives"), ("fix", "generate fixes")):
        sp = sub.add_parser(name, parents=[common], help=text)
        _input_flags(sp)
        _gateway_flags(sp)

    r = sub.add_parser("report", parents=[common], help="render the debug report from stage artifacts")
    _input_flags(r)
    r.add_argument("--out", help="also write the markdown report here")

    run = sub.add_parser("run", parents=[common], help="run every stage end to end")
    _input_flags(run, dump=True)
    _gateway_flags(run)
    run.add_argument("--out", help="also write the markdown report here")

    ev = sub.add_parser("eval", parents=[common], help="evaluate over a benchmark corpus")
    ev.add_argument("--corpus", required=True, help="corpus directory (or a single problem directory)")
    ev.add_argument("--method", default="cexroot", help="row label in the results table")
    _gateway_flags(ev)
    return parser


def _existing(path: str | None, what: str, required: bool = False) -> Path | None:
    if path is None:
        if required:
            raise UsageError(f"{what} is required")
        return None
    p = Path(path)
    if not p.exists():
        raise UsageError(f"{what} {path} does not exist")
    return p


def _config(args) -> RunConfig:
    keys = {f.name for f in fields(RunConfig)}
    overrides = {k: v for k, v in vars(args).items() if k in keys and v is not None}
    return load_config(args.config, overrides)


def _oracle(args, config: RunConfig):
    if args.adapter:
        if not args.root:
            raise UsageError("--adapter needs --root")
        try:
            signal, cycle = parse_node_key(args.root)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        return adapter_oracle(args.adapter, config.adapter_timeout), SignalEvent(signal, cycle, args.root_value)
    dump = _existing(args.dump, "--dump", required=True)
    oracle = load_dump(dump)
    return oracle, oracle.root


def _inputs(args) -> pl.Inputs:
    return pl.Inputs.from_paths(
        _existing(args.rtl, "--rtl"), _existing(args.spec, "--spec"), _existing(args.scenario, "--scenario")
    )


def _check_gateway(config: RunConfig) -> None:
    if config.mode in ("replay", "record") and not config.cassette:
        raise UsageError(f"--{config.mode} needs --cassette")
    if config.mode == "replay":
        _existing(config.cassette, "--cassette")


def _emit_report(out: Path, md: str, target: str | None, echo: bool) -> None:
    if target:
        Path(target).write_text(md, encoding="utf-8")
    if echo:
        sys.stdout.write(md)


def cmd_graph(args, config: RunConfig) -> int:
    out = Path(args.out_dir)
    oracle, root = _oracle(args, config)
    try:
        graph = pl.stage_graph(oracle, root, config)
    finally:
        if hasattr(oracle, "close"):
            oracle.close()
    pl.save_graph(out, graph)
    if args.export:
        sys.stdout.write(export_graph(graph, args.export))
    else:
        print(json.dumps(graph.stats().as_dict(), sort_keys=True))
    return 0


def _load_context(args, config):
    out = Path(args.out_dir)
    graph = pl.load_graph(out)
    inputs = _inputs(args)
    return out, graph, inputs, pl.build_cache(graph, inputs, config)


def cmd_scan(args, config: RunConfig) -> int:
    out, graph, inputs, cache = _load_context(args, config)
    gateway = pl.make_gateway(config)
    result = pl.stage_scan(graph, cache, inputs, gateway, config)
    pl.save_scan(out, graph, result)
    pl.save_cassette(gateway, config)
    print(f"{len(result.analyses)} analysed, {len(result.suspicious)} suspicious, {result.batches_issued} batches")
    return 0


def cmd_rove(args, config: RunConfig) -> int:
    out, graph, inputs, cache = _load_context(args, config)
    scan_result = pl.load_scan(out)
    gateway = pl.make_gateway(config)
    rover = pl.stage_rove(graph, cache, scan_result, inputs, gateway, config)
    pl.save_narratives(out, rover, gateway.stats.calls)
    pl.save_cassette(gateway, config)
    print("no suspicious nodes" if rover is None else f"{len(rover.hypotheses)} narratives after {rover.iterations} iterations")
    return 0


def cmd_fix(args, config: RunConfig) -> int:
    out, graph, inputs, _ = _load_context(args, config)
    scan_result = pl.load_scan(out)
    rover, _ = pl.load_narratives(out)
    gateway = pl.make_gateway(config)
    fixes = pl.stage_fix(graph, scan_result, rover, inputs, gateway, config)
    pl.save_fixes(out, fixes, inputs.rtl, gateway.stats.calls)
    pl.save_cassette(gateway, config)
    print(f"{len(fixes.fixes)} validated fixes")
    return 0


def cmd_report(args, config: RunConfig) -> int:
    out, graph, inputs, cache = _load_context(args, config)
    scan_result = pl.load_scan(out)
    rover, rove_calls = pl.load_narratives(out)
    fixes, fix_calls = pl.load_fixes(out)
    calls = {"scan": scan_result.calls, "rove": rove_calls, "fix": fix_calls}
    report = pl.stage_report(graph, cache, scan_result, rover, fixes, calls, config, None)
    md = pl.write_report(out, report)
    _emit_report(out, md, args.out, echo=not args.out)
    return 0


def cmd_run(args, config: RunConfig) -> int:
    started = time.monotonic()
    oracle, root = _oracle(args, config)
    inputs = _inputs(args)
    gateway = pl.make_gateway(config)
    try:
        result = pl.run_all(oracle, root, inputs, gateway, config, args.out_dir)
    finally:
        if hasattr(oracle, "close"):
            oracle.close()
    _emit_report(result.out_dir, result.markdown, args.out, echo=False)
    top = result.fixes.fixes[0] if result.fixes.fixes else None
    print(f"report: {result.out_dir / pl.REPORT_MD}")
    if top is not None:
        print(f"top fix ({top.validation}, {top.final_confidence:.2f}): {top.code}")
    logging.getLogger(__name__).info("run finished in %.2fs", time.monotonic() - started)
    return 0


def cmd_eval(args, config: RunConfig) -> int:
    _existing(args.corpus, "--corpus")
    problems, row = evaluate_corpus(args.corpus, config, args.out_dir, args.method)
    table = results_table([row])
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "results.csv").write_text(table, encoding="utf-8")
    pl.write_json(out / "results.json", {"summary": row, "problems": [p.to_dict() for p in problems]})
    sys.stdout.write(table)
    return 0


COMMANDS = {
    "graph": cmd_graph,
    "scan": cmd_scan,
    "rove": cmd_rove,
    "fix": cmd_fix,
    "report": cmd_report,
    "run": cmd_run,
    "eval": cmd_eval,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "eval":
            # each problem replays its own cassette unless one is given
            args.mode = args.mode or "replay"
            if args.mode != "live" and not args.cassette:
                args.cassette = PER_PROBLEM
        elif getattr(args, "mode", None) is None and getattr(args, "cassette", None):
            args.mode = "replay"
        if args.command in ("scan", "rove", "fix", "run") and args.mode in ("replay", "record") and not args.cassette:
            raise UsageError(f"--{args.mode} needs --cassette")
        config = _config(args)
        if args.command in ("scan", "rove", "fix", "run"):
            _check_gateway(config)
        return COMMANDS[args.command](args, config)
    except (UsageError, ConfigError) as exc:
        print(f"cexroot: error: {exc}", file=sys.stderr)
        return 2
    except CexRootError as exc:
        print(f"cexroot: {exc.stage} stage failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
