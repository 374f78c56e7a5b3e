"""Causality oracles: answer "which events caused this one?".

Two backends share the ``parents_of(key)`` contract:

* :class:`DumpOracle` reads a JSON causality dump (desk-scale fixtures).
* :class:`AdapterOracle` talks to an external process over a line protocol::

      -> WHY <node-key>
      <- PARENTS <n>
      <- <signal> <cycle> <value>      (n lines)
      <- ERR <message>                 (instead of PARENTS on failure)

:func:`serve` implements the server side of that protocol on top of a dump,
which doubles as a reference for model-checker wrappers.
"""

from __future__ import annotations

import json
import queue
import shlex
import subprocess
import sys
import threading
from pathlib import Path
from typing import IO, Sequence

from .errors import OracleError
from .graph import SignalEvent, node_key, parse_node_key

DUMP_FORMAT = "cexroot-causality-dump"
DEFAULT_ADAPTER_TIMEOUT = 60.0


class ParseError(OracleError):
    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        where = f" (line {line}, column {column})" if line is not None else ""
        super().__init__(message + where)
        self.line = line
        self.column = column


class DanglingParent(OracleError):
    pass


class SelfCycle(OracleError):
    pass


class UnknownEvent(OracleError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class AdapterFailure(OracleError):
    """The adapter answered ``ERR <message>``."""


class ProcessSpawnFailure(OracleError):
    pass


class ProtocolViolation(OracleError):
    pass


class Timeout(OracleError):
    pass


class DumpOracle:
    """Read-only oracle over an in-memory causality dump."""

    def __init__(self, root: str, events: dict[str, SignalEvent], parents: dict[str, list[str]]):
        self.root_key = root
        self.events = events
        self._parents = parents

    @property
    def root(self) -> SignalEvent:
        return self.events[self.root_key]

    def parents_of(self, key: str) -> list[SignalEvent]:
        try:
            return [self.events[p] for p in self._parents[key]]
        except KeyError:
            raise UnknownEvent(f"no event {key!r} in the dump") from None

    def to_dict(self) -> dict:
        return {
            "format": DUMP_FORMAT,
            "version": 1,
            "root": self.root_key,
            "events": {
                k: {"signal": ev.signal, "cycle": ev.cycle, "value": ev.value, "parents": list(self._parents[k])}
                for k, ev in self.events.items()
            },
        }


def dump_from_dict(data: dict) -> DumpOracle:
    """Validate a parsed dump document and build its oracle."""
    if not isinstance(data, dict) or "root" not in data or "events" not in data:
        raise ParseError("dump must be an object with 'root' and 'events'")
    raw = data["events"]
    if not isinstance(raw, dict):
        raise ParseError("'events' must be an object keyed by node key")
    events: dict[str, SignalEvent] = {}
    parents: dict[str, list[str]] = {}
    for key, rec in raw.items():
        try:
            ev = SignalEvent(str(rec["signal"]), int(rec["cycle"]), str(rec["value"]))
            plist = [str(p) for p in rec.get("parents", [])]
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"bad event record {key!r}: {exc}") from None
        if ev.key != key:
            raise ParseError(f"event key {key!r} does not match its record ({ev.key!r})")
        events[key] = ev
        parents[key] = plist
    root = data["root"]
    if isinstance(root, dict):
        root = node_key(root["signal"], int(root["cycle"]))
    if root not in events:
        raise DanglingParent(f"root {root!r} is not among the events")
    for key, plist in parents.items():
        for p in plist:
            if p not in events:
                raise DanglingParent(f"{key} lists unknown parent {p}")
    _check_acyclic(parents)
    return DumpOracle(root, events, parents)


def _check_acyclic(parents: dict[str, list[str]]) -> None:
    WHITE, GREY, BLACK = 0, 1, 2
    color = dict.fromkeys(parents, WHITE)
    for start in parents:
        if color[start] != WHITE:
            continue
        stack = [(start, iter(parents[start]))]
        color[start] = GREY
        while stack:
            key, it = stack[-1]
            nxt = next(it, None)
            if nxt is None:
                color[key] = BLACK
                stack.pop()
            elif color[nxt] == GREY:
                raise SelfCycle(f"{nxt} depends on itself (via {key})")
            elif color[nxt] == WHITE:
                color[nxt] = GREY
                stack.append((nxt, iter(parents[nxt])))


def load_dump(path: str | Path) -> DumpOracle:
    text = Path(path).read_text(encoding="utf-8")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc.msg}", exc.lineno, exc.colno) from None
    return dump_from_dict(data)


def write_dump(oracle: DumpOracle, path: str | Path) -> None:
    Path(path).write_text(json.dumps(oracle.to_dict(), indent=2) + "\n", encoding="utf-8")


class AdapterOracle:
    """Oracle backed by a child process speaking the WHY/PARENTS protocol.

    One request is in flight at a time; replies are cached per key for the
    lifetime of the object.
    """

    def __init__(self, command: str | Sequence[str], timeout: float = DEFAULT_ADAPTER_TIMEOUT):
        argv = shlex.split(command) if isinstance(command, str) else list(command)
        self.timeout = timeout
        self.requests_sent = 0
        self._cache: dict[str, list[SignalEvent]] = {}
        self._lock = threading.Lock()
        try:
            self._proc = subprocess.Popen(
                argv,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.DEVNULL,
                text=True,
                bufsize=1,
            )
        except OSError as exc:
            raise ProcessSpawnFailure(f"cannot start adapter {argv!r}: {exc}") from exc
        self._lines: queue.Queue[str | None] = queue.Queue()
        self._reader = threading.Thread(target=self._pump, daemon=True)
        self._reader.start()

    def _pump(self) -> None:
        for line in self._proc.stdout:
            self._lines.put(line.rstrip("\n"))
        self._lines.put(None)

    def _readline(self) -> str:
        try:
            line = self._lines.get(timeout=self.timeout)
        except queue.Empty:
            raise Timeout(f"adapter silent for {self.timeout}s") from None
        if line is None:
            raise ProtocolViolation("adapter closed its output stream")
        return line

    def parents_of(self, key: str) -> list[SignalEvent]:
        with self._lock:
            if key in self._cache:
                return list(self._cache[key])
            try:
                self._proc.stdin.write(f"WHY {key}\n")
                self._proc.stdin.flush()
            except (BrokenPipeError, OSError) as exc:
                raise ProtocolViolation(f"adapter stdin closed: {exc}") from exc
            self.requests_sent += 1
            head = self._readline()
            if head.startswith("ERR"):
                raise AdapterFailure(head[3:].strip() or "unspecified adapter error")
            parts = head.split()
            if len(parts) != 2 or parts[0] != "PARENTS" or not parts[1].isdigit():
                raise ProtocolViolation(f"expected 'PARENTS <n>', got {head!r}")
            out = []
            for _ in range(int(parts[1])):
                line = self._readline()
                fields = line.split(maxsplit=2)
                if len(fields) != 3 or not fields[1].isdigit():
                    raise ProtocolViolation(f"bad parent line {line!r}")
                out.append(SignalEvent(fields[0], int(fields[1]), fields[2]))
            self._cache[key] = out
            return list(out)

    def close(self) -> None:
        if self._proc.poll() is None:
            try:
                self._proc.stdin.close()
            except OSError:
                pass
            try:
                self._proc.wait(timeout=2)
            except subprocess.TimeoutExpired:
                self._proc.kill()
                self._proc.wait()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def adapter_oracle(command: str | Sequence[str], timeout: float = DEFAULT_ADAPTER_TIMEOUT) -> AdapterOracle:
    return AdapterOracle(command, timeout=timeout)


def serve(oracle: DumpOracle, stdin: IO[str], stdout: IO[str]) -> None:
    """Answer WHY requests from ``stdin`` until EOF."""
    for line in stdin:
        line = line.strip()
        if not line:
            continue
        op, _, key = line.partition(" ")
        if op != "WHY" or not key:
            stdout.write(f"ERR unsupported request {line!r}\n")
        else:
            try:
                parents = oracle.parents_of(key)
            except UnknownEvent as exc:
                stdout.write(f"ERR {exc}\n")
            else:
                stdout.write(f"PARENTS {len(parents)}\n")
                for ev in parents:
                    stdout.write(f"{ev.signal} {ev.cycle} {ev.value}\n")
        stdout.flush()


def main(argv: Sequence[str] | None = None) -> int:
    """``python -m cexroot.oracle DUMP``: serve a dump over the adapter protocol."""
    args = list(sys.argv[1:] if argv is None else argv)
    if len(args) != 1:
        print("usage: python -m cexroot.oracle DUMP", file=sys.stderr)
        return 2
    serve(load_dump(args[0]), sys.stdin, sys.stdout)
    return 0


__all__ = [
    "AdapterFailure",
    "AdapterOracle",
    "DanglingParent",
    "DumpOracle",
    "ParseError",
    "ProcessSpawnFailure",
    "ProtocolViolation",
    "SelfCycle",
    "Timeout",
    "UnknownEvent",
    "adapter_oracle",
    "dump_from_dict",
    "load_dump",
    "parse_node_key",
    "serve",
    "write_dump",
]


if __name__ == "__main__":
    raise SystemExit(main())
