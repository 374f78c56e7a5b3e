"""Exception hierarchy shared by every pipeline stage."""

from __future__ import annotations


class CexRootError(Exception):
    """Base class for all pipeline errors."""

    stage = "pipeline"


class GraphError(CexRootError):
    stage = "graph"


class OracleError(CexRootError):
    stage = "oracle"


class GatewayError(CexRootError):
    stage = "llm"


class ScanError(CexRootError):
    stage = "scan"


class RoverError(CexRootError):
    stage = "rove"


class FixError(CexRootError):
    stage = "fix"


class EvalError(CexRootError):
    stage = "eval"


class ConfigError(CexRootError):
    stage = "config"
