"""Morsel-driven execution of pipeline plans on a simulated cluster."""

from hyshuffle.engine.executor import ClusterConfig, QueryMetrics, QueryResult, place_chunks, run_query
from hyshuffle.engine.oracle import evaluate
from hyshuffle.engine.plan import LogicalPlan, PhysicalPlan, compile_plan, load_plan, parse_plan

__all__ = [
    "ClusterConfig",
    "LogicalPlan",
    "PhysicalPlan",
    "QueryMetrics",
    "QueryResult",
    "compile_plan",
    "evaluate",
    "load_plan",
    "parse_plan",
    "place_chunks",
    "run_query",
]
