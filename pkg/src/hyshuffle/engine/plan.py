"""Plan files, validation, column pruning and pipeline decomposition.

A plan is a JSON tree of operators::

    {"name": "q6", "root": {"op": "aggregate", "group_by": [], "input":
        {"op": "exchange", "kind": "gather", "input": {"op": "pre_aggregate", ...}}}}

Operators: ``scan``, ``filter``, ``map``, ``hash_join``, ``pre_aggregate``,
``aggregate`` and ``exchange`` (kind ``hash``, ``broadcast`` or ``gather``).
:func:`compile_plan` checks that every join and aggregation sees correctly
distributed input, prunes unused columns at scans and exchanges, and splits
the tree into pipelines in execution order. The root result is gathered to
node 0 through an implicit exchange.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

from hyshuffle.codec import Column, ColumnType, Kind, Schema
from hyshuffle.engine.aggregates import AggCall, AggLayout, complete_layout, final_layout
from hyshuffle.engine.expressions import BOOL, CompiledExpr, compile_expr, compile_predicate, referenced_columns
from hyshuffle.exchange import GATHER_OPERATOR_ID, ExchangeKind
from hyshuffle.errors import PlanError

# ---------------------------------------------------------------------------
# logical operators
# ---------------------------------------------------------------------------

ANY = ("any",)
REPLICATED = ("replicated",)
SINGLE = ("single",)
Dist = tuple  # ("any",) | ("replicated",) | ("single",) | ("hash", keys)


@dataclass(eq=False)
class Node:
    schema: Schema = field(default=None, init=False, repr=False)
    dist: tuple = field(default=ANY, init=False, repr=False)

    @property
    def children(self) -> tuple[Node, ...]:
        return ()


@dataclass(eq=False)
class Scan(Node):
    table: str
    columns: tuple[str, ...] | None = None


@dataclass(eq=False)
class Filter(Node):
    input: Node
    predicate: str

    @property
    def children(self):
        return (self.input,)


@dataclass(eq=False)
class Map(Node):
    input: Node
    exprs: tuple[tuple[str, str], ...]
    keep: tuple[str, ...] | None = None  # None keeps every input column

    @property
    def children(self):
        return (self.input,)


@dataclass(eq=False)
class HashJoin(Node):
    build: Node
    probe: Node
    build_keys: tuple[str, ...]
    probe_keys: tuple[str, ...]
    residual: str | None = None
    output: tuple[str, ...] | None = None
    join_id: int = 0

    @property
    def children(self):
        return (self.build, self.probe)


@dataclass(eq=False)
class PreAggregate(Node):
    input: Node
    group_by: tuple[str, ...]
    aggregates: tuple[AggCall, ...]

    @property
    def children(self):
        return (self.input,)


@dataclass(eq=False)
class Aggregate(Node):
    input: Node
    group_by: tuple[str, ...]
    aggregates: tuple[AggCall, ...] | None = None
    agg_id: int = 0
    partial_source: PreAggregate | None = field(default=None, init=False, repr=False)

    @property
    def children(self):
        return (self.input,)


@dataclass(eq=False)
class Exchange(Node):
    input: Node
    kind: ExchangeKind
    operator_id: int = 0

    @property
    def children(self):
        return (self.input,)


@dataclass(eq=False)
class LogicalPlan:
    name: str
    root: Node

    def walk(self) -> list[Node]:
        out: list[Node] = []

        def visit(node: Node) -> None:
            out.append(node)
            for c in node.children:
                visit(c)

        visit(self.root)
        return out

    @property
    def exchanges(self) -> list[Exchange]:
        return [n for n in self.walk() if isinstance(n, Exchange)]


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------


def _names(value: Any, what: str) -> tuple[str, ...]:
    if value is None:
        return ()
    if isinstance(value, str):
        return (value,)
    if not isinstance(value, (list, tuple)) or not all(isinstance(v, str) for v in value):
        raise PlanError(f"{what} must be a list of column names")
    return tuple(value)


def _node_from(obj: Any) -> Node:
    if not isinstance(obj, Mapping) or "op" not in obj:
        raise PlanError(f"plan node must be an object with an 'op' field, got {obj!r}")
    op = obj["op"]
    if op == "scan":
        cols = obj.get("columns")
        return Scan(obj["table"], _names(cols, "scan columns") if cols is not None else None)
    if op == "filter":
        return Filter(_node_from(obj["input"]), obj["predicate"])
    if op == "map":
        exprs = obj.get("exprs", {})
        if isinstance(exprs, Mapping):
            pairs = tuple(exprs.items())
        else:
            pairs = tuple((e[0], e[1]) for e in exprs)
        keep = obj.get("keep")
        return Map(_node_from(obj["input"]), pairs, None if keep in (None, "*") else _names(keep, "map keep"))
    if op == "hash_join":
        out = obj.get("output")
        return HashJoin(
            _node_from(obj["build"]),
            _node_from(obj["probe"]),
            _names(obj["build_keys"], "build_keys"),
            _names(obj["probe_keys"], "probe_keys"),
            obj.get("residual"),
            _names(out, "join output") if out is not None else None,
        )
    if op == "pre_aggregate":
        return PreAggregate(
            _node_from(obj["input"]),
            _names(obj.get("group_by", []), "group_by"),
            tuple(AggCall.parse(a) for a in obj.get("aggregates", [])),
        )
    if op == "aggregate":
        aggs = obj.get("aggregates")
        return Aggregate(
            _node_from(obj["input"]),
            _names(obj.get("group_by", []), "group_by"),
            tuple(AggCall.parse(a) for a in aggs) if aggs is not None else None,
        )
    if op == "exchange":
        kind = obj.get("kind", "hash")
        if kind == "hash":
            ek = ExchangeKind.hash_partition(*_names(obj.get("keys"), "exchange keys"))
        elif kind == "broadcast":
            ek = ExchangeKind.broadcast()
        elif kind == "gather":
            ek = ExchangeKind.gather()
        else:
            raise PlanError(f"unknown exchange kind {kind!r}")
        return Exchange(_node_from(obj["input"]), ek)
    raise PlanError(f"unknown operator {op!r}")


def parse_plan(obj: Mapping | str) -> LogicalPlan:
    if isinstance(obj, str):
        try:
            obj = json.loads(obj)
        except json.JSONDecodeError as exc:
            raise PlanError(f"plan is not valid JSON: {exc}") from exc
    if "root" not in obj:
        raise PlanError("plan needs a 'root' operator")
    plan = LogicalPlan(obj.get("name", "plan"), _node_from(obj["root"]))
    next_ex, next_join, next_agg = 1, 1, 1
    for node in plan.walk():
        if isinstance(node, Exchange):
            node.operator_id = next_ex
            next_ex += 1
        elif isinstance(node, HashJoin):
            node.join_id = next_join
            next_join += 1
        elif isinstance(node, Aggregate):
            node.agg_id = next_agg
            next_agg += 1
    return plan


def load_plan(path: str | Path) -> LogicalPlan:
    with open(path) as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise PlanError(f"{path}: not valid JSON: {exc}") from exc
    return parse_plan(obj)


# ---------------------------------------------------------------------------
# binding and distribution checks
# ---------------------------------------------------------------------------


def _key_types_match(a: ColumnType, b: ColumnType) -> bool:
    return a.kind is b.kind and (a.kind is not Kind.DECIMAL64 or a.scale == b.scale)


def _find_partial(node: Node) -> PreAggregate | None:
    while isinstance(node, Exchange):
        node = node.input
    return node if isinstance(node, PreAggregate) else None


def _map_columns(node: Map, schema: Schema) -> tuple[tuple[str, ...], dict[str, CompiledExpr]]:
    keep = schema.names if node.keep is None else node.keep
    for k in keep:
        if k not in schema:
            raise PlanError(f"map keeps unknown column {k!r}")
    exprs = {}
    for name, src in node.exprs:
        if name in keep or name in exprs:
            raise PlanError(f"map output column {name!r} defined twice")
        e = compile_expr(src, schema)
        if e.type is BOOL:
            raise PlanError(f"map column {name!r}: boolean expressions cannot be stored")
        exprs[name] = e
    return tuple(keep), exprs


def _map_dist(node: Map, keep: tuple[str, ...]) -> Dist:
    """Hash distribution survives a map if every key is kept or copied under a new name."""
    d = node.input.dist
    if d[0] != "hash":
        return d
    alias = {k: k for k in keep}
    for name, src in node.exprs:
        src = src.strip()
        if src in node.input.schema and src not in alias:
            alias[src] = name
    if all(k in alias for k in d[1]):
        return ("hash", tuple(alias[k] for k in d[1]))
    return ANY


def bind(plan: LogicalPlan, catalog: Mapping[str, Schema]) -> LogicalPlan:
    """Compute every operator's logical schema and data distribution."""

    def visit(node: Node) -> None:
        for c in node.children:
            visit(c)
        if isinstance(node, Scan):
            if node.table not in catalog:
                raise PlanError(f"unknown table {node.table!r}")
            base = catalog[node.table]
            if node.columns is not None:
                try:
                    node.schema = base.project([base.index(c) for c in node.columns])
                except Exception as exc:
                    raise PlanError(f"scan of {node.table}: {exc}") from exc
            else:
                node.schema = base
            node.dist = ANY
        elif isinstance(node, Filter):
            compile_predicate(node.predicate, node.input.schema)
            node.schema = node.input.schema
            node.dist = node.input.dist
        elif isinstance(node, Map):
            keep, exprs = _map_columns(node, node.input.schema)
            cols = [node.input.schema.columns[node.input.schema.index(k)] for k in keep]
            cols += [Column(name, e.type) for name, e in exprs.items()]
            node.schema = Schema(tuple(cols))
            node.dist = _map_dist(node, keep)
        elif isinstance(node, HashJoin):
            _bind_join(node)
        elif isinstance(node, PreAggregate):
            layout = complete_layout(node.input.schema, node.group_by, node.aggregates, partial=True)
            node.schema = layout.out_schema
            d = node.input.dist
            if d == REPLICATED:
                raise PlanError("pre_aggregate over replicated input would count rows once per node")
            node.dist = d if d[0] != "hash" or set(d[1]) <= set(node.group_by) else ANY
        elif isinstance(node, Aggregate):
            _bind_aggregate(node)
        elif isinstance(node, Exchange):
            d = node.input.dist
            if d == REPLICATED:
                raise PlanError(f"exchange {node.operator_id}: input is replicated on every node")
            schema = node.input.schema
            if node.kind.mode == "hash":
                if not node.kind.keys:
                    raise PlanError(f"exchange {node.operator_id}: hash exchange needs key columns")
                for k in node.kind.keys:
                    if k not in schema:
                        raise PlanError(f"exchange {node.operator_id}: unknown hash key {k!r}")
                node.dist = ("hash", tuple(node.kind.keys))
            elif node.kind.mode == "broadcast":
                node.dist = REPLICATED
            else:
                node.dist = SINGLE
            node.schema = schema
        else:  # pragma: no cover - parse_plan only builds the kinds above
            raise PlanError(f"unsupported node {node!r}")

    visit(plan.root)
    if plan.root.dist == REPLICATED:
        raise PlanError("plan root is replicated on every node; gathering it would duplicate rows")
    return plan


def _bind_join(node: HashJoin) -> None:
    b, p = node.build, node.probe
    if len(node.build_keys) != len(node.probe_keys) or not node.build_keys:
        raise PlanError(f"join {node.join_id}: build and probe key lists must have the same non-zero length")
    for side, keys in ((b, node.build_keys), (p, node.probe_keys)):
        for k in keys:
            if k not in side.schema:
                raise PlanError(f"join {node.join_id}: unknown key column {k!r}")
    for bk, pk in zip(node.build_keys, node.probe_keys):
        if not _key_types_match(b.schema.type_of(bk), p.schema.type_of(pk)):
            raise PlanError(f"join {node.join_id}: key types differ for {bk!r} and {pk!r}")
    overlap = set(b.schema.names) & set(p.schema.names)
    if overlap:
        raise PlanError(f"join {node.join_id}: columns {sorted(overlap)} exist on both sides")
    joined = p.schema.concat(b.schema)
    if node.residual is not None:
        compile_predicate(node.residual, joined)
    if node.output is not None:
        node.schema = joined.project([joined.index(c) for c in node.output])
    else:
        node.schema = joined
    # co-location: replicated build side, or both sides hashed on matching key pairs
    if b.dist == REPLICATED:
        node.dist = p.dist
    elif b.dist[0] == "hash" and p.dist[0] == "hash":
        try:
            bpos = [node.build_keys.index(k) for k in b.dist[1]]
            ppos = [node.probe_keys.index(k) for k in p.dist[1]]
        except ValueError:
            raise PlanError(
                f"join {node.join_id}: inputs are hashed on {b.dist[1]} / {p.dist[1]}, not on the join keys"
            ) from None
        if bpos != ppos:
            raise PlanError(f"join {node.join_id}: build and probe are hashed on non-corresponding keys")
        node.dist = p.dist
    elif b.dist == SINGLE and p.dist == SINGLE:
        node.dist = SINGLE
    else:
        raise PlanError(
            f"join {node.join_id}: build side must be broadcast, or both sides hash-partitioned on the join keys "
            f"(build is {b.dist[0]}, probe is {p.dist[0]})"
        )
    if node.dist[0] == "hash" and not set(node.dist[1]) <= set(node.schema.names):
        node.dist = ANY


def _bind_aggregate(node: Aggregate) -> None:
    partial = _find_partial(node.input)
    schema = node.input.schema
    if partial is not None:
        if node.aggregates is None:
            node.aggregates = partial.aggregates
        elif [(a.name, a.fn) for a in node.aggregates] != [(a.name, a.fn) for a in partial.aggregates]:
            raise PlanError("aggregate over a pre_aggregate must use the same aggregate calls")
        if set(node.group_by) != set(partial.group_by):
            raise PlanError("aggregate over a pre_aggregate must group by the same columns")
        node.partial_source = partial
        layout = final_layout(schema, node.group_by, node.aggregates)
    else:
        if node.aggregates is None:
            raise PlanError("aggregate needs an 'aggregates' list")
        layout = complete_layout(schema, node.group_by, node.aggregates)
    node.schema = layout.out_schema
    d = node.input.dist
    if d == SINGLE:
        node.dist = SINGLE
    elif d[0] == "hash" and set(d[1]) <= set(node.group_by):
        node.dist = d
    else:
        what = "global aggregate needs gathered input" if not node.group_by else (
            f"aggregate by {list(node.group_by)} needs input hash-partitioned on a subset of its group keys"
        )
        raise PlanError(f"{what} (input is {d[0]})")


# ---------------------------------------------------------------------------
# physical plan
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExchangeSpec:
    operator_id: int
    kind: ExchangeKind
    in_schema: Schema
    out_columns: tuple[str, ...]
    out_schema: Schema


@dataclass(frozen=True)
class ScanSource:
    table: str
    columns: tuple[str, ...]
    schema: Schema


@dataclass(frozen=True)
class ReceiveSource:
    exchange: ExchangeSpec

    @property
    def schema(self) -> Schema:
        return self.exchange.out_schema


@dataclass(frozen=True)
class MaterializedSource:
    agg_id: int
    schema: Schema


@dataclass(frozen=True)
class FilterOp:
    predicate: CompiledExpr


@dataclass(frozen=True)
class MapOp:
    fns: tuple[Callable[[tuple], Any], ...]
    schema: Schema


@dataclass(frozen=True)
class ProjectOp:
    indices: tuple[int, ...]
    schema: Schema


@dataclass(frozen=True)
class ProbeOp:
    join_id: int
    key_idx: tuple[int, ...]
    residual: CompiledExpr | None
    out_idx: tuple[int, ...] | None  # projection of probe+build row, None = keep all
    schema: Schema


@dataclass(frozen=True)
class PreAggOp:
    layout: AggLayout


@dataclass(frozen=True)
class ExchangeSink:
    exchange: ExchangeSpec


@dataclass(frozen=True)
class BuildSink:
    join_id: int
    key_idx: tuple[int, ...]
    schema: Schema


@dataclass(frozen=True)
class AggregateSink:
    agg_id: int
    layout: AggLayout
    final: bool


@dataclass(frozen=True)
class CollectSink:
    schema: Schema


@dataclass(frozen=True)
class PipelineSpec:
    pid: int
    source: Any
    ops: tuple[Any, ...]
    sink: Any

    def describe(self) -> str:
        src = self.source
        if isinstance(src, ScanSource):
            head = f"scan {src.table}"
        elif isinstance(src, ReceiveSource):
            head = f"receive exchange {src.exchange.operator_id:#x}"
        else:
            head = f"aggregate {src.agg_id} result"
        parts = [head] + [type(o).__name__.removesuffix("Op").lower() for o in self.ops]
        sink = self.sink
        if isinstance(sink, ExchangeSink):
            parts.append(f"{sink.exchange.kind.mode} exchange {sink.exchange.operator_id:#x}")
        else:
            parts.append(type(sink).__name__.removesuffix("Sink").lower())
        return " -> ".join(parts)


@dataclass(frozen=True)
class PhysicalPlan:
    name: str
    pipelines: tuple[PipelineSpec, ...]
    exchanges: tuple[ExchangeSpec, ...]
    result_schema: Schema
    tables: tuple[str, ...]

    def describe(self) -> str:
        return "\n".join(f"P{p.pid}: {p.describe()}" for p in self.pipelines)

    def sending_pipelines(self) -> list[int]:
        return [p.pid for p in self.pipelines if isinstance(p.sink, ExchangeSink)]


@dataclass
class _Open:
    source: Any
    ops: list
    schema: Schema


class _Builder:
    def __init__(self, catalog: Mapping[str, Schema]):
        self.catalog = catalog
        self.pipelines: list[PipelineSpec] = []
        self.exchanges: list[ExchangeSpec] = []
        self.tables: list[str] = []

    def close(self, open_: _Open, sink: Any) -> None:
        self.pipelines.append(PipelineSpec(len(self.pipelines), open_.source, tuple(open_.ops), sink))

    @staticmethod
    def ordered(schema: Schema, needed: set[str]) -> tuple[str, ...]:
        return tuple(c for c in schema.names if c in needed)

    @staticmethod
    def at_least_one(needed: set[str], schema: Schema) -> set[str]:
        # a tuple without columns cannot be serialized or counted, keep one
        return needed if needed else {schema.names[0]}

    def project(self, open_: _Open, needed: set[str]) -> _Open:
        names = self.ordered(open_.schema, needed)
        if names == open_.schema.names:
            return open_
        idx = tuple(open_.schema.index(c) for c in names)
        schema = open_.schema.project(idx)
        open_.ops.append(ProjectOp(idx, schema))
        open_.schema = schema
        return open_

    def build(self, node: Node, needed: set[str]) -> _Open:
        needed = self.at_least_one(set(needed), node.schema)
        if isinstance(node, Scan):
            cols = self.ordered(node.schema, needed)
            if node.table not in self.tables:
                self.tables.append(node.table)
            base = self.catalog[node.table]
            schema = base.project([base.index(c) for c in cols])
            return _Open(ScanSource(node.table, cols, schema), [], schema)
        if isinstance(node, Filter):
            child = self.build(node.input, needed | referenced_columns(node.predicate))
            child.ops.append(FilterOp(compile_predicate(node.predicate, child.schema)))
            return self.project(child, needed)
        if isinstance(node, Map):
            return self._map(node, needed)
        if isinstance(node, HashJoin):
            return self._join(node, needed)
        if isinstance(node, PreAggregate):
            child_needed = set(node.group_by)
            for a in node.aggregates:
                if a.arg is not None:
                    child_needed |= referenced_columns(a.arg)
            child = self.build(node.input, child_needed)
            layout = complete_layout(child.schema, node.group_by, node.aggregates, partial=True)
            child.ops.append(PreAggOp(layout))
            child.schema = layout.out_schema
            return self.project(child, needed)
        if isinstance(node, Aggregate):
            if node.partial_source is not None:
                child = self.build(node.input, set(node.input.schema.names))
                layout = final_layout(child.schema, node.group_by, node.aggregates)
            else:
                child_needed = set(node.group_by)
                for a in node.aggregates:
                    if a.arg is not None:
                        child_needed |= referenced_columns(a.arg)
                child = self.build(node.input, child_needed)
                layout = complete_layout(child.schema, node.group_by, node.aggregates)
            self.close(child, AggregateSink(node.agg_id, layout, node.partial_source is not None))
            out = _Open(MaterializedSource(node.agg_id, layout.out_schema), [], layout.out_schema)
            return self.project(out, needed)
        if isinstance(node, Exchange):
            child = self.build(node.input, needed | set(node.kind.keys))
            spec = self.exchange_spec(node.operator_id, node.kind, child.schema, needed)
            self.close(child, ExchangeSink(spec))
            return _Open(ReceiveSource(spec), [], spec.out_schema)
        raise PlanError(f"unsupported node {node!r}")  # pragma: no cover

    def exchange_spec(self, op_id: int, kind: ExchangeKind, schema: Schema, needed: set[str]) -> ExchangeSpec:
        out_cols = self.ordered(schema, needed)
        spec = ExchangeSpec(op_id, kind, schema, out_cols, schema.project([schema.index(c) for c in out_cols]))
        self.exchanges.append(spec)
        return spec

    def _map(self, node: Map, needed: set[str]) -> _Open:
        keep_all = node.input.schema.names if node.keep is None else node.keep
        exprs = dict(node.exprs)
        child_needed = {k for k in keep_all if k in needed}
        for name, src in exprs.items():
            if name in needed:
                child_needed |= referenced_columns(src)
        child = self.build(node.input, child_needed)
        fns = []
        cols = []
        for k in keep_all:
            if k in needed:
                i = child.schema.index(k)
                fns.append(_getter(i))
                cols.append(child.schema.columns[i])
        for name, src in exprs.items():
            if name in needed:
                e = compile_expr(src, child.schema)
                fns.append(e.fn)
                cols.append(Column(name, e.type))
        schema = Schema(tuple(cols))
        child.ops.append(MapOp(tuple(fns), schema))
        child.schema = schema
        return child

    def _join(self, node: HashJoin, needed: set[str]) -> _Open:
        out_names = set(node.schema.names) & needed
        res_cols = referenced_columns(node.residual) if node.residual else frozenset()
        bnames, pnames = set(node.build.schema.names), set(node.probe.schema.names)
        build = self.build(node.build, ((out_names | res_cols) & bnames) | set(node.build_keys))
        self.close(build, BuildSink(node.join_id, tuple(build.schema.index(k) for k in node.build_keys), build.schema))
        probe = self.build(node.probe, ((out_names | res_cols) & pnames) | set(node.probe_keys))
        joined = probe.schema.concat(build.schema)
        residual = compile_predicate(node.residual, joined) if node.residual else None
        keep = self.ordered(joined, out_names if out_names else {node.schema.names[0]})
        out_idx = tuple(joined.index(c) for c in keep)
        schema = joined.project(out_idx)
        probe.ops.append(ProbeOp(
            node.join_id,
            tuple(probe.schema.index(k) for k in node.probe_keys),
            residual,
            None if out_idx == tuple(range(len(joined))) else out_idx,
            schema,
        ))
        probe.schema = schema
        return probe


def _getter(i: int) -> Callable[[tuple], Any]:
    return lambda row: row[i]


def compile_plan(plan: LogicalPlan | Mapping | str, catalog: Mapping[str, Schema]) -> PhysicalPlan:
    if not isinstance(plan, LogicalPlan):
        plan = parse_plan(plan)
    bind(plan, catalog)
    b = _Builder(catalog)
    root_cols = set(plan.root.schema.names)
    out = b.build(plan.root, root_cols)
    gather = b.exchange_spec(GATHER_OPERATOR_ID, ExchangeKind.gather(), out.schema, root_cols)
    b.close(out, ExchangeSink(gather))
    b.close(_Open(ReceiveSource(gather), [], gather.out_schema), CollectSink(gather.out_schema))
    return PhysicalPlan(plan.name, tuple(b.pipelines), tuple(b.exchanges), gather.out_schema, tuple(b.tables))


def validate_plan(plan: LogicalPlan | Mapping | str, catalog: Mapping[str, Schema]) -> list[str]:
    """Return a list of problems (empty when the plan is valid)."""
    try:
        compile_plan(plan, catalog)
    except PlanError as exc:
        return [str(exc)]
    return []


def plan_tables(plan: LogicalPlan) -> list[str]:
    return sorted({n.table for n in plan.walk() if isinstance(n, Scan)})


def logical_schema(plan: LogicalPlan, catalog: Mapping[str, Schema]) -> Schema:
    return bind(plan, catalog).root.schema


def exchange_count(plan: PhysicalPlan) -> int:
    return len([e for e in plan.exchanges if e.operator_id != GATHER_OPERATOR_ID])


__all__: Sequence[str] = (
    "Aggregate", "Exchange", "Filter", "HashJoin", "LogicalPlan", "Map", "PreAggregate", "Scan",
    "PhysicalPlan", "PipelineSpec", "compile_plan", "load_plan", "parse_plan", "bind", "validate_plan",
)
