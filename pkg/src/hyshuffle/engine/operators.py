"""Runtime instances of pipeline operators and sinks.

Operators transform a list of row tuples into another list. Sinks are shared
by all workers of a node: each worker gets a private handle for the hot path,
and the node finalizes the sink once every local worker has finished.
"""

from __future__ import annotations

import threading
from typing import TYPE_CHECKING, Any, Callable

from hyshuffle.codec import TupleBatch
from hyshuffle.engine.aggregates import AggLayout
from hyshuffle.engine.plan import (
    AggregateSink,
    BuildSink,
    CollectSink,
    ExchangeSink,
    FilterOp,
    MapOp,
    PreAggOp,
    ProbeOp,
    ProjectOp,
)
from hyshuffle.errors import ContractViolation
from hyshuffle.exchange import ExchangeOperator

if TYPE_CHECKING:
    from hyshuffle.engine.node import NodeRuntime

Rows = list


class JoinTable:
    """Hash table of a join's build side; immutable once frozen."""

    def __init__(self, join_id: int):
        self.join_id = join_id
        self._parts: list[list[tuple[tuple, tuple]]] = []
        self._lock = threading.Lock()
        self.table: dict[tuple, list[tuple]] | None = None
        self.rows = 0

    def add_partition(self, entries: list[tuple[tuple, tuple]]) -> None:
        if self.table is not None:
            raise ContractViolation(f"join {self.join_id}: insert into a frozen build table")
        with self._lock:
            self._parts.append(entries)

    def freeze(self) -> None:
        table: dict[tuple, list[tuple]] = {}
        for part in self._parts:
            for key, row in part:
                bucket = table.get(key)
                if bucket is None:
                    table[key] = [row]
                else:
                    bucket.append(row)
                self.rows += 1
        self._parts = []
        self.table = table

    @property
    def frozen(self) -> bool:
        return self.table is not None


def _key_fn(idx: tuple[int, ...]) -> Callable[[tuple], tuple]:
    if len(idx) == 1:
        i = idx[0]
        return lambda row: (row[i],)
    return lambda row: tuple(row[i] for i in idx)


class PreAggregator:
    """Worker-private pre-aggregation; emits its groups when the worker's input ends."""

    def __init__(self, layout: AggLayout):
        self.layout = layout
        self.groups: dict[tuple, list] = {}
        self._key = layout.key_of()
        self._update = layout.updater()
        self.rows_in = 0

    def push(self, rows: Rows) -> Rows:
        groups, key, update, new = self.groups, self._key, self._update, self.layout.new_state
        for row in rows:
            k = key(row)
            st = groups.get(k)
            if st is None:
                st = groups[k] = new()
            update(st, row)
        self.rows_in += len(rows)
        return []

    def finish(self) -> Rows:
        out = [self.layout.finalize(k, st) for k, st in self.groups.items()]
        self.groups = {}
        return out


def make_stage(spec: Any, runtime: NodeRuntime):
    """Return ``(push, finish)`` for one operator; ``finish`` may be ``None``."""
    if isinstance(spec, FilterOp):
        pred = spec.predicate.fn
        return (lambda rows: [r for r in rows if pred(r) is True]), None
    if isinstance(spec, MapOp):
        fns = spec.fns
        return (lambda rows: [tuple(f(r) for f in fns) for r in rows]), None
    if isinstance(spec, ProjectOp):
        idx = spec.indices
        return (lambda rows: [tuple(r[i] for i in idx) for r in rows]), None
    if isinstance(spec, ProbeOp):
        jt = runtime.join_tables[spec.join_id]
        if not jt.frozen:
            raise ContractViolation(f"join {spec.join_id}: probe before the build side finished")
        table = jt.table
        key = _key_fn(spec.key_idx)
        residual = spec.residual.fn if spec.residual is not None else None
        out_idx = spec.out_idx

        def probe(rows: Rows) -> Rows:
            out = []
            for r in rows:
                k = key(r)
                matches = table.get(k)
                if not matches or None in k:
                    continue
                for b in matches:
                    j = r + b
                    if residual is not None and residual(j) is not True:
                        continue
                    out.append(j if out_idx is None else tuple(j[i] for i in out_idx))
            return out

        return probe, None
    if isinstance(spec, PreAggOp):
        agg = PreAggregator(spec.layout)
        return agg.push, agg.finish
    raise TypeError(f"unknown operator spec {spec!r}")


class Chain:
    """A worker's instance of a pipeline's operators followed by its sink handle."""

    def __init__(self, stages: list, sink_handle: Any):
        self.stages = stages
        self.sink = sink_handle

    def push(self, rows: Rows, start: int = 0) -> None:
        for push, _ in self.stages[start:]:
            if not rows:
                return
            rows = push(rows)
        if rows:
            self.sink.consume(rows)

    def finish(self) -> None:
        for i, (_, finish) in enumerate(self.stages):
            if finish is not None:
                self.push(finish(), i + 1)
        self.sink.finish()


# ---------------------------------------------------------------------------
# sinks
# ---------------------------------------------------------------------------


class ExchangeSinkRuntime:
    def __init__(self, spec: ExchangeSink, runtime: NodeRuntime):
        ex = spec.exchange
        self.operator = ExchangeOperator(ex.operator_id, ex.kind, ex.in_schema, runtime, ex.out_columns)
        runtime.exchange_operators[ex.operator_id] = self.operator

    def handle(self, region: int):
        op = self.operator
        state = op.open_worker(region)

        class _Handle:
            def consume(self, rows: Rows) -> None:
                op.consume_rows(state, rows)

            def finish(self) -> None:
                pass

        return _Handle()

    def finalize(self) -> None:
        self.operator.finish()


class BuildSinkRuntime:
    def __init__(self, spec: BuildSink, runtime: NodeRuntime):
        self.spec = spec
        self.table = JoinTable(spec.join_id)
        runtime.join_tables[spec.join_id] = self.table

    def handle(self, region: int):
        table = self.table
        key = _key_fn(self.spec.key_idx)
        entries: list[tuple[tuple, tuple]] = []

        class _Handle:
            def consume(self, rows: Rows) -> None:
                for r in rows:
                    k = key(r)
                    if None not in k:
                        entries.append((k, r))

            def finish(self) -> None:
                table.add_partition(entries)

        return _Handle()

    def finalize(self) -> None:
        self.table.freeze()


class AggregateSinkRuntime:
    def __init__(self, spec: AggregateSink, runtime: NodeRuntime):
        self.spec = spec
        self.runtime = runtime
        self._tables: list[dict[tuple, list]] = []
        self._lock = threading.Lock()

    def handle(self, region: int):
        layout = self.spec.layout
        agg = PreAggregator(layout)
        tables, lock = self._tables, self._lock

        class _Handle:
            def consume(self, rows: Rows) -> None:
                agg.push(rows)

            def finish(self) -> None:
                with lock:
                    tables.append(agg.groups)

        return _Handle()

    def finalize(self) -> None:
        layout = self.spec.layout
        merge = layout.merger()
        merged: dict[tuple, list] = {}
        for t in self._tables:
            for k, st in t.items():
                cur = merged.get(k)
                if cur is None:
                    merged[k] = st
                else:
                    merge(cur, st)
        if layout.is_global and not merged and self.runtime.node == 0:
            # a global aggregate yields one row even for empty input, produced once cluster-wide
            merged[()] = layout.new_state()
        rows = [layout.finalize(k, st) for k, st in merged.items()]
        self.runtime.materialized[self.spec.agg_id] = rows


class CollectSinkRuntime:
    def __init__(self, spec: CollectSink, runtime: NodeRuntime):
        self.spec = spec
        self.runtime = runtime
        self._parts: list[list[tuple]] = []
        self._lock = threading.Lock()

    def handle(self, region: int):
        rows_out: list[tuple] = []
        parts, lock = self._parts, self._lock

        class _Handle:
            def consume(self, rows: Rows) -> None:
                rows_out.extend(rows)

            def finish(self) -> None:
                with lock:
                    parts.append(rows_out)

        return _Handle()

    def finalize(self) -> None:
        out = []
        for p in self._parts:
            out.extend(p)
        self.runtime.result = TupleBatch.from_rows(self.spec.schema, out)


def make_sink(spec: Any, runtime: NodeRuntime):
    if isinstance(spec, ExchangeSink):
        return ExchangeSinkRuntime(spec, runtime)
    if isinstance(spec, BuildSink):
        return BuildSinkRuntime(spec, runtime)
    if isinstance(spec, AggregateSink):
        return AggregateSinkRuntime(spec, runtime)
    if isinstance(spec, CollectSink):
        return CollectSinkRuntime(spec, runtime)
    raise TypeError(f"unknown sink spec {spec!r}")
