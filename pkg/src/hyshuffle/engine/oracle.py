"""Naive single-threaded reference evaluator.

It walks the logical plan over whole tables, ignores every exchange, and
evaluates a pre-aggregation followed by its final aggregation as one direct
aggregation. It shares only expression compilation with the engine.
"""

from __future__ import annotations

from collections import Counter
from decimal import Decimal
from typing import Any, Mapping

from hyshuffle.codec import Schema, TupleBatch
from hyshuffle.engine.aggregates import AggCall, avg_type
from hyshuffle.engine.expressions import CTX, compile_expr, compile_predicate, quantizer
from hyshuffle.engine.plan import (
    Aggregate,
    Exchange,
    Filter,
    HashJoin,
    LogicalPlan,
    Map,
    Node,
    PreAggregate,
    Scan,
    bind,
    parse_plan,
)
from hyshuffle.errors import PlanError


def _aggregate(rows: list[tuple], schema: Schema, group_by, aggs: tuple[AggCall, ...], emit_empty_global: bool):
    gidx = [schema.index(g) for g in group_by]
    args = []
    for a in aggs:
        if a.arg is None:
            args.append((a, None, None))
        else:
            e = compile_expr(a.arg, schema)
            args.append((a, e.fn, e.type))
    groups: dict[tuple, list[list]] = {}
    for row in rows:
        key = tuple(row[i] for i in gidx)
        groups.setdefault(key, []).append(row)
    if not groups and not gidx and emit_empty_global:
        groups[()] = []
    out = []
    for key, members in groups.items():
        values = list(key)
        for a, fn, typ in args:
            if a.arg is None:
                values.append(len(members))
                continue
            vals = [v for v in (fn(r) for r in members) if v is not None]
            if a.fn == "count":
                values.append(len(vals))
            elif a.fn == "sum":
                values.append(_exact_sum(vals) if vals else None)
            elif a.fn == "min":
                values.append(min(vals) if vals else None)
            elif a.fn == "max":
                values.append(max(vals) if vals else None)
            else:
                if not vals:
                    values.append(None)
                else:
                    scale = avg_type(typ).scale
                    total = Decimal(_exact_sum(vals))
                    values.append(CTX.divide(total, Decimal(len(vals))).quantize(quantizer(scale), context=CTX))
        out.append(tuple(values))
    return out


def _exact_sum(vals: list) -> Any:
    if isinstance(vals[0], Decimal):
        total = Decimal(0)
        for v in vals:
            total = CTX.add(total, v)
        return total
    return sum(vals)


def _eval(node: Node, tables: Mapping[str, TupleBatch]) -> list[tuple]:
    if isinstance(node, Scan):
        batch = tables[node.table]
        idx = [batch.schema.index(c) for c in node.schema.names]
        return [tuple(r[i] for i in idx) for r in batch.rows()]
    if isinstance(node, Exchange):
        return _eval(node.input, tables)
    if isinstance(node, Filter):
        pred = compile_predicate(node.predicate, node.input.schema).fn
        return [r for r in _eval(node.input, tables) if pred(r) is True]
    if isinstance(node, Map):
        in_schema = node.input.schema
        fns = []
        for col in node.schema.names:
            src = dict(node.exprs).get(col)
            if src is None:
                i = in_schema.index(col)
                fns.append(lambda r, i=i: r[i])
            else:
                fns.append(compile_expr(src, in_schema).fn)
        return [tuple(f(r) for f in fns) for r in _eval(node.input, tables)]
    if isinstance(node, HashJoin):
        build = _eval(node.build, tables)
        probe = _eval(node.probe, tables)
        bs, ps = node.build.schema, node.probe.schema
        bidx = [bs.index(k) for k in node.build_keys]
        pidx = [ps.index(k) for k in node.probe_keys]
        joined_schema = ps.concat(bs)
        residual = compile_predicate(node.residual, joined_schema).fn if node.residual else None
        out_idx = [joined_schema.index(c) for c in node.schema.names]
        index: dict[tuple, list[tuple]] = {}
        for b in build:
            k = tuple(b[i] for i in bidx)
            if None not in k:
                index.setdefault(k, []).append(b)
        out = []
        for p in probe:
            k = tuple(p[i] for i in pidx)
            if None in k:
                continue
            for b in index.get(k, ()):
                j = p + b
                if residual is None or residual(j) is True:
                    out.append(tuple(j[i] for i in out_idx))
        return out
    if isinstance(node, Aggregate):
        if node.partial_source is not None:
            pre = node.partial_source
            rows = _eval(pre.input, tables)
            res = _aggregate(rows, pre.input.schema, pre.group_by, pre.aggregates, True)
            # reorder the group columns as the final aggregate lists them
            order = [list(pre.group_by).index(g) for g in node.group_by]
            k = len(pre.group_by)
            return [tuple(r[i] for i in order) + r[k:] for r in res]
        rows = _eval(node.input, tables)
        return _aggregate(rows, node.input.schema, node.group_by, node.aggregates, True)
    if isinstance(node, PreAggregate):
        raise PlanError("pre_aggregate must feed an aggregate")
    raise PlanError(f"oracle cannot evaluate {node!r}")


def evaluate(plan: LogicalPlan | Mapping | str, tables: Mapping[str, TupleBatch]) -> tuple[Schema, list[tuple]]:
    """Result schema and rows of ``plan`` on the union of all data."""
    if not isinstance(plan, LogicalPlan):
        plan = parse_plan(plan)
    bind(plan, {name: b.schema for name, b in tables.items()})
    return plan.root.schema, _eval(plan.root, tables)


def multiset(rows) -> Counter:
    return Counter(tuple(r) for r in rows)


def diff_sample(expected: Counter, actual: Counter, limit: int = 5) -> str:
    missing = list((expected - actual).elements())[:limit]
    extra = list((actual - expected).elements())[:limit]
    return f"missing {missing}; unexpected {extra}"

