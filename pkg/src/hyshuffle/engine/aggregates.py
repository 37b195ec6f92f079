"""Decomposable aggregates: complete, partial (pre-aggregation) and final (merge) forms.

Every aggregate is reduced to *slots* that can be combined associatively
(``sum``, ``count``, ``min``, ``max``); ``avg`` uses a sum and a count slot.
A pre-aggregation emits the raw slots as columns, the final aggregation
sums/min/maxes those columns and finalizes ``avg`` exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from decimal import Decimal
from typing import Any, Callable, Sequence

from hyshuffle.codec import Column, ColumnType, Kind, Schema
from hyshuffle.engine.expressions import CTX, DIVISION_SCALE, compile_expr, quantizer
from hyshuffle.errors import PlanError

AGG_FUNCS = ("sum", "count", "min", "max", "avg")
AVG_SUM_SUFFIX = "__sum"
AVG_COUNT_SUFFIX = "__count"


@dataclass(frozen=True)
class AggCall:
    name: str
    fn: str
    arg: str | None = None  # expression source; None only for count(*)

    def __post_init__(self) -> None:
        if self.fn not in AGG_FUNCS:
            raise PlanError(f"aggregate {self.name!r}: unknown function {self.fn!r}; expected one of {AGG_FUNCS}")
        if self.arg is None and self.fn != "count":
            raise PlanError(f"aggregate {self.name!r}: {self.fn} needs an argument")

    @classmethod
    def parse(cls, obj: Any) -> AggCall:
        if isinstance(obj, AggCall):
            return obj
        if isinstance(obj, (list, tuple)) and len(obj) in (2, 3):
            return cls(obj[0], obj[1], obj[2] if len(obj) == 3 else None)
        if isinstance(obj, dict):
            return cls(obj["name"], obj["fn"], obj.get("arg"))
        raise PlanError(f"cannot read aggregate {obj!r}; expected [name, fn, expr] or an object")

    def partial_names(self) -> tuple[str, ...]:
        if self.fn == "avg":
            return (self.name + AVG_SUM_SUFFIX, self.name + AVG_COUNT_SUFFIX)
        return (self.name,)


def _nullable(t: ColumnType) -> ColumnType:
    return t.with_nullable(True)


def avg_type(t: ColumnType) -> ColumnType:
    scale = t.scale if t.kind is Kind.DECIMAL64 else 0
    return ColumnType(Kind.DECIMAL64, True, max(scale, DIVISION_SCALE))


def _sum_type(t: ColumnType, who: str) -> ColumnType:
    if t.kind not in (Kind.INT64, Kind.DECIMAL64):
        raise PlanError(f"{who}: sum/avg need a numeric argument, got {t}")
    return _nullable(t)


# slot kinds: what is accumulated per group
SUM, COUNT, COUNT_STAR, MIN, MAX = "sum", "count", "count*", "min", "max"


@dataclass(frozen=True)
class Slot:
    kind: str
    arg: Callable[[tuple], Any] | None
    decimal: bool = False


@dataclass(frozen=True)
class Output:
    name: str
    type: ColumnType
    slots: tuple[int, ...]
    finalize: str  # "value", "count" (null -> 0) or "avg"
    scale: int = 0


@dataclass(frozen=True)
class AggLayout:
    """Compiled aggregation: group key extraction, slots and output columns."""

    group_idx: tuple[int, ...]
    slots: tuple[Slot, ...]
    outputs: tuple[Output, ...]
    out_schema: Schema

    @property
    def is_global(self) -> bool:
        return not self.group_idx

    def key_of(self) -> Callable[[tuple], tuple]:
        idx = self.group_idx
        if not idx:
            return lambda row: ()
        if len(idx) == 1:
            i = idx[0]
            return lambda row: (row[i],)
        return lambda row: tuple(row[i] for i in idx)

    def new_state(self) -> list:
        return [0 if s.kind in (COUNT, COUNT_STAR) else None for s in self.slots]

    def updater(self) -> Callable[[list, tuple], None]:
        ops = []
        for j, s in enumerate(self.slots):
            ops.append((j, s.kind, s.arg, s.decimal))

        def update(state: list, row: tuple) -> None:
            for j, kind, arg, dec in ops:
                if kind == COUNT_STAR:
                    state[j] += 1
                    continue
                v = arg(row)
                if v is None:
                    continue
                if kind == COUNT:
                    state[j] += 1
                elif kind == SUM:
                    cur = state[j]
                    if cur is None:
                        state[j] = v
                    else:
                        state[j] = CTX.add(cur, v) if dec else cur + v
                elif kind == MIN:
                    cur = state[j]
                    if cur is None or v < cur:
                        state[j] = v
                else:
                    cur = state[j]
                    if cur is None or v > cur:
                        state[j] = v

        return update

    def merger(self) -> Callable[[list, list], None]:
        """Combine two states of this layout (used when merging worker tables)."""
        kinds = [(j, s.kind, s.decimal) for j, s in enumerate(self.slots)]

        def merge(into: list, other: list) -> None:
            for j, kind, dec in kinds:
                b = other[j]
                if kind in (COUNT, COUNT_STAR):
                    into[j] += b
                    continue
                if b is None:
                    continue
                a = into[j]
                if a is None:
                    into[j] = b
                elif kind == SUM:
                    into[j] = CTX.add(a, b) if dec else a + b
                elif kind == MIN:
                    into[j] = b if b < a else a
                else:
                    into[j] = b if b > a else a

        return merge

    def finalize(self, key: tuple, state: list) -> tuple:
        values = list(key)
        for out in self.outputs:
            if out.finalize == "value":
                values.append(state[out.slots[0]])
            elif out.finalize == "count":
                v = state[out.slots[0]]
                values.append(0 if v is None else v)
            else:
                total, count = state[out.slots[0]], state[out.slots[1]]
                if total is None or not count:
                    values.append(None)
                else:
                    values.append(CTX.divide(Decimal(total), Decimal(count)).quantize(quantizer(out.scale), context=CTX))
        return tuple(values)


def _group_columns(schema: Schema, group_by: Sequence[str], who: str) -> tuple[tuple[int, ...], list[Column]]:
    if len(set(group_by)) != len(group_by):
        raise PlanError(f"{who}: duplicate group-by column")
    idx = []
    for g in group_by:
        if g not in schema:
            raise PlanError(f"{who}: unknown group-by column {g!r}")
        idx.append(schema.index(g))
    return tuple(idx), [schema.columns[i] for i in idx]


def _check_names(names: list[str], who: str) -> None:
    if len(set(names)) != len(names):
        raise PlanError(f"{who}: output column names are not unique: {names}")


def complete_layout(schema: Schema, group_by: Sequence[str], aggs: Sequence[AggCall], partial: bool = False) -> AggLayout:
    """Aggregate raw input rows; with ``partial`` the slots themselves are the output."""
    who = "pre_aggregate" if partial else "aggregate"
    group_idx, group_cols = _group_columns(schema, group_by, who)
    slots: list[Slot] = []
    outputs: list[Output] = []
    for a in aggs:
        if a.arg is None:
            slots.append(Slot(COUNT_STAR, None))
            outputs.append(Output(a.name, ColumnType(Kind.INT64), (len(slots) - 1,), "count"))
            continue
        expr = compile_expr(a.arg, schema)
        t = expr.type
        if not isinstance(t, ColumnType):
            raise PlanError(f"{who} {a.name!r}: argument {a.arg!r} is a predicate, not a value")
        dec = t.kind is Kind.DECIMAL64
        if a.fn == "count":
            slots.append(Slot(COUNT, expr.fn))
            outputs.append(Output(a.name, ColumnType(Kind.INT64), (len(slots) - 1,), "count"))
        elif a.fn in ("min", "max"):
            slots.append(Slot(MIN if a.fn == "min" else MAX, expr.fn))
            outputs.append(Output(a.name, _nullable(t), (len(slots) - 1,), "value"))
        elif a.fn == "sum":
            st = _sum_type(t, f"{who} {a.name!r}")
            slots.append(Slot(SUM, expr.fn, dec))
            outputs.append(Output(a.name, st, (len(slots) - 1,), "value"))
        else:
            st = _sum_type(t, f"{who} {a.name!r}")
            slots.append(Slot(SUM, expr.fn, dec))
            slots.append(Slot(COUNT, expr.fn))
            s, c = len(slots) - 2, len(slots) - 1
            if partial:
                outputs.append(Output(a.name + AVG_SUM_SUFFIX, st, (s,), "value"))
                outputs.append(Output(a.name + AVG_COUNT_SUFFIX, ColumnType(Kind.INT64), (c,), "count"))
            else:
                at = avg_type(t)
                outputs.append(Output(a.name, at, (s, c), "avg", at.scale))
    names = [c.name for c in group_cols] + [o.name for o in outputs]
    _check_names(names, who)
    out_schema = Schema(tuple(group_cols) + tuple(Column(o.name, o.type) for o in outputs))
    return AggLayout(group_idx, tuple(slots), tuple(outputs), out_schema)


def final_layout(schema: Schema, group_by: Sequence[str], aggs: Sequence[AggCall]) -> AggLayout:
    """Merge partial rows produced by a pre-aggregation with the same calls."""
    group_idx, group_cols = _group_columns(schema, group_by, "aggregate")
    slots: list[Slot] = []
    outputs: list[Output] = []

    def column(name: str) -> tuple[Callable[[tuple], Any], ColumnType]:
        if name not in schema:
            raise PlanError(f"aggregate: partial column {name!r} missing from pre-aggregated input")
        i = schema.index(name)
        return (lambda row, i=i: row[i]), schema.columns[i].type

    for a in aggs:
        if a.fn == "avg":
            sf, st = column(a.name + AVG_SUM_SUFFIX)
            cf, _ = column(a.name + AVG_COUNT_SUFFIX)
            slots.append(Slot(SUM, sf, st.kind is Kind.DECIMAL64))
            slots.append(Slot(SUM, cf))
            at = avg_type(st)
            outputs.append(Output(a.name, at, (len(slots) - 2, len(slots) - 1), "avg", at.scale))
            continue
        f, t = column(a.name)
        if a.fn == "count":
            slots.append(Slot(SUM, f))
            outputs.append(Output(a.name, ColumnType(Kind.INT64), (len(slots) - 1,), "count"))
        elif a.fn == "sum":
            slots.append(Slot(SUM, f, t.kind is Kind.DECIMAL64))
            outputs.append(Output(a.name, _nullable(t), (len(slots) - 1,), "value"))
        else:
            slots.append(Slot(MIN if a.fn == "min" else MAX, f))
            outputs.append(Output(a.name, _nullable(t), (len(slots) - 1,), "value"))
    names = [c.name for c in group_cols] + [o.name for o in outputs]
    _check_names(names, "aggregate")
    out_schema = Schema(tuple(group_cols) + tuple(Column(o.name, o.type) for o in outputs))
    return AggLayout(group_idx, tuple(slots), tuple(outputs), out_schema)
