"""A small typed expression language for filter/map/join predicates.

Expressions are written in Python syntax and parsed with :mod:`ast`; only
column names, literals, arithmetic, comparisons, boolean logic, ``in`` lists
and a handful of functions are accepted. Decimal arithmetic is exact; division
rounds half-even to ``max(scale_a, scale_b, 6)`` fractional digits.

Nulls propagate through arithmetic and comparisons; ``and``/``or``/``not``
use three-valued logic and a filter keeps a row only if its predicate is true.
"""

from __future__ import annotations

import ast
import datetime as _dt
import decimal
import operator
from dataclasses import dataclass
from decimal import Decimal
from typing import Any, Callable

from hyshuffle.codec import ColumnType, Kind, Schema
from hyshuffle.errors import PlanError

CTX = decimal.Context(prec=60, rounding=decimal.ROUND_HALF_EVEN)
DIVISION_SCALE = 6
MAX_SCALE = 18


class _Bool:
    def __repr__(self) -> str:
        return "bool"


BOOL = _Bool()
ExprType = "ColumnType | _Bool"


@dataclass(frozen=True)
class CompiledExpr:
    source: str
    fn: Callable[[tuple], Any]
    type: Any
    columns: frozenset[str]

    def __call__(self, row: tuple) -> Any:
        return self.fn(row)


def quantizer(scale: int) -> Decimal:
    return Decimal(1).scaleb(-scale)


def is_numeric(t: Any) -> bool:
    return isinstance(t, ColumnType) and t.kind in (Kind.INT64, Kind.DECIMAL64)


def _scale(t: ColumnType) -> int:
    return t.scale if t.kind is Kind.DECIMAL64 else 0


def referenced_columns(source: str) -> frozenset[str]:
    names: set[str] = set()
    for node in ast.walk(_parse(source)):
        if isinstance(node, ast.Call):
            continue
        if isinstance(node, ast.Name):
            names.add(node.id)
    funcs = {n.func.id for n in ast.walk(_parse(source)) if isinstance(n, ast.Call) and isinstance(n.func, ast.Name)}
    return frozenset(names - funcs)


def _parse(source: str) -> ast.Expression:
    try:
        return ast.parse(source.strip(), mode="eval")
    except SyntaxError as exc:
        raise PlanError(f"cannot parse expression {source!r}: {exc.msg}") from exc


def compile_expr(source: str, schema: Schema) -> CompiledExpr:
    tree = _parse(source)
    fn, typ = _Compiler(source, schema).visit(tree.body)
    return CompiledExpr(source, fn, typ, referenced_columns(source))


def compile_predicate(source: str, schema: Schema) -> CompiledExpr:
    expr = compile_expr(source, schema)
    if expr.type is not BOOL:
        raise PlanError(f"predicate {source!r} has type {expr.type}, expected bool")
    return expr


_CMP = {
    ast.Lt: operator.lt,
    ast.LtE: operator.le,
    ast.Gt: operator.gt,
    ast.GtE: operator.ge,
    ast.Eq: operator.eq,
    ast.NotEq: operator.ne,
}


class _Compiler:
    def __init__(self, source: str, schema: Schema):
        self.source = source
        self.schema = schema

    def fail(self, msg: str) -> PlanError:
        return PlanError(f"{msg} in expression {self.source!r}")

    def visit(self, node: ast.AST):
        method = getattr(self, "visit_" + type(node).__name__, None)
        if method is None:
            raise self.fail(f"unsupported syntax {type(node).__name__}")
        return method(node)

    # -- leaves ---------------------------------------------------------------

    def visit_Name(self, node: ast.Name):
        if node.id not in self.schema:
            raise self.fail(f"unknown column {node.id!r}")
        idx = self.schema.index(node.id)
        return operator.itemgetter(idx), self.schema.columns[idx].type

    def visit_Constant(self, node: ast.Constant):
        v = node.value
        if isinstance(v, bool):
            return (lambda row, v=v: v), BOOL
        if isinstance(v, int):
            return (lambda row, v=v: v), ColumnType(Kind.INT64)
        if isinstance(v, float):
            text = ast.get_source_segment(self.source.strip(), node) or repr(v)
            d = Decimal(text)
            scale = max(0, -d.as_tuple().exponent)
            if scale > MAX_SCALE:
                raise self.fail(f"literal {text} has too many fractional digits")
            return (lambda row, d=d: d), ColumnType(Kind.DECIMAL64, scale=scale)
        if isinstance(v, str):
            return (lambda row, v=v: v), ColumnType(Kind.VARCHAR)
        if v is None:
            return (lambda row: None), ColumnType(Kind.INT64, nullable=True)
        raise self.fail(f"unsupported literal {v!r}")

    # -- arithmetic -----------------------------------------------------------

    def visit_UnaryOp(self, node: ast.UnaryOp):
        fn, t = self.visit(node.operand)
        if isinstance(node.op, ast.Not):
            if t is not BOOL:
                raise self.fail("'not' needs a boolean operand")
            return (lambda row: None if (v := fn(row)) is None else not v), BOOL
        if isinstance(node.op, (ast.USub, ast.UAdd)):
            if not is_numeric(t):
                raise self.fail("unary minus needs a numeric operand")
            if isinstance(node.op, ast.UAdd):
                return fn, t
            return (lambda row: None if (v := fn(row)) is None else -v), t
        raise self.fail("unsupported unary operator")

    def visit_BinOp(self, node: ast.BinOp):
        lf, lt = self.visit(node.left)
        rf, rt = self.visit(node.right)
        op = node.op
        if isinstance(lt, ColumnType) and lt.kind is Kind.DATE32 and isinstance(op, (ast.Add, ast.Sub)):
            return self._date_arith(lf, lt, rf, rt, op)
        if not (is_numeric(lt) and is_numeric(rt)):
            raise self.fail(f"arithmetic on {lt} and {rt}")
        nullable = lt.nullable or rt.nullable
        both_int = lt.kind is Kind.INT64 and rt.kind is Kind.INT64
        ls, rs = _scale(lt), _scale(rt)
        if isinstance(op, ast.Div):
            scale = max(ls, rs, DIVISION_SCALE)
            q = quantizer(scale)

            def div(row):
                a, b = lf(row), rf(row)
                if a is None or b is None or b == 0:
                    return None
                return CTX.divide(Decimal(a), Decimal(b)).quantize(q, context=CTX)

            return div, ColumnType(Kind.DECIMAL64, True, scale)
        if isinstance(op, (ast.Add, ast.Sub)):
            py = operator.add if isinstance(op, ast.Add) else operator.sub
            dec = CTX.add if isinstance(op, ast.Add) else CTX.subtract
            scale = max(ls, rs)
        elif isinstance(op, ast.Mult):
            py, dec = operator.mul, CTX.multiply
            scale = ls + rs
        else:
            raise self.fail(f"unsupported operator {type(op).__name__}")
        if both_int:
            def int_op(row):
                a, b = lf(row), rf(row)
                if a is None or b is None:
                    return None
                return py(a, b)

            return int_op, ColumnType(Kind.INT64, nullable)
        if scale > MAX_SCALE:
            q = quantizer(MAX_SCALE)
            scale = MAX_SCALE

            def dec_op(row):
                a, b = lf(row), rf(row)
                if a is None or b is None:
                    return None
                return dec(a, b).quantize(q, context=CTX)
        else:
            def dec_op(row):
                a, b = lf(row), rf(row)
                if a is None or b is None:
                    return None
                return dec(a, b)

        return dec_op, ColumnType(Kind.DECIMAL64, nullable, scale)

    def _date_arith(self, lf, lt, rf, rt, op):
        if isinstance(rt, ColumnType) and rt.kind is Kind.INT64:
            sign = 1 if isinstance(op, ast.Add) else -1

            def shift(row):
                d, k = lf(row), rf(row)
                if d is None or k is None:
                    return None
                return d + _dt.timedelta(days=sign * k)

            return shift, ColumnType(Kind.DATE32, lt.nullable or rt.nullable)
        if isinstance(rt, ColumnType) and rt.kind is Kind.DATE32 and isinstance(op, ast.Sub):
            def diff(row):
                a, b = lf(row), rf(row)
                if a is None or b is None:
                    return None
                return (a - b).days

            return diff, ColumnType(Kind.INT64, lt.nullable or rt.nullable)
        raise self.fail("date arithmetic needs an integer day count or another date")

    # -- predicates -----------------------------------------------------------

    def _comparable(self, a: Any, b: Any) -> bool:
        if not isinstance(a, ColumnType) or not isinstance(b, ColumnType):
            return a is BOOL and b is BOOL
        if is_numeric(a) and is_numeric(b):
            return True
        return a.kind is b.kind

    def visit_Compare(self, node: ast.Compare):
        fns = []
        lf, lt = self.visit(node.left)
        for op, comp in zip(node.ops, node.comparators):
            if isinstance(op, (ast.In, ast.NotIn)):
                if not isinstance(comp, (ast.Tuple, ast.List, ast.Set)):
                    raise self.fail("'in' needs a literal list")
                values = []
                for elt in comp.elts:
                    vf, vt = self.visit(elt)
                    if not self._comparable(lt, vt):
                        raise self.fail(f"'in' list mixes {lt} and {vt}")
                    values.append(vf(()))
                members = frozenset(values)
                negate = isinstance(op, ast.NotIn)

                def member(row, lf=lf, members=members, negate=negate):
                    v = lf(row)
                    if v is None:
                        return None
                    return (v in members) != negate

                fns.append(member)
                continue
            rf, rt = self.visit(comp)
            if not self._comparable(lt, rt):
                raise self.fail(f"cannot compare {lt} with {rt}")
            cmp = _CMP.get(type(op))
            if cmp is None:
                raise self.fail(f"unsupported comparison {type(op).__name__}")

            def compare(row, lf=lf, rf=rf, cmp=cmp):
                a, b = lf(row), rf(row)
                if a is None or b is None:
                    return None
                return cmp(a, b)

            fns.append(compare)
            lf, lt = rf, rt
        if len(fns) == 1:
            return fns[0], BOOL
        return self._and(fns), BOOL

    @staticmethod
    def _and(fns):
        def conj(row):
            unknown = False
            for f in fns:
                v = f(row)
                if v is False:
                    return False
                if v is None:
                    unknown = True
            return None if unknown else True

        return conj

    @staticmethod
    def _or(fns):
        def disj(row):
            unknown = False
            for f in fns:
                v = f(row)
                if v is True:
                    return True
                if v is None:
                    unknown = True
            return None if unknown else False

        return disj

    def visit_BoolOp(self, node: ast.BoolOp):
        fns = []
        for v in node.values:
            f, t = self.visit(v)
            if t is not BOOL:
                raise self.fail("'and'/'or' need boolean operands")
            fns.append(f)
        return (self._and(fns) if isinstance(node.op, ast.And) else self._or(fns)), BOOL

    # -- functions ------------------------------------------------------------

    def visit_Call(self, node: ast.Call):
        if not isinstance(node.func, ast.Name) or node.keywords:
            raise self.fail("only plain function calls are supported")
        name = node.func.id
        if name == "date":
            if len(node.args) != 1 or not isinstance(node.args[0], ast.Constant) or not isinstance(node.args[0].value, str):
                raise self.fail("date() takes one 'YYYY-MM-DD' string literal")
            try:
                d = _dt.date.fromisoformat(node.args[0].value)
            except ValueError as exc:
                raise self.fail(str(exc)) from exc
            return (lambda row: d), ColumnType(Kind.DATE32)
        args = [self.visit(a) for a in node.args]
        if name in ("startswith", "endswith", "contains"):
            if len(args) != 2 or any(not isinstance(t, ColumnType) or t.kind is not Kind.VARCHAR for _, t in args):
                raise self.fail(f"{name}() takes two varchar arguments")
            (sf, _), (pf, _) = args
            method = {"startswith": str.startswith, "endswith": str.endswith, "contains": str.__contains__}[name]

            def text_test(row):
                s, p = sf(row), pf(row)
                if s is None or p is None:
                    return None
                return method(s, p)

            return text_test, BOOL
        if name == "year":
            if len(args) != 1 or args[0][1].kind is not Kind.DATE32:
                raise self.fail("year() takes one date argument")
            f = args[0][0]
            return (lambda row: None if (d := f(row)) is None else d.year), ColumnType(Kind.INT64, args[0][1].nullable)
        if name == "abs":
            if len(args) != 1 or not is_numeric(args[0][1]):
                raise self.fail("abs() takes one numeric argument")
            f, t = args[0]
            return (lambda row: None if (v := f(row)) is None else abs(v)), t
        raise self.fail(f"unknown function {name}()")
