"""TPC-H schemas, a small deterministic data generator, and ``.tbl`` I/O.

The generator follows the shape of dbgen's value domains (brands, containers,
date windows, price formula, 1-7 lines per order) at arbitrary small sizes.
It is not a byte-exact dbgen replacement. Files use dbgen's layout: ``|``
separated fields with a trailing ``|`` on every line. A nullable field
holding ``\\N`` reads back as null.
"""

from __future__ import annotations

import datetime as _dt
import random
from dataclasses import dataclass
from decimal import Decimal
from pathlib import Path
from typing import Any, Iterable, Mapping

from hyshuffle.codec import ColumnType, Kind, Schema, TupleBatch, date32, decimal64, int64, varchar
from hyshuffle.errors import SchemaError

NULL_TOKEN = "\\N"

SCHEMAS: dict[str, Schema] = {
    "part": Schema.of(
        ("p_partkey", int64()), ("p_name", varchar()), ("p_mfgr", varchar()), ("p_brand", varchar()),
        ("p_type", varchar()), ("p_size", int64()), ("p_container", varchar()),
        ("p_retailprice", decimal64(2)), ("p_comment", varchar()),
    ),
    "supplier": Schema.of(
        ("s_suppkey", int64()), ("s_name", varchar()), ("s_address", varchar()), ("s_nationkey", int64()),
        ("s_phone", varchar()), ("s_acctbal", decimal64(2)), ("s_comment", varchar()),
    ),
    "partsupp": Schema.of(
        ("ps_partkey", int64()), ("ps_suppkey", int64()), ("ps_availqty", int64()),
        ("ps_supplycost", decimal64(2)), ("ps_comment", varchar()),
    ),
    "customer": Schema.of(
        ("c_custkey", int64()), ("c_name", varchar()), ("c_address", varchar()), ("c_nationkey", int64()),
        ("c_phone", varchar()), ("c_acctbal", decimal64(2)), ("c_mktsegment", varchar()), ("c_comment", varchar()),
    ),
    "orders": Schema.of(
        ("o_orderkey", int64()), ("o_custkey", int64()), ("o_orderstatus", varchar()),
        ("o_totalprice", decimal64(2)), ("o_orderdate", date32()), ("o_orderpriority", varchar()),
        ("o_clerk", varchar()), ("o_shippriority", int64()), ("o_comment", varchar()),
    ),
    "lineitem": Schema.of(
        ("l_orderkey", int64()), ("l_partkey", int64()), ("l_suppkey", int64()), ("l_linenumber", int64()),
        ("l_quantity", decimal64(2)), ("l_extendedprice", decimal64(2)), ("l_discount", decimal64(2)),
        ("l_tax", decimal64(2)), ("l_returnflag", varchar()), ("l_linestatus", varchar()),
        ("l_shipdate", date32()), ("l_commitdate", date32()), ("l_receiptdate", date32()),
        ("l_shipinstruct", varchar()), ("l_shipmode", varchar()), ("l_comment", varchar()),
    ),
}

CONTAINER_SIZES = ("SM", "MED", "LG", "JUMBO", "WRAP")
CONTAINER_KINDS = ("CASE", "BOX", "BAG", "JAR", "PKG", "PACK", "CAN", "DRUM")
TYPE_WORDS = (
    ("STANDARD", "SMALL", "MEDIUM", "LARGE", "ECONOMY", "PROMO"),
    ("ANODIZED", "BURNISHED", "PLATED", "POLISHED", "BRUSHED"),
    ("TIN", "NICKEL", "BRASS", "STEEL", "COPPER"),
)
COLORS = (
    "almond", "antique", "aquamarine", "azure", "beige", "bisque", "black", "blanched", "blue", "blush",
    "brown", "burlywood", "burnished", "chartreuse", "chiffon", "chocolate", "coral", "cornflower",
    "cornsilk", "cream", "cyan", "dark", "deep", "dim", "dodger", "drab", "firebrick", "floral", "forest",
    "frosted", "gainsboro", "ghost", "goldenrod", "green", "grey", "honeydew", "hot", "indian", "ivory",
)
PRIORITIES = ("1-URGENT", "2-HIGH", "3-MEDIUM", "4-NOT SPECIFIED", "5-LOW")
SEGMENTS = ("AUTOMOBILE", "BUILDING", "FURNITURE", "HOUSEHOLD", "MACHINERY")
INSTRUCTIONS = ("DELIVER IN PERSON", "COLLECT COD", "NONE", "TAKE BACK RETURN")
MODES = ("REG AIR", "AIR", "RAIL", "SHIP", "TRUCK", "MAIL", "FOB")
WORDS = (
    "furiously", "carefully", "quickly", "slyly", "blithely", "deposits", "requests", "packages",
    "accounts", "ideas", "pinto", "beans", "foxes", "theodolites", "final", "regular", "express",
    "special", "pending", "ironic", "bold", "even", "unusual", "silent",
)

START_DATE = _dt.date(1992, 1, 1)
LAST_ORDER_DATE = _dt.date(1998, 8, 2)
CURRENT_DATE = _dt.date(1995, 6, 17)
CENT = Decimal("0.01")


@dataclass(frozen=True)
class TpchSizes:
    part: int
    supplier: int
    customer: int
    orders: int

    @classmethod
    def scale(cls, sf: float) -> TpchSizes:
        return cls(
            part=max(1, round(200_000 * sf)),
            supplier=max(1, round(10_000 * sf)),
            customer=max(1, round(150_000 * sf)),
            orders=max(1, round(1_500_000 * sf)),
        )


def retail_price(partkey: int) -> Decimal:
    cents = 90_000 + (partkey // 10) % 20_001 + 100 * (partkey % 1_000)
    return Decimal(cents).scaleb(-2)


def _text(rng: random.Random, lo: int, hi: int) -> str:
    return " ".join(rng.choice(WORDS) for _ in range(rng.randint(lo, hi)))


def _phone(rng: random.Random, nation: int) -> str:
    return f"{10 + nation}-{rng.randint(100, 999)}-{rng.randint(100, 999)}-{rng.randint(1000, 9999)}"


def _money(rng: random.Random, lo: int, hi: int) -> Decimal:
    return Decimal(rng.randint(lo, hi)).scaleb(-2)


def order_key(i: int) -> int:
    """Sparse order keys: 8 used out of every 32, as dbgen does."""
    return (i // 8) * 32 + i % 8 + 1


def generate(sizes: TpchSizes | float = 0.001, seed: int = 0, tables: Iterable[str] | None = None) -> dict[str, TupleBatch]:
    """Generate the TPC-H tables deterministically from ``seed``."""
    if not isinstance(sizes, TpchSizes):
        sizes = TpchSizes.scale(sizes)
    wanted = set(tables) if tables is not None else set(SCHEMAS)
    rng = random.Random(seed)
    out: dict[str, list[tuple]] = {}

    part = []
    for k in range(1, sizes.part + 1):
        part.append((
            k,
            " ".join(rng.sample(COLORS, 5)),
            f"Manufacturer#{(m := rng.randint(1, 5))}",
            f"Brand#{m}{rng.randint(1, 5)}",
            " ".join(rng.choice(w) for w in TYPE_WORDS),
            rng.randint(1, 50),
            f"{rng.choice(CONTAINER_SIZES)} {rng.choice(CONTAINER_KINDS)}",
            retail_price(k),
            _text(rng, 1, 4),
        ))
    out["part"] = part

    supplier = []
    for k in range(1, sizes.supplier + 1):
        nation = rng.randint(0, 24)
        supplier.append((
            k, f"Supplier#{k:09d}", _text(rng, 2, 4), nation, _phone(rng, nation),
            _money(rng, -99_999, 999_999), _text(rng, 3, 8),
        ))
    out["supplier"] = supplier

    s = sizes.supplier
    partsupp = []
    for k in range(1, sizes.part + 1):
        for j in range(4):
            supp = (k + j * (s // 4 + (k - 1) // s)) % s + 1
            partsupp.append((k, supp, rng.randint(1, 9_999), _money(rng, 100, 100_000), _text(rng, 3, 10)))
    out["partsupp"] = partsupp

    customer = []
    for k in range(1, sizes.customer + 1):
        nation = rng.randint(0, 24)
        customer.append((
            k, f"Customer#{k:09d}", _text(rng, 2, 4), nation, _phone(rng, nation),
            _money(rng, -99_999, 999_999), rng.choice(SEGMENTS), _text(rng, 3, 8),
        ))
    out["customer"] = customer

    orders, lineitem = [], []
    span = (LAST_ORDER_DATE - START_DATE).days
    for i in range(sizes.orders):
        okey = order_key(i)
        odate = START_DATE + _dt.timedelta(days=rng.randint(0, span))
        total = Decimal(0)
        statuses = set()
        for line in range(1, rng.randint(1, 7) + 1):
            pkey = rng.randint(1, sizes.part)
            supp = (pkey + rng.randint(0, 3) * (s // 4 + (pkey - 1) // s)) % s + 1
            qty = Decimal(rng.randint(1, 50))
            price = (qty * retail_price(pkey)).quantize(CENT)
            disc = Decimal(rng.randint(0, 10)).scaleb(-2)
            tax = Decimal(rng.randint(0, 8)).scaleb(-2)
            ship = odate + _dt.timedelta(days=rng.randint(1, 121))
            commit = odate + _dt.timedelta(days=rng.randint(30, 90))
            receipt = ship + _dt.timedelta(days=rng.randint(1, 30))
            flag = rng.choice("RA") if receipt <= CURRENT_DATE else "N"
            status = "O" if ship > CURRENT_DATE else "F"
            statuses.add(status)
            total += price * (1 + tax) * (1 - disc)
            lineitem.append((
                okey, pkey, supp, line, qty.quantize(CENT), price, disc, tax, flag, status,
                ship, commit, receipt, rng.choice(INSTRUCTIONS), rng.choice(MODES), _text(rng, 1, 5),
            ))
        ostatus = "F" if statuses == {"F"} else "O" if statuses == {"O"} else "P"
        orders.append((
            okey, rng.randint(1, sizes.customer), ostatus, total.quantize(CENT), odate,
            rng.choice(PRIORITIES), f"Clerk#{rng.randint(1, max(1, sizes.orders // 1000)):09d}", 0,
            _text(rng, 2, 8),
        ))
    out["orders"] = orders
    out["lineitem"] = lineitem
    return {name: TupleBatch.from_rows(SCHEMAS[name], rows) for name, rows in out.items() if name in wanted}


# ---------------------------------------------------------------------------
# .tbl files
# ---------------------------------------------------------------------------


def format_value(v: Any, t: ColumnType) -> str:
    if v is None:
        if not t.nullable:
            raise SchemaError("null in NOT NULL column")
        return NULL_TOKEN
    if t.kind is Kind.DECIMAL64:
        return str(Decimal(v).quantize(Decimal(1).scaleb(-t.scale)))
    if t.kind is Kind.DATE32:
        return v.isoformat()
    return str(v)


def parse_value(text: str, t: ColumnType) -> Any:
    if t.nullable and text == NULL_TOKEN:
        return None
    if t.kind is Kind.INT64:
        return int(text)
    if t.kind is Kind.DECIMAL64:
        return Decimal(text)
    if t.kind is Kind.DATE32:
        return _dt.date.fromisoformat(text)
    return text


def write_tbl(path: str | Path, batch: TupleBatch) -> None:
    types = batch.schema.types
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for row in batch.rows():
            fh.write("|".join(format_value(v, t) for v, t in zip(row, types)) + "|\n")


def read_tbl(path: str | Path, schema: Schema) -> TupleBatch:
    types = schema.types
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            if not line.endswith("|"):
                raise SchemaError(f"{path}:{lineno}: line does not end with '|'")
            fields = line[:-1].split("|")
            if len(fields) != len(types):
                raise SchemaError(f"{path}:{lineno}: {len(fields)} fields, expected {len(types)}")
            try:
                rows.append(tuple(parse_value(f, t) for f, t in zip(fields, types)))
            except ValueError as exc:
                raise SchemaError(f"{path}:{lineno}: {exc}") from exc
    return TupleBatch.from_rows(schema, rows, validate=True)


def write_dataset(directory: str | Path, tables: Mapping[str, TupleBatch]) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, batch in tables.items():
        p = directory / f"{name}.tbl"
        write_tbl(p, batch)
        paths.append(p)
    return paths


def load_dataset(directory: str | Path, names: Iterable[str] | None = None) -> dict[str, TupleBatch]:
    """Load every ``<table>.tbl`` in ``directory`` whose name is a known TPC-H table."""
    directory = Path(directory)
    names = list(names) if names is not None else [n for n in SCHEMAS if (directory / f"{n}.tbl").exists()]
    out = {}
    for name in names:
        if name not in SCHEMAS:
            raise SchemaError(f"unknown TPC-H table {name!r}")
        out[name] = read_tbl(directory / f"{name}.tbl", SCHEMAS[name])
    return out
