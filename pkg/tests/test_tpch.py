from decimal import Decimal

import pytest
from hypothesis import given
from hypothesis import strategies as st

from hyshuffle.codec import Schema, TupleBatch, date32, decimal64, int64, varchar
from hyshuffle.engine import tpch
from hyshuffle.errors import SchemaError

from conftest import MICRO_SIZES


def test_generation_is_deterministic_and_consistent():
    a = tpch.generate(MICRO_SIZES, seed=3)
    b = tpch.generate(MICRO_SIZES, seed=3)
    assert {k: v.rows() for k, v in a.items()} == {k: v.rows() for k, v in b.items()}
    assert a["lineitem"].rows() != tpch.generate(MICRO_SIZES, seed=4)["lineitem"].rows()
    orders = {r[0] for r in a["orders"].rows()}
    li = a["lineitem"]
    assert {r[0] for r in li.rows()} <= orders
    parts = {r[0] for r in a["part"].rows()}
    assert {r[li.schema.index("l_partkey")] for r in li.rows()} <= parts
    for name, batch in a.items():
        assert batch.schema == tpch.SCHEMAS[name]
        batch.validate()


def test_scale_and_dbgen_helpers():
    s = tpch.TpchSizes.scale(0.01)
    assert (s.part, s.supplier, s.customer, s.orders) == (2000, 100, 1500, 15000)
    assert tpch.retail_price(1) == Decimal("901.00")
    assert [tpch.order_key(i) for i in range(10)] == [1, 2, 3, 4, 5, 6, 7, 8, 33, 34]


def test_tbl_round_trip(tmp_path):
    tables = tpch.generate(MICRO_SIZES, seed=1)
    paths = tpch.write_dataset(tmp_path, tables)
    assert {p.name for p in paths} == {f"{n}.tbl" for n in tables}
    first = (tmp_path / "orders.tbl").read_text().splitlines()[0]
    assert first.endswith("|") and first.count("|") == len(tpch.SCHEMAS["orders"])
    back = tpch.load_dataset(tmp_path)
    assert {k: v.rows() for k, v in back.items()} == {k: v.rows() for k, v in tables.items()}
    assert set(tpch.load_dataset(tmp_path, ["part"])) == {"part"}


S = Schema.of(("i", int64(nullable=True)), ("d", decimal64(2, nullable=True)),
              ("t", date32(nullable=True)), ("s", varchar(nullable=True)))
TEXT = st.text(st.characters(blacklist_characters="|\n\r", blacklist_categories=("Cs",)), max_size=8).filter(
    lambda s: s != tpch.NULL_TOKEN)


@given(st.lists(st.tuples(
    st.one_of(st.none(), st.integers(-2**63, 2**63 - 1)),
    st.one_of(st.none(), st.integers(-10**12, 10**12).map(lambda v: Decimal(v).scaleb(-2))),
    st.one_of(st.none(), st.dates()),
    st.one_of(st.none(), TEXT),
), max_size=20))
def test_tbl_values_round_trip(tmp_path_factory, rows):
    path = tmp_path_factory.mktemp("tbl") / "x.tbl"
    tpch.write_tbl(path, TupleBatch.from_rows(S, rows, validate=True))
    assert tpch.read_tbl(path, S).rows() == rows


def test_null_token_only_for_nullable_columns(tmp_path):
    s = Schema.of(("i", int64()),)
    (tmp_path / "x.tbl").write_text("\\N|\n")
    with pytest.raises(SchemaError):
        tpch.read_tbl(tmp_path / "x.tbl", s)


@pytest.mark.parametrize("line", ["1|2|\n", "abc|\n", "1\n"])
def test_malformed_lines(tmp_path, line):
    (tmp_path / "x.tbl").write_text(line)
    with pytest.raises(SchemaError):
        tpch.read_tbl(tmp_path / "x.tbl", Schema.of(("i", int64()),))
