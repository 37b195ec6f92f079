"""Schema-driven tuple serialization in a densely packed binary row format.

A serialized tuple has three parts:

1. values of all NOT NULL fixed-size columns,
2. a null bitmap over the nullable fixed-size columns followed by the values
   of those that are not null,
3. varchar columns as ``u32 length`` + raw bytes (``0xFFFFFFFF`` marks null).

Inside parts 1 and 2 columns are ordered by descending byte width, ties broken
by schema position. Everything is little-endian and there is no padding.
"""

from __future__ import annotations

import datetime as _dt
import enum
import struct
from dataclasses import dataclass
from decimal import Decimal
from functools import lru_cache
from typing import Any, Iterable, Iterator, Sequence

from hyshuffle.errors import DecodeError, SchemaError, SerializationError

NULL_LENGTH = 0xFFFFFFFF
EPOCH = _dt.date(1970, 1, 1)
_EPOCH_ORDINAL = EPOCH.toordinal()

_I64_MIN, _I64_MAX = -(2**63), 2**63 - 1
_I32_MIN, _I32_MAX = -(2**31), 2**31 - 1

_U32 = struct.Struct("<I")


class Kind(str, enum.Enum):
    INT64 = "int64"
    DECIMAL64 = "decimal64"
    DATE32 = "date32"
    VARCHAR = "varchar"


_WIDTHS = {Kind.INT64: 8, Kind.DECIMAL64: 8, Kind.DATE32: 4}
_CODES = {8: "q", 4: "i"}


@dataclass(frozen=True)
class ColumnType:
    kind: Kind
    nullable: bool = False
    scale: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", Kind(self.kind))
        if self.kind is Kind.DECIMAL64:
            if not 0 <= self.scale <= 18:
                raise SchemaError(f"decimal scale {self.scale} outside [0, 18]")
        elif self.scale != 0:
            raise SchemaError(f"{self.kind.value} does not take a scale")

    @property
    def width(self) -> int | None:
        """Byte width of fixed-size kinds, ``None`` for varchar."""
        return _WIDTHS.get(self.kind)

    @property
    def fixed(self) -> bool:
        return self.kind is not Kind.VARCHAR

    def with_nullable(self, nullable: bool) -> ColumnType:
        return ColumnType(self.kind, nullable, self.scale)

    def __str__(self) -> str:
        base = self.kind.value
        if self.kind is Kind.DECIMAL64:
            base += f"({self.scale})"
        return base + ("" if self.nullable else " not null")


def int64(nullable: bool = False) -> ColumnType:
    return ColumnType(Kind.INT64, nullable)


def decimal64(scale: int, nullable: bool = False) -> ColumnType:
    return ColumnType(Kind.DECIMAL64, nullable, scale)


def date32(nullable: bool = False) -> ColumnType:
    return ColumnType(Kind.DATE32, nullable)


def varchar(nullable: bool = False) -> ColumnType:
    return ColumnType(Kind.VARCHAR, nullable)


@dataclass(frozen=True)
class Column:
    name: str
    type: ColumnType


@dataclass(frozen=True)
class Schema:
    columns: tuple[Column, ...] = ()

    def __post_init__(self) -> None:
        cols = tuple(
            c if isinstance(c, Column) else Column(c[0], c[1]) for c in self.columns
        )
        object.__setattr__(self, "columns", cols)
        seen: set[str] = set()
        for c in cols:
            if c.name in seen:
                raise SchemaError(f"duplicate column name {c.name!r}")
            seen.add(c.name)

    @classmethod
    def of(cls, *pairs: tuple[str, ColumnType]) -> Schema:
        return cls(tuple(Column(n, t) for n, t in pairs))

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.columns)

    @property
    def types(self) -> tuple[ColumnType, ...]:
        return tuple(c.type for c in self.columns)

    def index(self, name: str) -> int:
        for i, c in enumerate(self.columns):
            if c.name == name:
                return i
        raise SchemaError(f"unknown column {name!r}; have {list(self.names)}")

    def type_of(self, name: str) -> ColumnType:
        return self.columns[self.index(name)].type

    def __contains__(self, name: object) -> bool:
        return any(c.name == name for c in self.columns)

    def __len__(self) -> int:
        return len(self.columns)

    def __iter__(self) -> Iterator[Column]:
        return iter(self.columns)

    def project(self, indices: Sequence[int]) -> Schema:
        return Schema(tuple(self.columns[i] for i in indices))

    def concat(self, other: Schema) -> Schema:
        return Schema(self.columns + other.columns)


class TupleBatch:
    """Columnar container: one value list per column, ``None`` marks null."""

    __slots__ = ("schema", "columns")

    def __init__(self, schema: Schema, columns: Sequence[list] | None = None, *, validate: bool = True):
        self.schema = schema
        if columns is None:
            columns = [[] for _ in schema.columns]
        self.columns = [list(c) if not isinstance(c, list) else c for c in columns]
        if validate:
            self.validate()

    @classmethod
    def from_rows(cls, schema: Schema, rows: Iterable[Sequence[Any]], *, validate: bool = False) -> TupleBatch:
        rows = list(rows)
        if rows:
            cols = [list(c) for c in zip(*rows)]
            if len(cols) != len(schema):
                raise SchemaError(f"rows have {len(cols)} values, schema has {len(schema)} columns")
        else:
            cols = [[] for _ in schema.columns]
        return cls(schema, cols, validate=validate)

    @classmethod
    def concat(cls, schema: Schema, batches: Iterable[TupleBatch]) -> TupleBatch:
        cols: list[list] = [[] for _ in schema.columns]
        for b in batches:
            for dst, src in zip(cols, b.columns):
                dst.extend(src)
        return cls(schema, cols, validate=False)

    @property
    def row_count(self) -> int:
        return len(self.columns[0]) if self.columns else 0

    def __len__(self) -> int:
        return self.row_count

    def validate(self) -> None:
        if len(self.columns) != len(self.schema):
            raise SchemaError(
                f"batch has {len(self.columns)} column vectors for {len(self.schema)} columns"
            )
        n = self.row_count
        for col, vec in zip(self.schema.columns, self.columns):
            if len(vec) != n:
                raise SchemaError(f"column {col.name!r} has {len(vec)} values, expected {n}")
            if not col.type.nullable and any(v is None for v in vec):
                raise SchemaError(f"null in NOT NULL column {col.name!r}")

    def row(self, i: int) -> tuple:
        return tuple(c[i] for c in self.columns)

    def rows(self) -> list[tuple]:
        return list(zip(*self.columns))

    def slice(self, start: int, stop: int) -> TupleBatch:
        return TupleBatch(self.schema, [c[start:stop] for c in self.columns], validate=False)

    def project(self, indices: Sequence[int]) -> TupleBatch:
        return TupleBatch(self.schema.project(indices), [self.columns[i] for i in indices], validate=False)

    def __repr__(self) -> str:
        return f"TupleBatch({list(self.schema.names)}, rows={self.row_count})"


@dataclass(frozen=True)
class WireLayout:
    part1: tuple[int, ...]
    part2: tuple[int, ...]
    part3: tuple[int, ...]


@lru_cache(maxsize=256)
def layout_for(schema: Schema) -> WireLayout:
    def by_width(indices: list[int]) -> tuple[int, ...]:
        return tuple(sorted(indices, key=lambda i: (-schema.columns[i].type.width, i)))

    p1, p2, p3 = [], [], []
    for i, col in enumerate(schema.columns):
        if not col.type.fixed:
            p3.append(i)
        elif col.type.nullable:
            p2.append(i)
        else:
            p1.append(i)
    return WireLayout(by_width(p1), by_width(p2), tuple(p3))


# ---------------------------------------------------------------------------
# value <-> wire integer conversion
# ---------------------------------------------------------------------------


def _to_int64(v: Any, name: str) -> int:
    if isinstance(v, bool) or not isinstance(v, int):
        raise SerializationError(f"column {name!r}: expected int, got {type(v).__name__}")
    if not _I64_MIN <= v <= _I64_MAX:
        raise SerializationError(f"column {name!r}: {v} overflows int64")
    return v


def _decimal_encoder(scale: int, name: str):
    def enc(v: Any) -> int:
        if isinstance(v, int) and not isinstance(v, bool):
            raw = v * 10**scale
        elif isinstance(v, Decimal):
            scaled = v.scaleb(scale)
            raw = int(scaled)
            if scaled != raw:
                raise SerializationError(f"column {name!r}: {v} has more than {scale} fractional digits")
        else:
            raise SerializationError(f"column {name!r}: expected Decimal, got {type(v).__name__}")
        if not _I64_MIN <= raw <= _I64_MAX:
            raise SerializationError(f"column {name!r}: {v} overflows decimal64({scale})")
        return raw

    return enc


def _date_to_days(v: Any, name: str) -> int:
    if not isinstance(v, _dt.date):
        raise SerializationError(f"column {name!r}: expected date, got {type(v).__name__}")
    return v.toordinal() - _EPOCH_ORDINAL


def _days_to_date(d: int) -> _dt.date:
    try:
        return _dt.date.fromordinal(d + _EPOCH_ORDINAL)
    except (ValueError, OverflowError) as exc:
        raise DecodeError(f"date32 value {d} out of range") from exc


def encoder_for(ctype: ColumnType, name: str = "?"):
    """Return a callable turning an engine value into its wire integer/bytes."""
    if ctype.kind is Kind.INT64:
        return lambda v: _to_int64(v, name)
    if ctype.kind is Kind.DECIMAL64:
        return _decimal_encoder(ctype.scale, name)
    if ctype.kind is Kind.DATE32:
        return lambda v: _date_to_days(v, name)

    def enc_varchar(v: Any) -> bytes:
        if isinstance(v, str):
            return v.encode("utf-8")
        if isinstance(v, (bytes, bytearray, memoryview)):
            return bytes(v)
        raise SerializationError(f"column {name!r}: expected str, got {type(v).__name__}")

    return enc_varchar


def decoder_for(ctype: ColumnType):
    if ctype.kind is Kind.INT64:
        return None
    if ctype.kind is Kind.DECIMAL64:
        scale = ctype.scale
        return lambda raw: Decimal(raw).scaleb(-scale)
    if ctype.kind is Kind.DATE32:
        return _days_to_date

    def dec_varchar(raw: bytes) -> str:
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise DecodeError("varchar payload is not valid UTF-8") from exc

    return dec_varchar


class RowCodec:
    """Encoder/decoder specialised once for a schema.

    The fixed part is handled by one precompiled ``struct.Struct`` so the per
    row work does not interpret the schema again.
    """

    def __init__(self, schema: Schema):
        self.schema = schema
        self.layout = layout = layout_for(schema)
        cols = schema.columns
        self._p1 = layout.part1
        self._p1_struct = struct.Struct("<" + "".join(_CODES[cols[i].type.width] for i in layout.part1))
        self._p1_enc = [encoder_for(cols[i].type, cols[i].name) for i in layout.part1]
        self._p1_dec = [decoder_for(cols[i].type) for i in layout.part1]
        self._p2 = layout.part2
        self._p2_struct = [struct.Struct("<" + _CODES[cols[i].type.width]) for i in layout.part2]
        self._p2_enc = [encoder_for(cols[i].type, cols[i].name) for i in layout.part2]
        self._p2_dec = [decoder_for(cols[i].type) for i in layout.part2]
        self._bitmap_len = (len(layout.part2) + 7) // 8
        self._p3 = layout.part3
        self._p3_enc = [encoder_for(cols[i].type, cols[i].name) for i in layout.part3]
        self._p3_dec = [decoder_for(cols[i].type) for i in layout.part3]
        self._p3_nullable = [cols[i].type.nullable for i in layout.part3]
        self._names = schema.names
        self._ncols = len(cols)

    def encode(self, values: Sequence[Any]) -> bytes:
        parts: list[bytes] = []
        try:
            fixed = []
            for idx, enc in zip(self._p1, self._p1_enc):
                v = values[idx]
                if v is None:
                    raise SerializationError(f"null in NOT NULL column {self._names[idx]!r}")
                fixed.append(enc(v))
            parts.append(self._p1_struct.pack(*fixed))
        except struct.error as exc:
            raise SerializationError(str(exc)) from exc
        if self._p2:
            bitmap = bytearray(self._bitmap_len)
            tail = []
            for bit, (idx, enc, st) in enumerate(zip(self._p2, self._p2_enc, self._p2_struct)):
                v = values[idx]
                if v is None:
                    bitmap[bit >> 3] |= 1 << (bit & 7)
                else:
                    tail.append(st.pack(enc(v)))
            parts.append(bytes(bitmap))
            parts.extend(tail)
        for idx, enc, nullable in zip(self._p3, self._p3_enc, self._p3_nullable):
            v = values[idx]
            if v is None:
                if not nullable:
                    raise SerializationError(f"null in NOT NULL column {self._names[idx]!r}")
                parts.append(_U32.pack(NULL_LENGTH))
                continue
            raw = enc(v)
            if len(raw) >= NULL_LENGTH:
                raise SerializationError(f"varchar in {self._names[idx]!r} too long")
            parts.append(_U32.pack(len(raw)))
            parts.append(raw)
        return b"".join(parts)

    def decode(self, data: bytes | bytearray | memoryview, offset: int = 0) -> tuple[tuple, int]:
        out: list[Any] = [None] * self._ncols
        pos = offset
        try:
            fixed = self._p1_struct.unpack_from(data, pos)
            pos += self._p1_struct.size
            for idx, dec, raw in zip(self._p1, self._p1_dec, fixed):
                out[idx] = raw if dec is None else dec(raw)
            if self._p2:
                bitmap = data[pos : pos + self._bitmap_len]
                if len(bitmap) < self._bitmap_len:
                    raise DecodeError("truncated null bitmap")
                pos += self._bitmap_len
                for bit, (idx, dec, st) in enumerate(zip(self._p2, self._p2_dec, self._p2_struct)):
                    if bitmap[bit >> 3] & (1 << (bit & 7)):
                        continue
                    (raw,) = st.unpack_from(data, pos)
                    pos += st.size
                    out[idx] = raw if dec is None else dec(raw)
            end = len(data)
            for idx, dec, nullable in zip(self._p3, self._p3_dec, self._p3_nullable):
                (length,) = _U32.unpack_from(data, pos)
                pos += 4
                if length == NULL_LENGTH:
                    if not nullable:
                        raise DecodeError(f"null sentinel in NOT NULL column {self._names[idx]!r}")
                    continue
                if pos + length > end:
                    raise DecodeError(
                        f"varchar length {length} exceeds remaining {end - pos} bytes"
                    )
                out[idx] = dec(bytes(data[pos : pos + length]))
                pos += length
        except struct.error as exc:
            raise DecodeError(f"truncated tuple: {exc}") from exc
        return tuple(out), pos - offset

    def decode_all(self, data: bytes | bytearray | memoryview) -> TupleBatch:
        rows = []
        pos, end = 0, len(data)
        while pos < end:
            row, used = self.decode(data, pos)
            rows.append(row)
            pos += used
        return TupleBatch.from_rows(self.schema, rows)


@lru_cache(maxsize=256)
def codec_for(schema: Schema) -> RowCodec:
    return RowCodec(schema)


def _check_layout(layout: WireLayout, schema: Schema) -> RowCodec:
    codec = codec_for(schema)
    if layout != codec.layout:
        raise SchemaError("wire layout does not belong to this schema")
    return codec


def serialize_tuple(batch: TupleBatch, row: int, layout: WireLayout, out: bytearray) -> int:
    """Append row ``row`` of ``batch`` to ``out``; return the number of bytes written."""
    if not 0 <= row < batch.row_count:
        raise IndexError(f"row {row} out of range for {batch.row_count} rows")
    data = _check_layout(layout, batch.schema).encode(batch.row(row))
    out += data
    return len(data)


def deserialize_tuple(
    data: bytes | bytearray | memoryview, layout: WireLayout, schema: Schema, offset: int = 0
) -> tuple[tuple, int]:
    return _check_layout(layout, schema).decode(data, offset)


def serialize_batch(batch: TupleBatch) -> bytes:
    codec = codec_for(batch.schema)
    return b"".join(codec.encode(r) for r in batch.rows())


def deserialize_batch(data: bytes | bytearray | memoryview, schema: Schema) -> TupleBatch:
    return codec_for(schema).decode_all(data)


def encoded_size(schema: Schema, values: Sequence[Any]) -> int:
    return len(codec_for(schema).encode(values))


def prune_columns(schema: Schema, required: Iterable[str]) -> tuple[Schema, tuple[int, ...]]:
    """Keep only ``required`` columns, in schema order.

    Returns the pruned schema and the projection map ``new index -> old index``.
    """
    required = set(required)
    unknown = required - set(schema.names)
    if unknown:
        raise SchemaError(f"cannot prune to unknown columns {sorted(unknown)}")
    mapping = tuple(i for i, c in enumerate(schema.columns) if c.name in required)
    return schema.project(mapping), mapping
