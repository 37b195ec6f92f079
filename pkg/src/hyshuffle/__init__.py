"""Distributed query shuffling with decoupled exchange operators and a per-node multiplexer."""

from hyshuffle.codec import Column, ColumnType, Kind, Schema, TupleBatch, date32, decimal64, int64, varchar
from hyshuffle.errors import ShuffleError

__version__ = "0.1.0"

__all__ = [
    "Column",
    "ColumnType",
    "Kind",
    "Schema",
    "ShuffleError",
    "TupleBatch",
    "date32",
    "decimal64",
    "int64",
    "varchar",
]
