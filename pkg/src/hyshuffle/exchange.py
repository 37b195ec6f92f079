"""Decoupled exchange operators and the pooled message lifecycle.

An exchange operator never talks to peer operators. Each worker serializes
its tuples into private per-target messages; full messages are handed to the
node's multiplexer (``ShuffleHost.enqueue``) and replaced by a fresh message
from the pool of the worker's NUMA region.
"""

from __future__ import annotations

import struct
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Protocol, Sequence

from hyshuffle.codec import ColumnType, Kind, Schema, TupleBatch, codec_for, encoder_for
from hyshuffle.errors import (
    ContractViolation,
    OversizeTupleError,
    SchemaError,
    ShuffleStallError,
)

DEFAULT_MESSAGE_CAPACITY = 512 * 1024

SYNC_OPERATOR_ID = 0xFFFFFFFF
GATHER_OPERATOR_ID = 0xFFFFFFFE

FLAG_LAST = 0x01
FLAG_SYNC = 0x02
FLAG_DONE = 0x04  # only meaningful on sync frames: sender has nothing left to do

WIRE_HEADER = struct.Struct("<IBI")
WIRE_HEADER_SIZE = WIRE_HEADER.size


# ---------------------------------------------------------------------------
# CRC32-C
# ---------------------------------------------------------------------------

_CRC32C_POLY_REFLECTED = 0x82F63B78  # bit-reversed 0x1EDC6F41


def _make_table() -> tuple[int, ...]:
    table = []
    for i in range(256):
        c = i
        for _ in range(8):
            c = (c >> 1) ^ _CRC32C_POLY_REFLECTED if c & 1 else c >> 1
        table.append(c)
    return tuple(table)


CRC32C_TABLE = _make_table()


def crc32_hash(data: bytes | bytearray | memoryview, crc: int = 0) -> int:
    """CRC32-C (Castagnoli) of ``data``; pass a previous result as ``crc`` to continue."""
    t = CRC32C_TABLE
    c = crc ^ 0xFFFFFFFF
    for b in data:
        c = t[(c ^ b) & 0xFF] ^ (c >> 8)
    return c ^ 0xFFFFFFFF


def partition_for(hash_value: int, n: int) -> int:
    if n < 1:
        raise ValueError("node count must be at least 1")
    return hash_value % n


def key_encoder(types: Sequence[ColumnType]):
    """Build ``values -> canonical key bytes`` for the given key column types.

    Fixed-size values are little-endian at their wire width, varchar is raw
    UTF-8. A null key contributes no bytes.
    """
    parts = []
    for t in types:
        enc = encoder_for(t)
        if t.kind is Kind.VARCHAR:
            parts.append(enc)
        else:
            st = struct.Struct("<q" if t.width == 8 else "<i")
            parts.append(lambda v, enc=enc, st=st: st.pack(enc(v)))

    def encode(values: Sequence[Any]) -> bytes:
        return b"".join(p(v) for p, v in zip(parts, values) if v is not None)

    return encode


# ---------------------------------------------------------------------------
# Messages and pools
# ---------------------------------------------------------------------------


def encode_frame_header(operator_id: int, flags: int, bytes_used: int) -> bytes:
    return WIRE_HEADER.pack(operator_id, flags, bytes_used)


def decode_frame(frame: bytes | bytearray | memoryview) -> tuple[int, int, memoryview]:
    """Split a wire frame into ``(operator_id, flags, payload)``."""
    view = memoryview(frame)
    if len(view) < WIRE_HEADER_SIZE:
        raise ValueError(f"frame of {len(view)} bytes is shorter than the wire header")
    op, flags, used = WIRE_HEADER.unpack_from(view)
    payload = view[WIRE_HEADER_SIZE:]
    if len(payload) != used:
        raise ValueError(f"frame declares {used} payload bytes, carries {len(payload)}")
    return op, flags, payload


class Message:
    """Fixed-capacity buffer with a local header and a wire header.

    The local header (``pool_region``, ``retain_count``, ``capacity``) stays on
    the node; only ``operator_id``, the last flag, ``bytes_used`` and the used
    payload prefix are transmitted.
    """

    __slots__ = (
        "buffer", "capacity", "pool_region", "retain_count", "operator_id", "last",
        "bytes_used", "generation", "in_flight", "pool", "source", "seq", "_lock",
    )

    def __init__(self, capacity: int, pool_region: int = 0, pool: MessagePool | None = None):
        self.buffer = bytearray(capacity)
        self.capacity = capacity
        self.pool_region = pool_region
        self.pool = pool
        self.retain_count = 0
        self.operator_id = 0
        self.last = False
        self.bytes_used = 0
        self.generation = 0
        self.in_flight = False
        self.source = -1
        self.seq = -1
        self._lock = threading.Lock()

    def _check_mutable(self) -> None:
        if self.in_flight:
            raise ContractViolation("message mutated while queued for sending")

    def reset(self, operator_id: int = 0) -> None:
        self._check_mutable()
        self.operator_id = operator_id
        self.last = False
        self.bytes_used = 0
        self.retain_count = 0
        self.source = -1
        self.seq = -1
        self.generation += 1

    def free_space(self) -> int:
        return self.capacity - self.bytes_used

    def append(self, data: bytes) -> bool:
        """Copy ``data`` behind the used prefix; ``False`` if it does not fit."""
        self._check_mutable()
        end = self.bytes_used + len(data)
        if end > self.capacity:
            return False
        self.buffer[self.bytes_used : end] = data
        self.bytes_used = end
        self.generation += 1
        return True

    def load(self, operator_id: int, last: bool, payload: bytes | memoryview) -> None:
        """Fill a receive-side message from a wire payload."""
        self.reset(operator_id)
        if len(payload) > self.capacity:
            raise OversizeTupleError(f"payload of {len(payload)} bytes exceeds capacity {self.capacity}")
        self.buffer[: len(payload)] = payload
        self.bytes_used = len(payload)
        self.last = last

    @property
    def payload(self) -> memoryview:
        return memoryview(self.buffer)[: self.bytes_used]

    @property
    def flags(self) -> int:
        return FLAG_LAST if self.last else 0

    def wire_header(self) -> bytes:
        return encode_frame_header(self.operator_id, self.flags, self.bytes_used)

    def to_wire(self) -> bytes:
        return self.wire_header() + bytes(self.payload)

    @property
    def wire_size(self) -> int:
        return WIRE_HEADER_SIZE + self.bytes_used

    def retain(self, count: int) -> None:
        with self._lock:
            self.retain_count += count
            self.in_flight = self.retain_count > 0

    def release_ref(self) -> bool:
        """Drop one reference; returns ``True`` when the last one is gone."""
        with self._lock:
            if self.retain_count <= 0:
                raise ContractViolation("retain count dropped below zero")
            self.retain_count -= 1
            if self.retain_count == 0:
                self.in_flight = False
                return True
            return False

    def __repr__(self) -> str:
        return (
            f"Message(op={self.operator_id:#x}, used={self.bytes_used}/{self.capacity}, "
            f"last={self.last}, region={self.pool_region}, retain={self.retain_count})"
        )


class MessagePool:
    """Free list of messages local to one NUMA region.

    ``max_messages`` bounds how many messages may ever be allocated;
    ``acquire`` then waits up to ``timeout`` seconds for a release before
    raising :class:`ShuffleStallError`.
    """

    def __init__(
        self,
        region: int,
        message_capacity: int = DEFAULT_MESSAGE_CAPACITY,
        max_messages: int | None = None,
        timeout: float = 10.0,
    ):
        self.region = region
        self.message_capacity = message_capacity
        self.max_messages = max_messages
        self.timeout = timeout
        self._free: deque[Message] = deque()
        self._cond = threading.Condition()
        self.allocated = 0
        self.acquired = 0
        self.released = 0
        self._out: set[int] = set()

    def acquire(self, operator_id: int = 0) -> Message:
        deadline = None
        with self._cond:
            while True:
                if self._free:
                    msg = self._free.pop()
                    break
                if self.max_messages is None or self.allocated < self.max_messages:
                    msg = Message(self.message_capacity, self.region, self)
                    self.allocated += 1
                    break
                if deadline is None:
                    deadline = time.monotonic() + self.timeout
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    raise ShuffleStallError(
                        f"message pool of region {self.region} exhausted "
                        f"({self.allocated} messages) for {self.timeout}s"
                    )
                self._cond.wait(remaining)
            self.acquired += 1
            self._out.add(id(msg))
        msg.reset(operator_id)
        return msg

    def release(self, msg: Message) -> None:
        if msg.pool is not self:
            raise ContractViolation("message released into a foreign pool")
        if msg.retain_count != 0:
            raise ContractViolation(f"released message still retained ({msg.retain_count})")
        with self._cond:
            if id(msg) not in self._out:
                raise ContractViolation("message released twice")
            self._out.discard(id(msg))
            msg.in_flight = False
            self._free.append(msg)
            self.released += 1
            self._cond.notify()

    @property
    def free_count(self) -> int:
        with self._cond:
            return len(self._free)

    @property
    def outstanding(self) -> int:
        with self._cond:
            return len(self._out)

    def balanced(self) -> bool:
        """allocated == free, i.e. nothing is in flight or leaked."""
        with self._cond:
            return self.allocated == len(self._free) and not self._out

    def stats(self) -> dict[str, int]:
        with self._cond:
            return {
                "region": self.region,
                "allocated": self.allocated,
                "free": len(self._free),
                "acquired": self.acquired,
                "released": self.released,
            }


# ---------------------------------------------------------------------------
# Exchange operators
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExchangeKind:
    """``hash`` (on key columns), ``broadcast``, or ``gather`` (all rows to node 0)."""

    mode: str
    keys: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.mode not in ("hash", "broadcast", "gather"):
            raise ValueError(f"unknown exchange mode {self.mode!r}")
        object.__setattr__(self, "keys", tuple(self.keys))

    @classmethod
    def hash_partition(cls, *keys: str) -> ExchangeKind:
        return cls("hash", keys)

    @classmethod
    def broadcast(cls) -> ExchangeKind:
        return cls("broadcast")

    @classmethod
    def gather(cls) -> ExchangeKind:
        return cls("gather")


@dataclass
class LocalBatch:
    """Un-serialized rows handed to the local receive side of a broadcast."""

    batch: TupleBatch
    seq: int = -1
    source: int = -1


class ShuffleHost(Protocol):
    """What an exchange operator needs from its node."""

    node: int
    n: int

    def pool(self, region: int) -> MessagePool: ...

    def enqueue(self, target: int, msg: Message) -> None: ...

    def deliver_local(self, operator_id: int, region: int, item: Message | LocalBatch) -> None: ...

    def local_done(self, operator_id: int) -> None: ...


@dataclass
class ExchangeStats:
    rows_in: int = 0
    rows_serialized: int = 0
    serialization_passes: int = 0
    bytes_serialized: int = 0
    messages_enqueued: int = 0
    queue_entries: int = 0
    local_messages: int = 0
    last_messages: int = 0
    max_open_messages: int = 0
    per_target_bytes: dict[int, int] = field(default_factory=dict)


class WorkerExchangeState:
    """Per-worker open messages: at most one per target node."""

    __slots__ = ("region", "open", "local_rows")

    def __init__(self, region: int):
        self.region = region
        self.open: dict[int, Message] = {}
        self.local_rows: list[tuple] = []


class ExchangeOperator:
    """One node's instance of a logical exchange operator.

    ``schema`` is the full input schema of the consumed batches; tuples are
    serialized with ``out_schema`` (the pruned schema) and hashed on ``kind.keys``.
    """

    def __init__(
        self,
        operator_id: int,
        kind: ExchangeKind,
        schema: Schema,
        host: ShuffleHost,
        out_columns: Sequence[str] | None = None,
    ):
        self.operator_id = operator_id
        self.kind = kind
        self.schema = schema
        self.host = host
        self.node = host.node
        self.n = host.n
        if out_columns is None:
            out_columns = schema.names
        self.projection = tuple(schema.index(c) for c in out_columns)
        self.out_schema = schema.project(self.projection)
        self._codec = codec_for(self.out_schema)
        if kind.mode == "hash":
            try:
                self._key_idx = tuple(schema.index(k) for k in kind.keys)
            except SchemaError as exc:
                raise SchemaError(f"exchange {operator_id}: hash key missing: {exc}") from exc
            self._key_bytes = key_encoder([schema.columns[i].type for i in self._key_idx])
        self.stats = ExchangeStats()
        self._states: list[WorkerExchangeState] = []
        self._lock = threading.Lock()
        self._finished = False

    # -- worker side --------------------------------------------------------

    def open_worker(self, region: int) -> WorkerExchangeState:
        if self._finished:
            raise ContractViolation(f"exchange {self.operator_id} already finished")
        st = WorkerExchangeState(region)
        with self._lock:
            self._states.append(st)
        return st

    def target_of(self, row: Sequence[Any]) -> int:
        mode = self.kind.mode
        if mode == "gather":
            return 0
        key = self._key_bytes([row[i] for i in self._key_idx])
        return partition_for(crc32_hash(key), self.n)

    def consume(self, state: WorkerExchangeState, batch: TupleBatch) -> None:
        if batch.schema != self.schema:
            raise SchemaError(f"exchange {self.operator_id}: batch schema does not match operator input")
        self.consume_rows(state, batch.rows())

    def consume_rows(self, state: WorkerExchangeState, rows: list[tuple]) -> None:
        """Like :meth:`consume` for rows already laid out in the input schema."""
        if not rows:
            return
        proj = self.projection
        identity = proj == tuple(range(len(self.schema)))
        encode = self._codec.encode
        stats = self.stats
        if self.kind.mode == "broadcast":
            self._consume_broadcast(state, rows, identity)
            return
        nbytes = 0
        for row in rows:
            target = self.target_of(row)
            out_row = row if identity else tuple(row[i] for i in proj)
            data = encode(out_row)
            nbytes += len(data)
            msg = state.open.get(target)
            if msg is None:
                msg = self._fresh(state, target)
            if not msg.append(data):
                self._check_fits(data)
                self._emit(state, target, msg)
                msg = self._fresh(state, target)
                msg.append(data)
        with self._lock:
            stats.rows_in += len(rows)
            stats.rows_serialized += len(rows)
            stats.serialization_passes += 1
            stats.bytes_serialized += nbytes

    def _consume_broadcast(self, state: WorkerExchangeState, rows: list[tuple], identity: bool) -> None:
        proj = self.projection
        encode = self._codec.encode
        nbytes = 0
        for row in rows:
            out_row = row if identity else tuple(row[i] for i in proj)
            data = encode(out_row)
            nbytes += len(data)
            msg = state.open.get(-1)
            if msg is None:
                msg = self._fresh(state, -1)
            if not msg.append(data):
                self._check_fits(data)
                self._emit_broadcast(state, msg, last=False)
                msg = self._fresh(state, -1)
                msg.append(data)
            state.local_rows.append(out_row)
        with self._lock:
            self.stats.rows_in += len(rows)
            self.stats.rows_serialized += len(rows)
            self.stats.serialization_passes += 1
            self.stats.bytes_serialized += nbytes

    def _check_fits(self, data: bytes) -> None:
        if len(data) > self.host.pool(0).message_capacity:
            raise OversizeTupleError(
                f"exchange {self.operator_id}: tuple of {len(data)} bytes exceeds message capacity"
            )

    def _fresh(self, state: WorkerExchangeState, target: int) -> Message:
        msg = self.host.pool(state.region).acquire(self.operator_id)
        state.open[target] = msg
        if len(state.open) > self.stats.max_open_messages:
            with self._lock:
                self.stats.max_open_messages = max(self.stats.max_open_messages, len(state.open))
        if len(state.open) > max(self.n, 1):
            raise ContractViolation(
                f"exchange {self.operator_id}: worker holds {len(state.open)} open messages (> n={self.n})"
            )
        return msg

    def _emit(self, state: WorkerExchangeState, target: int, msg: Message, last: bool = False) -> None:
        """Pass a full (or final) message on: network for remote targets, receive queue for local."""
        state.open.pop(target, None)
        msg.last = last
        with self._lock:
            self.stats.per_target_bytes[target] = self.stats.per_target_bytes.get(target, 0) + msg.bytes_used
        if target == self.node:
            with self._lock:
                self.stats.local_messages += 1
            self.host.deliver_local(self.operator_id, state.region, msg)
            return
        msg.retain(1)
        with self._lock:
            self.stats.messages_enqueued += 1
            self.stats.queue_entries += 1
            if last:
                self.stats.last_messages += 1
        self.host.enqueue(target, msg)

    def _emit_broadcast(self, state: WorkerExchangeState, msg: Message, last: bool) -> None:
        state.open.pop(-1, None)
        msg.last = last
        remotes = [j for j in range(self.n) if j != self.node]
        if state.local_rows:
            local = TupleBatch.from_rows(self.out_schema, state.local_rows)
            state.local_rows = []
            self.host.deliver_local(self.operator_id, state.region, LocalBatch(local))
        if not remotes:
            msg.pool.release(msg)
            return
        msg.retain(len(remotes))
        with self._lock:
            self.stats.messages_enqueued += 1
            self.stats.queue_entries += len(remotes)
            if last:
                self.stats.last_messages += len(remotes)
        for j in remotes:
            self.host.enqueue(j, msg)

    # -- end of input -------------------------------------------------------

    def finish(self) -> None:
        """Flush partial messages and send one last-flag message per remote target.

        Must run once, after every local worker finished consuming.
        """
        with self._lock:
            if self._finished:
                raise ContractViolation(f"exchange {self.operator_id} finished twice")
            self._finished = True
        states = self._states
        if self.kind.mode == "broadcast":
            self._finish_broadcast(states)
        else:
            targets = [0] if self.kind.mode == "gather" else range(self.n)
            for target in targets:
                nonempty = []
                for st in states:
                    msg = st.open.get(target)
                    if msg is None:
                        continue
                    if msg.bytes_used:
                        nonempty.append((st, msg))
                    else:
                        st.open.pop(target)
                        msg.pool.release(msg)
                if target == self.node:
                    for st, msg in nonempty:
                        self._emit(st, target, msg)
                    continue
                if not nonempty:
                    st = WorkerExchangeState(0)
                    nonempty.append((st, self._fresh(st, target)))
                for i, (st, msg) in enumerate(nonempty):
                    self._emit(st, target, msg, last=i == len(nonempty) - 1)
        self.host.local_done(self.operator_id)

    def _finish_broadcast(self, states: list[WorkerExchangeState]) -> None:
        with_data = []
        for st in states:
            msg = st.open.get(-1)
            if msg is None:
                continue
            if msg.bytes_used:
                with_data.append((st, msg))
            else:
                st.open.pop(-1)
                msg.pool.release(msg)
        for i, (st, msg) in enumerate(with_data):
            self._emit_broadcast(st, msg, last=i == len(with_data) - 1)
        if not with_data and self.n > 1:
            st = WorkerExchangeState(0)
            self._emit_broadcast(st, self._fresh(st, -1), last=True)

    @property
    def finished(self) -> bool:
        return self._finished
