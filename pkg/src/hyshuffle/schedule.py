"""Conflict-free round-robin send phases and the barrier protocol between them.

In phase ``k`` (1 <= k < n) node ``i`` sends to ``(i + k) % n``. Every node has
exactly one target and one source per phase, so no receive port is shared.
After ``messages_per_step`` messages (or an exhausted queue) a node sends a
sync frame to every peer and waits for theirs before moving to the next phase.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Mapping

from hyshuffle.exchange import (
    FLAG_DONE,
    FLAG_SYNC,
    SYNC_OPERATOR_ID,
    WIRE_HEADER_SIZE,
    decode_frame,
    encode_frame_header,
)

DEFAULT_MESSAGES_PER_STEP = 8
DEFAULT_SYNC_LATENCY_NS = 1_000

_PHASE_COUNTER = struct.Struct("<I")


@dataclass(frozen=True)
class PhaseSchedule:
    n: int
    phases: tuple[tuple[int, ...], ...]  # phases[k][sender] -> target

    def target(self, phase_index: int, sender: int) -> int:
        return self.phases[phase_index][sender]

    def pairs(self, phase_index: int) -> list[tuple[int, int]]:
        return list(enumerate(self.phases[phase_index]))

    def __len__(self) -> int:
        return len(self.phases)


def round_robin_schedule(n: int) -> PhaseSchedule:
    if n < 2:
        raise ValueError(f"a schedule needs at least 2 nodes, got {n}")
    phases = tuple(tuple((i + k) % n for i in range(n)) for k in range(1, n))
    return PhaseSchedule(n, phases)


def validate_schedule(schedule: PhaseSchedule) -> None:
    """Raise ``AssertionError`` unless every phase is a derangement and all pairs occur once."""
    n = schedule.n
    assert len(schedule.phases) == n - 1, "wrong phase count"
    seen: set[tuple[int, int]] = set()
    for k, phase in enumerate(schedule.phases):
        assert len(phase) == n, f"phase {k} does not cover every sender"
        assert len(set(phase)) == n, f"phase {k} has a shared receiver"
        for i, j in enumerate(phase):
            assert i != j, f"phase {k}: node {i} targets itself"
            assert (i, j) not in seen, f"pair {(i, j)} scheduled twice"
            seen.add((i, j))
    assert len(seen) == n * (n - 1), "not every ordered pair is covered"


@dataclass(frozen=True)
class SyncPolicy:
    messages_per_step: int = DEFAULT_MESSAGES_PER_STEP
    sync_latency_ns: int = DEFAULT_SYNC_LATENCY_NS
    completion_batch: int = 1

    def __post_init__(self) -> None:
        if self.messages_per_step < 1:
            raise ValueError("messages_per_step must be >= 1")
        if self.completion_batch < 1:
            raise ValueError("completion_batch must be >= 1")
        if self.sync_latency_ns < 0:
            raise ValueError("sync latency must be non-negative")


# ---------------------------------------------------------------------------
# sync frames
# ---------------------------------------------------------------------------


def encode_sync(step: int, done: bool) -> bytes:
    flags = FLAG_SYNC | (FLAG_DONE if done else 0)
    return encode_frame_header(SYNC_OPERATOR_ID, flags, 4) + _PHASE_COUNTER.pack(step & 0xFFFFFFFF)


def decode_sync(frame: bytes | memoryview) -> tuple[int, bool]:
    op, flags, payload = decode_frame(frame)
    if op != SYNC_OPERATOR_ID or not flags & FLAG_SYNC:
        raise ValueError("not a sync frame")
    (step,) = _PHASE_COUNTER.unpack(payload)
    return step, bool(flags & FLAG_DONE)


SYNC_FRAME_SIZE = WIRE_HEADER_SIZE + 4


# ---------------------------------------------------------------------------
# per-node phase state machine
# ---------------------------------------------------------------------------


class PhaseState:
    """Phase bookkeeping for a single node; owned by that node's network thread.

    Sync frames carry a "done" bit; the schedule ends at the first step in
    which every node reported done, so all nodes leave at the same step.
    """

    def __init__(self, node: int, n: int, policy: SyncPolicy | None = None):
        self.node = node
        self.n = n
        self.policy = policy or SyncPolicy()
        self.schedule = round_robin_schedule(n) if n >= 2 else None
        self.step = 0
        self.sent_in_step = 0
        self.sync_issued = False
        self.finished = False
        self.syncs_sent = 0
        self._acks: dict[int, dict[int, bool]] = {}
        self._local_done: dict[int, bool] = {}

    @property
    def peers(self) -> list[int]:
        return [j for j in range(self.n) if j != self.node]

    @property
    def phase_index(self) -> int:
        return self.step % (self.n - 1)

    @property
    def target(self) -> int:
        return self.schedule.target(self.phase_index, self.node)

    def can_send(self) -> bool:
        return not self.sync_issued and self.sent_in_step < self.policy.messages_per_step

    def record_send(self) -> None:
        if not self.can_send():
            raise RuntimeError("send budget of this step exhausted")
        self.sent_in_step += 1

    def issue_sync(self, local_done: bool) -> bytes:
        """Close the current step; returns the sync frame to send to every peer."""
        if self.sync_issued:
            raise RuntimeError(f"sync for step {self.step} issued twice")
        self.sync_issued = True
        self.syncs_sent += 1
        self._local_done[self.step] = local_done
        return encode_sync(self.step, local_done)

    def on_sync(self, peer: int, step: int, done: bool) -> None:
        self._acks.setdefault(step, {})[peer] = done

    def acks(self, step: int | None = None) -> dict[int, bool]:
        return dict(self._acks.get(self.step if step is None else step, {}))

    def missing_peers(self) -> list[int]:
        got = self._acks.get(self.step, {})
        return [p for p in self.peers if p not in got]

    def barrier_ready(self) -> bool:
        return self.sync_issued and not self.missing_peers()

    def advance(self) -> int | None:
        """Leave the current step; next phase index, or ``None`` when everyone is done."""
        if not self.barrier_ready():
            raise RuntimeError(f"barrier of step {self.step} not complete: waiting for {self.missing_peers()}")
        acks = self._acks.pop(self.step)
        everyone_done = self._local_done.pop(self.step) and all(acks.values())
        if everyone_done:
            self.finished = True
            return None
        self.step += 1
        self.sent_in_step = 0
        self.sync_issued = False
        return self.phase_index


def advance_phase(state: PhaseState, acks: Mapping[int, bool]) -> int | None:
    """Feed ``peer -> done`` sync acks for the current step and try to advance.

    Returns the next phase index, ``None`` when the schedule is finished, and
    raises ``RuntimeError`` if the barrier is still incomplete.
    """
    for peer, done in acks.items():
        state.on_sync(peer, state.step, done)
    return state.advance()


def amortization_curve(message_size: float, sync_latency_s: float, bandwidth: float, step: int) -> float:
    """Predicted per-link throughput when each ``step`` messages cost one sync."""
    if min(message_size, bandwidth, step) <= 0 or sync_latency_s < 0:
        raise ValueError("parameters must be positive")
    payload = step * message_size
    return payload / (payload / bandwidth + sync_latency_s)
