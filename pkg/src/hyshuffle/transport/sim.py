"""Deterministic discrete-event model of an all-to-all exchange through one switch.

Contention model:

* every node has one full-duplex port of ``link_bandwidth``;
* a sender transmits one message at a time, in its own queue order;
* flows into the same receiver share that receiver's ingress equally;
* a receiver grants at most ``receiver_credit_limit`` outstanding messages
  per sender; a credit returns ``base_latency_ns`` after delivery, and a
  sender whose head message lacks a credit stalls (head-of-line blocking).

With a :class:`PhaseSchedule`, sends are grouped into barrier-separated steps
of ``messages_per_step`` messages to the phase's target, each barrier costing
``sync_latency_ns``. Time is integer nanoseconds.
"""

from __future__ import annotations

import csv
import hashlib
import heapq
import io
import math
import random
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from hyshuffle.schedule import PhaseSchedule
from hyshuffle.transport.base import TransportConfig

_EPS = 1e-6
EVENT_KINDS = ("send_start", "delivery", "credit_grant", "sync")


@dataclass(frozen=True)
class Transfer:
    sender: int
    receiver: int
    count: int
    size: int

    def __post_init__(self) -> None:
        if self.sender == self.receiver:
            raise ValueError(f"transfer from node {self.sender} to itself")
        if self.count < 0 or self.size < 0:
            raise ValueError("message count and size must be non-negative")


@dataclass(frozen=True)
class SimEvent:
    time: int
    kind: str
    sender: int
    receiver: int
    message: int

    def as_row(self) -> tuple:
        return (self.time, self.kind, self.sender, self.receiver, self.message)


@dataclass
class SimReport:
    n: int
    scheduled: bool
    makespan_ns: int
    link_bandwidth: float
    bytes_sent: list[int]
    bytes_received: list[int]
    messages: int
    sync_counts: list[int]
    steps: int
    stalls: int
    max_ingress_flows: int
    shared_ingress_ns: int
    events: list[SimEvent] = field(repr=False, default_factory=list)
    trace_hash: str = ""

    @property
    def total_bytes(self) -> int:
        return sum(self.bytes_sent)

    @property
    def makespan_s(self) -> float:
        return self.makespan_ns / 1e9

    @property
    def aggregate_throughput(self) -> float:
        """Bytes per second summed over all senders."""
        return self.total_bytes / self.makespan_s if self.makespan_ns else 0.0

    @property
    def node_throughput(self) -> list[float]:
        if not self.makespan_ns:
            return [0.0] * self.n
        return [b / self.makespan_s for b in self.bytes_sent]

    @property
    def per_node_throughput(self) -> float:
        """Mean bytes/s per node."""
        return self.aggregate_throughput / self.n if self.n else 0.0

    def capacity_fraction(self) -> float:
        active = sum(1 for b in self.bytes_sent if b)
        return self.aggregate_throughput / (active * self.link_bandwidth) if active else 0.0

    def rows(self) -> list[dict]:
        tp = self.node_throughput
        return [
            {
                "node": i,
                "scheduled": int(self.scheduled),
                "bytes_sent": self.bytes_sent[i],
                "bytes_received": self.bytes_received[i],
                "throughput_bytes_per_s": f"{tp[i]:.3f}",
                "syncs": self.sync_counts[i],
                "makespan_ns": self.makespan_ns,
            }
            for i in range(self.n)
        ]

    def events_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("time_ns", "kind", "sender", "receiver", "message"))
        w.writerows(e.as_row() for e in self.events)
        return buf.getvalue()


@dataclass
class _Flow:
    sender: int
    receiver: int
    remaining: float
    message: int


def _hash_events(events: Sequence[SimEvent]) -> str:
    h = hashlib.sha256()
    for e in events:
        h.update(f"{e.time},{e.kind},{e.sender},{e.receiver},{e.message}\n".encode())
    return h.hexdigest()


def all_to_all(n: int, messages_per_node: int, size: int) -> list[Transfer]:
    """Each node spreads ``messages_per_node`` messages evenly over its peers.

    When the count does not divide, the peers right after the sender get one extra.
    """
    if n < 2:
        return []
    per_target, extra = divmod(messages_per_node, n - 1)
    out = []
    for i in range(n):
        for k in range(1, n):
            count = per_target + (1 if k <= extra else 0)
            if count:
                out.append(Transfer(i, (i + k) % n, count, size))
    return out


def sim_run(
    workload: Iterable[Transfer],
    schedule: PhaseSchedule | None = None,
    config: TransportConfig | None = None,
    n: int | None = None,
    record_events: bool = True,
) -> SimReport:
    config = config or TransportConfig(kind="simulated")
    transfers = list(workload)
    if n is None:
        n = schedule.n if schedule is not None else 1 + max((max(t.sender, t.receiver) for t in transfers), default=0)
    if schedule is not None and schedule.n != n:
        raise ValueError(f"schedule is for {schedule.n} nodes, workload has {n}")
    bw_per_ns = config.link_bandwidth / 1e9
    credit_limit = config.receiver_credit_limit
    latency = config.base_latency_ns
    step_budget = config.messages_per_step
    sync_latency = config.sync_latency_ns

    # message table: id -> (sender, receiver, size)
    msgs: list[tuple[int, int, int]] = []
    per_sender: list[list[int]] = [[] for _ in range(n)]
    for t in transfers:
        for _ in range(t.count):
            per_sender[t.sender].append(len(msgs))
            msgs.append((t.sender, t.receiver, t.size))

    scheduled = schedule is not None
    if scheduled:
        by_target: list[dict[int, deque[int]]] = [dict() for _ in range(n)]
        for s in range(n):
            for m in per_sender[s]:
                by_target[s].setdefault(msgs[m][1], deque()).append(m)
    else:
        rng = random.Random(config.seed)
        queues: list[deque[int]] = []
        for s in range(n):
            order = list(per_sender[s])
            rng.shuffle(order)
            queues.append(deque(order))

    events: list[SimEvent] = []
    timers: list[tuple[int, int, str, int, int]] = []  # (time, seq, kind, sender, receiver)
    seq = 0
    now = 0
    flows: dict[int, _Flow] = {}
    credits: dict[tuple[int, int], int] = {}
    bytes_sent = [0] * n
    bytes_received = [0] * n
    sync_counts = [0] * n
    stalls = 0
    stalled: set[int] = set()
    max_ingress = 0
    shared_ns = 0
    end_time = 0

    step = 0
    sent_in_step = [0] * n
    synced = [False] * n
    barrier_pending = False
    finished = not msgs and not scheduled

    def emit(kind: str, s: int, r: int, m: int) -> None:
        if record_events:
            events.append(SimEvent(now, kind, s, r, m))

    def schedule_timer(t: int, kind: str, s: int, r: int) -> None:
        nonlocal seq
        seq += 1
        heapq.heappush(timers, (t, seq, kind, s, r))

    def start(s: int, m: int) -> bool:
        nonlocal stalls
        _, r, size = msgs[m]
        if credits.get((s, r), 0) >= credit_limit:
            if s not in stalled:
                stalls += 1
                stalled.add(s)
            return False
        stalled.discard(s)
        credits[(s, r)] = credits.get((s, r), 0) + 1
        flows[s] = _Flow(s, r, float(size), m)
        emit("send_start", s, r, m)
        return True

    def try_start_unscheduled(s: int) -> None:
        q = queues[s]
        if s in flows or not q:
            return
        if start(s, q[0]):
            q.popleft()

    def try_start_scheduled(s: int) -> None:
        nonlocal barrier_pending
        if s in flows or synced[s]:
            return
        target = schedule.target(step % (n - 1), s)
        q = by_target[s].get(target)
        if sent_in_step[s] < step_budget and q:
            if start(s, q[0]):
                q.popleft()
                sent_in_step[s] += 1
            return
        synced[s] = True
        sync_counts[s] += 1
        emit("sync", s, -1, step)
        if all(synced) and not barrier_pending:
            barrier_pending = True
            schedule_timer(now + sync_latency, "barrier", -1, -1)

    try_start = try_start_scheduled if scheduled else try_start_unscheduled
    if scheduled and n < 2:
        finished = True

    while not finished:
        for s in range(n):
            try_start(s)
        ingress: dict[int, int] = {}
        for f in flows.values():
            ingress[f.receiver] = ingress.get(f.receiver, 0) + 1
        next_t = math.inf
        for f in flows.values():
            rate = bw_per_ns / ingress[f.receiver]
            next_t = min(next_t, now + max(1, math.ceil(f.remaining / rate - _EPS)))
        if timers:
            next_t = min(next_t, timers[0][0])
        if next_t == math.inf:
            break
        t = int(next_t)
        dt = t - now
        if ingress:
            max_ingress = max(max_ingress, max(ingress.values()))
            if max(ingress.values()) > 1:
                shared_ns += dt
        for f in flows.values():
            f.remaining -= bw_per_ns / ingress[f.receiver] * dt
        now = t
        for s in sorted(k for k, f in flows.items() if f.remaining <= _EPS):
            f = flows.pop(s)
            size = msgs[f.message][2]
            bytes_sent[s] += size
            bytes_received[f.receiver] += size
            emit("delivery", s, f.receiver, f.message)
            end_time = now
            schedule_timer(now + latency, "credit", s, f.receiver)
        while timers and timers[0][0] <= now:
            _, _, kind, s, r = heapq.heappop(timers)
            if kind == "credit":
                credits[(s, r)] -= 1
                emit("credit_grant", s, r, -1)
            else:
                barrier_pending = False
                end_time = now
                if all(not q for d in by_target for q in d.values()):
                    finished = True
                    break
                step += 1
                for i in range(n):
                    synced[i] = False
                    sent_in_step[i] = 0
        if not scheduled and not flows and all(not q for q in queues) and not stalled:
            finished = True

    return SimReport(
        n=n,
        scheduled=scheduled,
        makespan_ns=end_time,
        link_bandwidth=config.link_bandwidth,
        bytes_sent=bytes_sent,
        bytes_received=bytes_received,
        messages=len(msgs),
        sync_counts=sync_counts,
        steps=step + 1 if scheduled else 0,
        stalls=stalls,
        max_ingress_flows=max_ingress,
        shared_ingress_ns=shared_ns,
        events=events,
        trace_hash=_hash_events(events),
    )


def max_concurrent_ingress(events: Iterable[SimEvent]) -> int:
    """Largest number of simultaneously active flows into one receiver, from a trace."""
    active: dict[int, int] = {}
    best = 0
    # at equal times a delivery frees the port before the next send starts
    order = {"delivery": 0, "credit_grant": 1, "sync": 1, "send_start": 2}
    for e in sorted(events, key=lambda e: (e.time, order[e.kind])):
        if e.kind == "send_start":
            active[e.receiver] = active.get(e.receiver, 0) + 1
            best = max(best, active[e.receiver])
        elif e.kind == "delivery":
            active[e.receiver] -= 1
    return best


def load_workload(path: str | Path) -> list[Transfer]:
    """Read ``sender,receiver,message_count,message_size`` lines (header and ``#`` comments allowed)."""
    out = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), 1):
            if not row or row[0].strip().startswith("#"):
                continue
            cells = [c.strip() for c in row]
            if cells[0] == "sender":
                continue
            if len(cells) != 4:
                raise ValueError(f"{path}:{lineno}: expected 4 fields, got {len(cells)}")
            s, r, c, z = (int(x) for x in cells)
            out.append(Transfer(s, r, c, z))
    return out


def write_workload(path: str | Path, transfers: Iterable[Transfer]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("sender", "receiver", "message_count", "message_size"))
        for t in transfers:
            w.writerow((t.sender, t.receiver, t.count, t.size))
