"""Distributed query execution over a mesh of simulated servers.

Every server is a :class:`NodeRuntime` with its own worker threads, message
pools and multiplexer; servers only exchange data through the transport.
"""

from __future__ import annotations

import threading
import time
from collections import Counter
from dataclasses import dataclass, field
from typing import Any, Mapping

from hyshuffle.codec import Schema, TupleBatch
from hyshuffle.engine.multiplexer import Multiplexer
from hyshuffle.engine.node import Aborted, NodeRuntime
from hyshuffle.engine.plan import ExchangeSink, LogicalPlan, PhysicalPlan, ReceiveSource, compile_plan
from hyshuffle.errors import ContractViolation, QueryError
from hyshuffle.exchange import DEFAULT_MESSAGE_CAPACITY
from hyshuffle.schedule import round_robin_schedule
from hyshuffle.transport import open_mesh
from hyshuffle.transport.base import TransportConfig
from hyshuffle.transport.recording import RecordingMesh
from hyshuffle.transport.sim import Transfer, sim_run

DEFAULT_MORSEL_SIZE = 16_384


@dataclass(frozen=True)
class ClusterConfig:
    n: int = 1
    t: int = 1
    regions: int = 1
    morsel_size: int = DEFAULT_MORSEL_SIZE
    message_capacity: int = DEFAULT_MESSAGE_CAPACITY
    scheduled: bool = True
    receive_policy: str = "round_robin"  # or "region0": every incoming message lands in region 0
    pool_limit: int | None = None
    pool_timeout_s: float = 10.0
    timeout_s: float = 120.0

    def __post_init__(self) -> None:
        if self.n < 1 or self.t < 1 or self.regions < 1:
            raise ValueError("n, t and regions must all be >= 1")
        if self.morsel_size < 1 or self.message_capacity < 64:
            raise ValueError("morsel_size must be >= 1 and message_capacity >= 64 bytes")
        if self.receive_policy not in ("round_robin", "region0"):
            raise ValueError("receive_policy must be 'round_robin' or 'region0'")

    def region_of(self, worker: int) -> int:
        return worker % self.regions


Placement = Mapping[str, list[TupleBatch]]  # table -> one chunk per node


def place_chunks(tables: Mapping[str, TupleBatch], n: int) -> dict[str, list[TupleBatch]]:
    """Split each table into ``n`` contiguous chunks, as if generated per server."""
    out: dict[str, list[TupleBatch]] = {}
    for name, batch in tables.items():
        total = batch.row_count
        bounds = [total * i // n for i in range(n + 1)]
        out[name] = [batch.slice(bounds[i], bounds[i + 1]) for i in range(n)]
    return out


def catalog_of(tables: Mapping[str, Any]) -> dict[str, Schema]:
    cat = {}
    for name, value in tables.items():
        if isinstance(value, Schema):
            cat[name] = value
        elif isinstance(value, TupleBatch):
            cat[name] = value.schema
        else:
            cat[name] = value[0].schema
    return cat


@dataclass
class QueryMetrics:
    n: int
    t: int
    regions: int
    transport: str
    scheduled: bool
    wall_time_s: float = 0.0
    bytes_shuffled: int = 0
    bytes_received: int = 0
    messages_sent: int = 0
    messages_received: int = 0
    sync_frames: int = 0
    steals: int = 0
    connections: int = 0
    max_open_messages: int = 0
    broadcast_passes: int = 0
    rows_per_worker: dict[int, list[int]] = field(default_factory=dict)
    received_rows_per_worker: dict[int, list[int]] = field(default_factory=dict)
    pipeline_times: dict[int, dict[int, float]] = field(default_factory=dict)
    pipeline_rows: dict[int, dict[int, int]] = field(default_factory=dict)
    pool_stats: list[dict] = field(default_factory=list)
    pools_balanced: bool = True
    processed_exactly_once: bool = True
    retain_counts_zero: bool = True
    simulated_time_ns: int | None = None
    per_exchange_bytes: dict[int, int] = field(default_factory=dict)

    def as_row(self) -> dict:
        return {
            "n": self.n,
            "t": self.t,
            "regions": self.regions,
            "transport": self.transport,
            "schedule": "on" if self.scheduled else "off",
            "wall_time_s": f"{self.wall_time_s:.4f}",
            "simulated_time_ns": "" if self.simulated_time_ns is None else self.simulated_time_ns,
            "bytes_shuffled": self.bytes_shuffled,
            "messages_sent": self.messages_sent,
            "sync_frames": self.sync_frames,
            "steals": self.steals,
            "connections": self.connections,
        }


@dataclass
class QueryResult:
    schema: Schema
    rows: list[tuple]
    metrics: QueryMetrics
    plan: PhysicalPlan

    def multiset(self) -> Counter:
        return Counter(self.rows)


def _node_tables(placement: Placement, node: int, tables: tuple[str, ...]) -> dict[str, TupleBatch]:
    out = {}
    for name in tables:
        chunks = placement.get(name)
        if chunks is None:
            raise QueryError(f"no data placed for table {name!r}")
        if node < len(chunks):
            out[name] = chunks[node]
    return out


def run_query(
    plan: LogicalPlan | PhysicalPlan | Mapping | str,
    cluster: ClusterConfig,
    transport: TransportConfig | None = None,
    placement: Placement | None = None,
    tables: Mapping[str, TupleBatch] | None = None,
) -> QueryResult:
    """Execute ``plan`` on ``cluster.n`` servers and gather the result at node 0.

    Pass either a ``placement`` (one chunk per node and table) or whole
    ``tables``, which are then split into contiguous chunks.
    """
    transport = transport or TransportConfig()
    if placement is None:
        if tables is None:
            raise QueryError("run_query needs either placement or tables")
        placement = place_chunks(tables, cluster.n)
    for name, chunks in placement.items():
        if len(chunks) != cluster.n:
            raise QueryError(f"table {name!r} is placed on {len(chunks)} nodes, cluster has {cluster.n}")
    if not isinstance(plan, PhysicalPlan):
        plan = compile_plan(plan, catalog_of(placement))

    n = cluster.n
    abort = threading.Event()
    started = time.perf_counter()
    deadline = time.monotonic() + cluster.timeout_s
    mesh = open_mesh(n, transport)
    nodes: list[NodeRuntime] = []
    muxes: list[Multiplexer] = []
    try:
        for i in range(n):
            rt = NodeRuntime(i, n, cluster, plan, _node_tables(placement, i, plan.tables), abort, deadline)
            mux = Multiplexer(rt, mesh.endpoints[i], cluster.scheduled, cluster.receive_policy, transport.sync_timeout_s)
            rt.mux = mux
            nodes.append(rt)
            muxes.append(mux)
        drivers = [threading.Thread(target=rt.run, name=f"node{rt.node}", daemon=True) for rt in nodes]
        for m in muxes:
            m.start()
        for d in drivers:
            d.start()
        for d in drivers:
            d.join(max(0.0, deadline - time.monotonic()) + 1.0)
        for m in muxes:
            m.join(max(0.0, deadline - time.monotonic()) + 5.0)
        hung = [rt.node for rt, d in zip(nodes, drivers) if d.is_alive()]
        hung += [m.node for m in muxes if m.is_alive()]
        if hung:
            abort.set()
            raise QueryError(f"query did not finish within {cluster.timeout_s}s on node(s) {sorted(set(hung))}", hung[0])
        _raise_first_error(nodes, muxes)
        connections = mesh.connections
    finally:
        abort.set()
        mesh.close()
    wall = time.perf_counter() - started

    result = nodes[0].result
    metrics = _collect_metrics(plan, cluster, transport, nodes, muxes, connections, wall)
    if isinstance(mesh, RecordingMesh):
        metrics.simulated_time_ns = simulated_time(plan, cluster, transport, nodes, mesh)
    _check_invariants(metrics)
    return QueryResult(plan.result_schema, result.rows() if result is not None else [], metrics, plan)


def _raise_first_error(nodes: list[NodeRuntime], muxes: list[Multiplexer]) -> None:
    failures = []
    for rt, m in zip(nodes, muxes):
        for exc in (rt.error, m.error):
            if exc is not None and not isinstance(exc, Aborted):
                failures.append((rt.node, exc))
    if failures:
        node, exc = failures[0]
        raise QueryError(f"node {node}: {type(exc).__name__}: {exc}", node) from exc
    for rt in nodes:
        if rt.error is not None:
            raise QueryError(f"node {rt.node} aborted", rt.node) from rt.error


def _collect_metrics(plan, cluster, transport, nodes, muxes, connections, wall) -> QueryMetrics:
    m = QueryMetrics(cluster.n, cluster.t, cluster.regions, transport.kind, cluster.scheduled and cluster.n > 1)
    m.wall_time_s = wall
    m.connections = connections
    receiving = {p.pid for p in plan.pipelines if isinstance(p.source, ReceiveSource)}
    for rt, mux in zip(nodes, muxes):
        m.bytes_shuffled += mux.bytes_shuffled
        m.bytes_received += mux.bytes_received
        m.messages_sent += mux.messages_sent
        m.messages_received += mux.messages_received
        m.sync_frames += mux.sync_frames_sent
        m.steals += sum(ws.steals for ws in rt.workers)
        m.rows_per_worker[rt.node] = [sum(ws.rows_in.values()) for ws in rt.workers]
        m.received_rows_per_worker[rt.node] = [
            sum(v for pid, v in ws.rows_in.items() if pid in receiving) for ws in rt.workers
        ]
        m.pipeline_times[rt.node] = dict(rt.pipeline_times)
        m.pipeline_rows[rt.node] = dict(rt.pipeline_rows)
        for pool in rt.pools:
            st = pool.stats()
            st["node"] = rt.node
            m.pool_stats.append(st)
            m.pools_balanced &= pool.balanced()
        for state in rt.hub.states.values():
            m.processed_exactly_once &= state.processed_exactly_once()
        for op in rt.exchange_operators.values():
            m.max_open_messages = max(m.max_open_messages, op.stats.max_open_messages)
            if op.kind.mode == "broadcast":
                m.broadcast_passes += op.stats.serialization_passes
            for target, nbytes in op.stats.per_target_bytes.items():
                if target != rt.node and target != -1:
                    m.per_exchange_bytes[op.operator_id] = m.per_exchange_bytes.get(op.operator_id, 0) + nbytes
        m.retain_counts_zero &= not mux._inflight
    return m


def _check_invariants(m: QueryMetrics) -> None:
    if not m.pools_balanced:
        raise ContractViolation(f"message pools unbalanced after the query: {m.pool_stats}")
    if not m.retain_counts_zero:
        raise ContractViolation("sent messages still awaiting completion after the query")
    if not m.processed_exactly_once:
        raise ContractViolation("a received message was not processed exactly once")
    if m.bytes_shuffled != m.bytes_received:
        raise ContractViolation(f"{m.bytes_shuffled} payload bytes sent but {m.bytes_received} received")


def simulated_time(plan: PhysicalPlan, cluster: ClusterConfig, transport: TransportConfig, nodes, mesh: RecordingMesh) -> int:
    """Pipelines run one after another: slowest node's CPU time plus the shuffle makespan."""
    by_op: dict[int, list] = {}
    for rec in mesh.trace:
        by_op.setdefault(rec.operator_id, []).append(rec)
    schedule = round_robin_schedule(cluster.n) if cluster.scheduled and cluster.n > 1 else None
    total = 0
    for p in plan.pipelines:
        cpu = max(rt.pipeline_rows.get(p.pid, 0) for rt in nodes) * transport.cpu_ns_per_tuple / cluster.t
        total += int(round(cpu))
        if isinstance(p.sink, ExchangeSink):
            frames = by_op.get(p.sink.exchange.operator_id, [])
            if frames and cluster.n > 1:
                work = [Transfer(f.source, f.target, 1, f.size) for f in frames]
                report = sim_run(work, schedule, transport, n=cluster.n, record_events=False)
                total += report.makespan_ns
    return total


__all__ = ["ClusterConfig", "QueryMetrics", "QueryResult", "run_query", "place_chunks"]
