"""Per-node runtime: message pools, region receive queues, workers and the pipeline driver."""

from __future__ import annotations

import threading
import time
from collections import deque
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any

from hyshuffle.codec import TupleBatch, codec_for
from hyshuffle.engine.operators import Chain, make_sink, make_stage
from hyshuffle.engine.plan import MaterializedSource, PhysicalPlan, PipelineSpec, ReceiveSource, ScanSource
from hyshuffle.errors import ContractViolation, ShuffleStallError
from hyshuffle.exchange import LocalBatch, Message, MessagePool

if TYPE_CHECKING:
    from hyshuffle.engine.executor import ClusterConfig
    from hyshuffle.engine.multiplexer import Multiplexer


class Aborted(Exception):
    """Raised inside a node when another part of the query failed."""


class ReceiveState:
    """Received messages of one exchange operator, one queue per region.

    The input is complete once a last flag arrived from every expected remote
    sender, the local exchange instance finished, and all queues are empty.
    """

    def __init__(self, operator_id: int, regions: int, expected_remote: int, n: int):
        self.operator_id = operator_id
        self.queues: list[deque] = [deque() for _ in range(regions)]
        self.cond = threading.Condition()
        self.expected_remote = expected_remote
        self.n = n
        self.lasts: set[int] = set()
        self.local_done = False
        self.next_id = 0
        self.processed: list[int] = []
        self.steals = 0
        self.items_by_region = [0] * regions

    def put(self, region: int, item: Message | LocalBatch) -> None:
        with self.cond:
            item_id = self.next_id
            self.next_id += 1
            self.queues[region].append((item_id, item))
            self.items_by_region[region] += 1
            self.cond.notify_all()

    def mark_last(self, source: int) -> None:
        with self.cond:
            if source in self.lasts:
                raise ContractViolation(f"exchange {self.operator_id:#x}: second last flag from node {source}")
            self.lasts.add(source)
            self.cond.notify_all()

    def mark_local_done(self) -> None:
        with self.cond:
            if self.local_done:
                raise ContractViolation(f"exchange {self.operator_id:#x}: local input finished twice")
            self.local_done = True
            self.cond.notify_all()

    @property
    def inputs_complete(self) -> bool:
        return self.local_done and len(self.lasts) == self.expected_remote

    def take(self, region: int, abort: threading.Event, deadline: float) -> tuple[int, Any, bool] | None:
        """Next item, own region first, then round-robin over the others; ``None`` when drained."""
        regions = len(self.queues)
        with self.cond:
            while True:
                q = self.queues[region]
                if q:
                    item_id, item = q.popleft()
                    return item_id, item, False
                for k in range(1, regions):
                    other = self.queues[(region + k) % regions]
                    if other:
                        item_id, item = other.popleft()
                        self.steals += 1
                        return item_id, item, True
                if self.inputs_complete:
                    return None
                if abort.is_set():
                    raise Aborted()
                if time.monotonic() > deadline:
                    raise ShuffleStallError(
                        f"exchange {self.operator_id:#x}: input incomplete; last flags from "
                        f"{sorted(self.lasts)} of {self.expected_remote}, local done={self.local_done}"
                    )
                self.cond.wait(0.05)

    def record_processed(self, item_id: int) -> None:
        with self.cond:
            self.processed.append(item_id)

    def processed_exactly_once(self) -> bool:
        with self.cond:
            return sorted(self.processed) == list(range(self.next_id)) and not any(self.queues)


class ReceiveHub:
    def __init__(self, node: int, n: int, regions: int, plan: PhysicalPlan):
        self.states: dict[int, ReceiveState] = {}
        for ex in plan.exchanges:
            if ex.kind.mode == "gather":
                expected = n - 1 if node == 0 else 0
            else:
                expected = n - 1
            self.states[ex.operator_id] = ReceiveState(ex.operator_id, regions, expected, n)

    def __getitem__(self, operator_id: int) -> ReceiveState:
        try:
            return self.states[operator_id]
        except KeyError:
            raise ContractViolation(f"message for unknown exchange operator {operator_id:#x}") from None


@dataclass
class WorkerStats:
    worker: int
    region: int
    rows_in: dict[int, int] = field(default_factory=dict)  # pipeline id -> rows
    messages: int = 0
    steals: int = 0
    morsels: int = 0


class MorselDispatcher:
    """Shared cursor over a materialized input; hands out slices of ``size`` rows."""

    def __init__(self, rows: list[tuple], size: int):
        self.rows = rows
        self.size = size
        self._pos = 0
        self._lock = threading.Lock()

    def next(self) -> list[tuple] | None:
        with self._lock:
            start = self._pos
            if start >= len(self.rows):
                return None
            self._pos = start + self.size
        return self.rows[start : start + self.size]


class NodeRuntime:
    """One simulated server: implements the exchange operator's host interface."""

    def __init__(
        self,
        node: int,
        n: int,
        cluster: ClusterConfig,
        plan: PhysicalPlan,
        tables: dict[str, TupleBatch],
        abort: threading.Event,
        deadline: float,
    ):
        self.node = node
        self.n = n
        self.cluster = cluster
        self.plan = plan
        self.tables = tables
        self.abort = abort
        self.deadline = deadline
        self.pools = [
            MessagePool(r, cluster.message_capacity, cluster.pool_limit, cluster.pool_timeout_s)
            for r in range(cluster.regions)
        ]
        self.hub = ReceiveHub(node, n, cluster.regions, plan)
        self.mux: Multiplexer | None = None
        self.join_tables: dict = {}
        self.materialized: dict[int, list[tuple]] = {}
        self.exchange_operators: dict = {}
        self.result: TupleBatch | None = None
        self.workers = [WorkerStats(w, w % cluster.regions) for w in range(cluster.t)]
        self.pipeline_times: dict[int, float] = {}
        self.pipeline_rows: dict[int, int] = {}
        self.error: BaseException | None = None

    # -- exchange host interface ---------------------------------------------

    def pool(self, region: int) -> MessagePool:
        return self.pools[region % len(self.pools)]

    def enqueue(self, target: int, msg: Message) -> None:
        self.mux.enqueue(target, msg)

    def deliver_local(self, operator_id: int, region: int, item: Message | LocalBatch) -> None:
        if isinstance(item, Message):
            item.source = self.node
        self.hub[operator_id].put(region % len(self.pools), item)

    def local_done(self, operator_id: int) -> None:
        self.hub[operator_id].mark_local_done()

    # -- execution ---------------------------------------------------------------

    def run(self) -> None:
        """Driver thread: run every pipeline in order, then release the multiplexer."""
        try:
            for spec in self.plan.pipelines:
                t0 = time.perf_counter()
                self.run_pipeline(spec)
                self.pipeline_times[spec.pid] = time.perf_counter() - t0
        except BaseException as exc:
            self.error = exc
            self.abort.set()
        finally:
            if self.mux is not None:
                self.mux.finish_sending()

    def _scan_rows(self, src: ScanSource) -> list[tuple]:
        batch = self.tables.get(src.table)
        if batch is None:
            return []
        idx = [batch.schema.index(c) for c in src.columns]
        return batch.project(idx).rows()

    def run_pipeline(self, spec: PipelineSpec) -> None:
        sink = make_sink(spec.sink, self)
        src = spec.source
        if isinstance(src, ScanSource):
            dispatcher = MorselDispatcher(self._scan_rows(src), self.cluster.morsel_size)
        elif isinstance(src, MaterializedSource):
            dispatcher = MorselDispatcher(self.materialized.pop(src.agg_id, []), self.cluster.morsel_size)
        else:
            dispatcher = None
        errors: list[BaseException] = []
        threads = []
        for ws in self.workers:
            th = threading.Thread(
                target=self._worker_main,
                args=(spec, sink, dispatcher, ws, errors),
                name=f"node{self.node}-p{spec.pid}-w{ws.worker}",
                daemon=True,
            )
            threads.append(th)
        for th in threads:
            th.start()
        for th in threads:
            th.join()
        if errors:
            raise errors[0]
        if self.abort.is_set():
            raise Aborted()
        self.pipeline_rows[spec.pid] = sum(ws.rows_in.get(spec.pid, 0) for ws in self.workers)
        sink.finalize()

    def _worker_main(self, spec, sink, dispatcher, ws: WorkerStats, errors: list) -> None:
        try:
            worker_loop(self, spec, sink, dispatcher, ws)
        except BaseException as exc:
            errors.append(exc)
            self.abort.set()


def worker_loop(rt: NodeRuntime, spec: PipelineSpec, sink, dispatcher: MorselDispatcher | None, ws: WorkerStats) -> None:
    """Feed morsels or received messages through this worker's pipeline instance.

    Locally-placed messages of the worker's region are preferred; other
    regions' queues are stolen from only when the local one is empty.
    """
    chain = Chain([make_stage(op, rt) for op in spec.ops], sink.handle(ws.region))
    pid = spec.pid
    rows_in = 0
    if dispatcher is not None:
        while True:
            if rt.abort.is_set():
                raise Aborted()
            morsel = dispatcher.next()
            if morsel is None:
                break
            ws.morsels += 1
            rows_in += len(morsel)
            chain.push(morsel)
    else:
        assert isinstance(spec.source, ReceiveSource)
        ex = spec.source.exchange
        state = rt.hub[ex.operator_id]
        decode = codec_for(ex.out_schema).decode_all
        while True:
            got = state.take(ws.region, rt.abort, rt.deadline)
            if got is None:
                break
            item_id, item, stolen = got
            if stolen:
                ws.steals += 1
            if isinstance(item, LocalBatch):
                rows = item.batch.rows()
            else:
                rows = decode(item.payload).rows()
                item.pool.release(item)
            ws.messages += 1
            rows_in += len(rows)
            chain.push(rows)
            state.record_processed(item_id)
    chain.finish()
    ws.rows_in[pid] = ws.rows_in.get(pid, 0) + rows_in

