"""The per-node network thread.

It is the only component that touches the node's transport endpoint. Workers
hand it full messages through :meth:`Multiplexer.enqueue`; it sends them,
returns each buffer to its pool once every send of it has completed, turns
incoming frames into pool messages placed on the region receive queues, and
(when scheduling is on) runs the round-robin phase protocol.
"""

from __future__ import annotations

import threading
import time
from collections import deque
from typing import TYPE_CHECKING

from hyshuffle.errors import ContractViolation, TransportFault, WouldBlock
from hyshuffle.exchange import FLAG_LAST, FLAG_SYNC, Message, decode_frame
from hyshuffle.schedule import PhaseState, decode_sync
from hyshuffle.transport.base import Endpoint

if TYPE_CHECKING:
    from hyshuffle.engine.node import NodeRuntime

IDLE_STEP_WAIT_S = 0.002
POLL_TIMEOUT_S = 0.05


class Multiplexer(threading.Thread):
    def __init__(
        self,
        runtime: NodeRuntime,
        endpoint: Endpoint,
        scheduled: bool,
        receive_policy: str = "round_robin",
        sync_timeout_s: float = 30.0,
    ):
        super().__init__(name=f"mux{runtime.node}", daemon=True)
        self.rt = runtime
        self.node = runtime.node
        self.n = runtime.n
        self.ep = endpoint
        self.scheduled = scheduled and self.n > 1
        self.receive_policy = receive_policy
        self.sync_timeout_s = sync_timeout_s
        self._lock = threading.Lock()
        self._per_target: dict[int, deque[Message]] = {j: deque() for j in range(self.n) if j != self.node}
        self._fifo: deque[tuple[int, Message]] = deque()
        self._queued = 0
        self._sending_done = threading.Event()
        self._inflight: dict[int, Message] = {}
        self._next_region = 0
        self.phase = PhaseState(self.node, self.n, endpoint.config.sync_policy()) if self.scheduled else None
        self.error: BaseException | None = None
        # metrics
        self.bytes_shuffled = 0
        self.messages_sent = 0
        self.bytes_received = 0
        self.messages_received = 0
        self.sync_frames_sent = 0
        self.retries = 0
        self.steps = 0
        self._step_started = time.monotonic()
        self._sync_started = 0.0

    # -- worker side ---------------------------------------------------------

    def enqueue(self, target: int, msg: Message) -> None:
        if target == self.node or target not in self._per_target:
            raise ContractViolation(f"node {self.node}: cannot enqueue a message for node {target}")
        if msg.retain_count <= 0:
            raise ContractViolation("message enqueued without being retained")
        with self._lock:
            if self.scheduled:
                self._per_target[target].append(msg)
            else:
                self._fifo.append((target, msg))
            self._queued += 1
        self.ep.wakeup()

    def finish_sending(self) -> None:
        """The node will enqueue nothing more."""
        self._sending_done.set()
        self.ep.wakeup()

    # -- thread ----------------------------------------------------------------

    def run(self) -> None:
        try:
            self._loop()
        except BaseException as exc:
            self.error = exc
            self.rt.abort.set()

    def _queued_count(self) -> int:
        with self._lock:
            return self._queued

    def _loop(self) -> None:
        abort = self.rt.abort
        while not abort.is_set():
            timeout = self._step()
            if self._can_exit():
                break
            self._pump(timeout)
        if not abort.is_set():
            self._pump(0.0, drain=True)
        # completions for frames already handed over may still be pending
        deadline = time.monotonic() + 5.0
        while self._inflight and time.monotonic() < deadline and not abort.is_set():
            self._pump(0.01, drain=True)

    def _can_exit(self) -> bool:
        if not self._sending_done.is_set() or self._queued_count():
            return False
        if self.scheduled and not self.phase.finished:
            return False
        return True

    # -- sending -------------------------------------------------------------

    def _post(self, target: int, msg: Message) -> bool:
        try:
            token = self.ep.post_send(target, msg)
        except WouldBlock:
            self.retries += 1
            return False
        self._inflight[token] = msg
        self.bytes_shuffled += msg.bytes_used
        self.messages_sent += 1
        return True

    def _step(self) -> float:
        """Send what the protocol allows; returns how long the next poll may block."""
        if not self.scheduled:
            while True:
                with self._lock:
                    if not self._fifo:
                        break
                    target, msg = self._fifo[0]
                if not self._post(target, msg):
                    return 0.001
                with self._lock:
                    self._fifo.popleft()
                    self._queued -= 1
            return POLL_TIMEOUT_S
        ph = self.phase
        if ph.finished:
            return POLL_TIMEOUT_S
        now = time.monotonic()
        if not ph.sync_issued:
            target = ph.target
            q = self._per_target[target]
            while ph.can_send():
                with self._lock:
                    if not q:
                        break
                    msg = q[0]
                if not self._post(target, msg):
                    return 0.001
                with self._lock:
                    q.popleft()
                    self._queued -= 1
                ph.record_send()
            if ph.can_send() and ph.sent_in_step == 0 and not self._sending_done.is_set():
                # idle step: give workers a moment to produce before an empty barrier
                waited = now - self._step_started
                if not self._queued_count() and waited < IDLE_STEP_WAIT_S:
                    return IDLE_STEP_WAIT_S - waited
            done = self._sending_done.is_set() and not self._queued_count()
            frame = ph.issue_sync(done)
            for peer in ph.peers:
                self.ep.post_frame(peer, frame)
                self.sync_frames_sent += 1
            self._sync_started = now
        if ph.barrier_ready():
            ph.advance()
            self.steps += 1
            self._step_started = time.monotonic()
            return 0.0
        if now - self._sync_started > self.sync_timeout_s:
            missing = ph.missing_peers()
            raise TransportFault(
                f"node {self.node}: no sync for step {ph.step} from node(s) {missing} within {self.sync_timeout_s}s",
                missing[0] if missing else None,
            )
        return POLL_TIMEOUT_S

    # -- receiving -------------------------------------------------------------

    def _pump(self, timeout: float, drain: bool = False) -> None:
        drain = drain or not self._queued_count()
        frames, tokens = self.ep.poll(timeout, drain=drain)
        for source, frame in frames:
            self._on_frame(source, frame)
        for token in tokens:
            msg = self._inflight.pop(token, None)
            if msg is not None and msg.release_ref():
                msg.pool.release(msg)
        if self.ep.closed_peers and not self._can_exit():
            peer = min(self.ep.closed_peers)
            raise TransportFault(f"node {self.node}: connection from node {peer} closed early", peer)

    def _region(self) -> int:
        regions = len(self.rt.pools)
        if self.receive_policy == "region0" or regions == 1:
            return 0
        r = self._next_region
        self._next_region = (r + 1) % regions
        return r

    def _on_frame(self, source: int, frame: bytes) -> None:
        op, flags, payload = decode_frame(frame)
        if flags & FLAG_SYNC:
            if self.phase is None:
                raise ContractViolation(f"node {self.node}: sync frame from {source} while unscheduled")
            step, done = decode_sync(frame)
            self.phase.on_sync(source, step, done)
            return
        state = self.rt.hub[op]
        self.messages_received += 1
        self.bytes_received += len(payload)
        if len(payload):
            region = self._region()
            msg = self.rt.pools[region].acquire(op)
            msg.load(op, bool(flags & FLAG_LAST), payload)
            msg.source = source
            state.put(region, msg)
        if flags & FLAG_LAST:
            state.mark_last(source)
