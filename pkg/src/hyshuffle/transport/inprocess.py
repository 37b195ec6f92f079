"""Channel transport between threads of one process.

Each directed pair gets its own channel. ``post_send`` copies the used part
of the message into the receiver's inbox, so the sender's buffer is done
with (and its completion posted) immediately.
"""

from __future__ import annotations

import threading
import time
from collections import deque
from typing import TYPE_CHECKING

from hyshuffle.errors import WouldBlock
from hyshuffle.transport.base import Endpoint, Mesh, TransportConfig

if TYPE_CHECKING:
    from hyshuffle.exchange import Message


class Channel:
    __slots__ = ("source", "target", "in_flight", "frames", "bytes")

    def __init__(self, source: int, target: int):
        self.source = source
        self.target = target
        self.in_flight = 0  # delivered to the inbox, not yet polled
        self.frames = 0
        self.bytes = 0


class InProcessEndpoint(Endpoint):
    def __init__(self, node: int, n: int, config: TransportConfig, mesh: InProcessMesh):
        super().__init__(node, n, config)
        self.mesh = mesh
        self._inbox: deque[tuple[int, bytes]] = deque()
        self._cond = threading.Condition()
        self._woken = False

    # -- receiver side, called by senders' threads --------------------------

    def _deliver(self, source: int, frame: bytes) -> None:
        with self._cond:
            self._inbox.append((source, frame))
            self._cond.notify_all()

    def _wait_for_room(self, channel: Channel) -> None:
        limit = self.config.max_pending
        if limit is None or channel.in_flight < limit:
            return
        if not self.config.block_on_full:
            raise WouldBlock(f"channel {channel.source}->{channel.target} holds {channel.in_flight} frames")
        dest = self.mesh.endpoints[channel.target]
        deadline = time.monotonic() + self.config.sync_timeout_s
        with dest._cond:
            while channel.in_flight >= limit:
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    raise WouldBlock(f"channel {channel.source}->{channel.target} stayed full")
                dest._cond.wait(min(remaining, 0.05))

    def _send_bytes(self, target: int, frame: bytes, msg: Message | None) -> int:
        self._check_target(target)
        channel = self.mesh.channels[(self.node, target)]
        self._wait_for_room(channel)
        token = self._token(msg)
        self.on_frame_sent(target, frame)
        dest = self.mesh.endpoints[target]
        with dest._cond:
            channel.in_flight += 1
            channel.frames += 1
            channel.bytes += len(frame)
        dest._deliver(self.node, frame)
        self.stats.count_send(target, len(frame))
        self._complete(token)
        return token

    def on_frame_sent(self, target: int, frame: bytes) -> None:
        """Hook for recording subclasses."""

    def post_send(self, target: int, msg: Message) -> int:
        return self._send_bytes(target, msg.to_wire(), msg)

    def post_frame(self, target: int, frame: bytes) -> int:
        return self._send_bytes(target, bytes(frame), None)

    def poll(self, timeout: float | None = 0.0, drain: bool = False):
        with self._cond:
            if not self._inbox and not self._woken and not self.completions.ready() and timeout != 0:
                self._cond.wait(timeout)
            self._woken = False
            frames = list(self._inbox)
            self._inbox.clear()
            for source, frame in frames:
                self.mesh.channels[(source, self.node)].in_flight -= 1
                self.stats.count_recv(source, len(frame))
            if frames:
                self._cond.notify_all()
        return frames, self.completions.take(drain)

    def wakeup(self) -> None:
        with self._cond:
            self._woken = True
            self._cond.notify_all()


class InProcessMesh(Mesh):
    endpoint_class = InProcessEndpoint

    def __init__(self, n: int, config: TransportConfig):
        super().__init__(n, config)
        self.channels = {(i, j): Channel(i, j) for i in range(n) for j in range(n) if i != j}
        self.endpoints = [self.endpoint_class(i, n, config, self) for i in range(n)]

    @property
    def connections(self) -> int:
        return len(self.channels)
