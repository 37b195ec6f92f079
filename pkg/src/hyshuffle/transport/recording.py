"""In-process delivery that also records every frame for later simulation.

Queries run on the ``simulated`` transport move their data exactly like the
in-process transport; the recorded traffic is then replayed through
:func:`hyshuffle.transport.sim.sim_run` to obtain a simulated completion time.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

from hyshuffle.exchange import FLAG_SYNC, WIRE_HEADER
from hyshuffle.transport.inprocess import InProcessEndpoint, InProcessMesh


@dataclass(frozen=True)
class FrameRecord:
    operator_id: int
    source: int
    target: int
    size: int


class RecordingEndpoint(InProcessEndpoint):
    def on_frame_sent(self, target: int, frame: bytes) -> None:
        op, flags, _ = WIRE_HEADER.unpack_from(frame)
        if flags & FLAG_SYNC:
            return
        self.mesh.record(FrameRecord(op, self.node, target, len(frame)))


class RecordingMesh(InProcessMesh):
    endpoint_class = RecordingEndpoint

    def __init__(self, n, config):
        self.trace: list[FrameRecord] = []
        self._trace_lock = threading.Lock()
        super().__init__(n, config)

    def record(self, rec: FrameRecord) -> None:
        with self._trace_lock:
            self.trace.append(rec)
