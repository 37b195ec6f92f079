"""Pluggable transports carrying exchange wire frames between nodes."""

from __future__ import annotations

from hyshuffle.transport.base import CompletionQueue, Endpoint, Mesh, TransportConfig
from hyshuffle.transport.inprocess import InProcessMesh
from hyshuffle.transport.recording import RecordingMesh
from hyshuffle.transport.sim import SimEvent, SimReport, Transfer, all_to_all, sim_run
from hyshuffle.transport.tcp import SocketMesh


def open_mesh(n: int, config: TransportConfig | None = None) -> Mesh:
    """Connect ``n`` nodes pairwise: ``n * (n - 1)`` directed connections."""
    if n < 1:
        raise ValueError("need at least one node")
    config = config or TransportConfig()
    if config.kind == "socket":
        return SocketMesh(n, config)
    if config.kind == "simulated":
        return RecordingMesh(n, config)
    return InProcessMesh(n, config)


__all__ = [
    "CompletionQueue",
    "Endpoint",
    "Mesh",
    "SimEvent",
    "SimReport",
    "Transfer",
    "TransportConfig",
    "all_to_all",
    "open_mesh",
    "sim_run",
]
