from __future__ import annotations

import abc
import threading
from collections import deque
from dataclasses import dataclass, field, replace
from typing import TYPE_CHECKING

from hyshuffle.errors import ContractViolation, RoutingError
from hyshuffle.schedule import DEFAULT_MESSAGES_PER_STEP, DEFAULT_SYNC_LATENCY_NS, SyncPolicy

if TYPE_CHECKING:
    from hyshuffle.exchange import Message

KINDS = ("simulated", "inprocess", "socket")
KIND_ALIASES = {"sim": "simulated", "simulated": "simulated", "inprocess": "inprocess", "socket": "socket", "tcp": "socket"}


@dataclass(frozen=True)
class TransportConfig:
    kind: str = "inprocess"
    link_bandwidth: float = 4e9  # bytes/s
    base_latency_ns: int = 1_000
    receiver_credit_limit: int = 4
    event_mode: str = "event"
    completion_batch: int = 1
    messages_per_step: int = DEFAULT_MESSAGES_PER_STEP
    sync_latency_ns: int = DEFAULT_SYNC_LATENCY_NS
    # frames queued on a channel before post_send pushes back; None = unbounded
    max_pending: int | None = None
    block_on_full: bool = True
    sync_timeout_s: float = 30.0
    # simulated CPU cost per tuple entering a pipeline, used for simulated query time
    cpu_ns_per_tuple: float = 50.0
    seed: int = 0

    def __post_init__(self) -> None:
        kind = KIND_ALIASES.get(self.kind)
        if kind is None:
            raise ValueError(f"unknown transport kind {self.kind!r}; expected one of {KINDS}")
        object.__setattr__(self, "kind", kind)
        if self.event_mode not in ("event", "poll"):
            raise ValueError("event_mode must be 'event' or 'poll'")
        if self.link_bandwidth <= 0 or self.base_latency_ns < 0:
            raise ValueError("bandwidth must be positive and latency non-negative")
        if self.receiver_credit_limit < 1:
            raise ValueError("receiver_credit_limit must be >= 1")

    def sync_policy(self) -> SyncPolicy:
        return SyncPolicy(self.messages_per_step, self.sync_latency_ns, self.completion_batch)

    def with_(self, **changes) -> TransportConfig:
        return replace(self, **changes)


class CompletionQueue:
    """Send completions as delivered to the owner of an endpoint.

    ``event`` mode hands out every completion on the next poll. ``poll`` mode
    only hands them out in groups of ``batch``; the remainder comes out when
    the caller asks to drain.
    """

    def __init__(self, mode: str = "event", batch: int = 1):
        self.mode = mode
        self.batch = max(1, batch)
        self._done: deque[int] = deque()
        self._lock = threading.Lock()
        self.delivered = 0
        self.groups = 0

    def push(self, token: int) -> None:
        with self._lock:
            self._done.append(token)

    def ready(self) -> bool:
        with self._lock:
            return len(self._done) >= (1 if self.mode == "event" else self.batch)

    def __len__(self) -> int:
        with self._lock:
            return len(self._done)

    def take(self, drain: bool = False) -> list[int]:
        with self._lock:
            if self.mode == "event" or drain:
                count = len(self._done)
            else:
                count = (len(self._done) // self.batch) * self.batch
            out = [self._done.popleft() for _ in range(count)]
            if out:
                self.groups += 1
                self.delivered += len(out)
            return out


@dataclass
class EndpointStats:
    frames_sent: dict[int, int] = field(default_factory=dict)
    bytes_sent: dict[int, int] = field(default_factory=dict)
    frames_received: dict[int, int] = field(default_factory=dict)
    bytes_received: dict[int, int] = field(default_factory=dict)

    def count_send(self, target: int, nbytes: int) -> None:
        self.frames_sent[target] = self.frames_sent.get(target, 0) + 1
        self.bytes_sent[target] = self.bytes_sent.get(target, 0) + nbytes

    def count_recv(self, source: int, nbytes: int) -> None:
        self.frames_received[source] = self.frames_received.get(source, 0) + 1
        self.bytes_received[source] = self.bytes_received.get(source, 0) + nbytes


class Endpoint(abc.ABC):
    """One node's view of the mesh. Only the node's network thread calls it,
    except :meth:`wakeup`, which any thread may call."""

    def __init__(self, node: int, n: int, config: TransportConfig):
        self.node = node
        self.n = n
        self.config = config
        self.completions = CompletionQueue(config.event_mode, config.completion_batch)
        self.stats = EndpointStats()
        self.closed_peers: set[int] = set()
        self._next_token = 0
        self._generations: dict[int, tuple[Message, int]] = {}

    def _check_target(self, target: int) -> None:
        if not 0 <= target < self.n or target == self.node:
            raise RoutingError(f"node {self.node}: no connection to target {target}")

    def _token(self, msg: Message | None) -> int:
        self._next_token += 1
        if msg is not None:
            self._generations[self._next_token] = (msg, msg.generation)
        return self._next_token

    def _complete(self, token: int) -> None:
        entry = self._generations.pop(token, None)
        if entry is not None:
            msg, gen = entry
            if msg.generation != gen:
                raise ContractViolation("message buffer changed between post_send and completion")
        self.completions.push(token)

    @abc.abstractmethod
    def post_send(self, target: int, msg: Message) -> int:
        """Queue ``msg`` for ``target``; the returned token completes exactly once."""

    @abc.abstractmethod
    def post_frame(self, target: int, frame: bytes) -> int:
        """Queue a raw wire frame (used for sync frames)."""

    @abc.abstractmethod
    def poll(self, timeout: float | None = 0.0, drain: bool = False) -> tuple[list[tuple[int, bytes]], list[int]]:
        """Return received ``(source, frame)`` pairs and completed send tokens."""

    @abc.abstractmethod
    def wakeup(self) -> None:
        """Make a blocked :meth:`poll` return early."""

    def pending_sends(self) -> int:
        return 0

    def close(self) -> None:
        pass


class Mesh(abc.ABC):
    """All endpoints of a cluster plus the connections between them."""

    endpoints: list[Endpoint]

    def __init__(self, n: int, config: TransportConfig):
        self.n = n
        self.config = config

    @property
    @abc.abstractmethod
    def connections(self) -> int:
        """Number of directed connections opened."""

    def close(self) -> None:
        for ep in self.endpoints:
            ep.close()

    def __enter__(self) -> Mesh:
        return self

    def __exit__(self, *exc) -> None:
        self.close()
