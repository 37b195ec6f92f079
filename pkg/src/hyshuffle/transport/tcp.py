"""Stream-socket transport over loopback.

Every ordered node pair gets its own TCP connection, used in one direction
only. Frames are ``u32 LE length`` followed by the exchange wire message. All
sockets of a node are nonblocking and driven by a single selector owned by
the node's network thread; a send completes once its last byte has been
handed to the kernel.
"""

from __future__ import annotations

import selectors
import socket
import struct
import time
from collections import deque
from typing import TYPE_CHECKING

from hyshuffle.errors import StartupError, TransportFault, WouldBlock
from hyshuffle.transport.base import Endpoint, Mesh, TransportConfig

if TYPE_CHECKING:
    from hyshuffle.exchange import Message

_LEN = struct.Struct("<I")
_HELLO = struct.Struct("<I")
_RECV_CHUNK = 1 << 20
_SOCK_BUF = 4 << 20


class _Outgoing:
    __slots__ = ("sock", "target", "chunks", "tokens", "queued_bytes")

    def __init__(self, sock: socket.socket, target: int):
        self.sock = sock
        self.target = target
        self.chunks: deque[memoryview] = deque()
        # token completes when the chunk at that position has been written
        self.tokens: deque[tuple[int, int]] = deque()  # (chunk count still ahead incl. self, token)
        self.queued_bytes = 0


class SocketEndpoint(Endpoint):
    def __init__(self, node: int, n: int, config: TransportConfig):
        super().__init__(node, n, config)
        self.listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self.listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self.listener.bind(("127.0.0.1", 0))
        self.listener.listen(max(1, n))
        self.address = self.listener.getsockname()
        self.out: dict[int, _Outgoing] = {}
        self.incoming: dict[socket.socket, int] = {}
        self._rbuf: dict[socket.socket, bytearray] = {}
        self._selector = selectors.DefaultSelector()
        self._wake_r, self._wake_w = socket.socketpair()
        self._wake_r.setblocking(False)
        self._wake_w.setblocking(False)
        self._received: list[tuple[int, bytes]] = []
        self._pending_frames = 0
        self._closed = False

    # -- setup ---------------------------------------------------------------

    def _register(self) -> None:
        self._selector.register(self._wake_r, selectors.EVENT_READ, ("wake", None))
        for sock, src in self.incoming.items():
            sock.setblocking(False)
            self._rbuf[sock] = bytearray()
            self._selector.register(sock, selectors.EVENT_READ, ("in", src))
        for out in self.out.values():
            out.sock.setblocking(False)

    # -- sending ---------------------------------------------------------------

    def _queue(self, target: int, chunks: list[memoryview | bytes], msg: Message | None) -> int:
        self._check_target(target)
        out = self.out[target]
        limit = self.config.max_pending
        if limit is not None:
            if not self.config.block_on_full and len(out.tokens) >= limit:
                raise WouldBlock(f"connection {self.node}->{target} has {len(out.tokens)} unsent frames")
            deadline = time.monotonic() + self.config.sync_timeout_s
            while len(out.tokens) >= limit:
                if time.monotonic() > deadline:
                    raise WouldBlock(f"connection {self.node}->{target} stayed full")
                self._pump(0.01)
        token = self._token(msg)
        size = 0
        for c in chunks:
            view = memoryview(c).cast("B")
            out.chunks.append(view)
            size += len(view)
        out.tokens.append((len(out.chunks), token))
        out.queued_bytes += size
        self._pending_frames += 1
        self.stats.count_send(target, size - _LEN.size)
        self._flush(out)
        return token

    def post_send(self, target: int, msg: Message) -> int:
        header = msg.wire_header()
        return self._queue(target, [_LEN.pack(len(header) + msg.bytes_used) + header, msg.payload], msg)

    def post_frame(self, target: int, frame: bytes) -> int:
        return self._queue(target, [_LEN.pack(len(frame)) + bytes(frame)], None)

    def _flush(self, out: _Outgoing) -> None:
        written_chunks = 0
        while out.chunks:
            view = out.chunks[0]
            try:
                sent = out.sock.send(view)
            except BlockingIOError:
                break
            except OSError as exc:
                raise TransportFault(f"node {self.node}: send to {out.target} failed: {exc}", out.target) from exc
            out.queued_bytes -= sent
            if sent < len(view):
                out.chunks[0] = view[sent:]
                break
            out.chunks.popleft()
            written_chunks += 1
        if written_chunks:
            self._retire(out, written_chunks)
        self._update_interest(out)

    def _retire(self, out: _Outgoing, written: int) -> None:
        remaining = deque()
        for ahead, token in out.tokens:
            ahead -= written
            if ahead <= 0:
                self._pending_frames -= 1
                self._complete(token)
            else:
                remaining.append((ahead, token))
        out.tokens = remaining

    def _update_interest(self, out: _Outgoing) -> None:
        key = self._selector.get_map().get(out.sock)
        if out.chunks and key is None:
            self._selector.register(out.sock, selectors.EVENT_WRITE, ("out", out.target))
        elif not out.chunks and key is not None:
            self._selector.unregister(out.sock)

    def pending_sends(self) -> int:
        return self._pending_frames

    # -- receiving -------------------------------------------------------------

    def _read(self, sock: socket.socket, source: int) -> None:
        buf = self._rbuf[sock]
        try:
            data = sock.recv(_RECV_CHUNK)
        except BlockingIOError:
            return
        except OSError as exc:
            raise TransportFault(f"node {self.node}: receive from {source} failed: {exc}", source) from exc
        if not data:
            self._selector.unregister(sock)
            self.closed_peers.add(source)
            return
        buf += data
        pos = 0
        end = len(buf)
        while end - pos >= 4:
            (length,) = _LEN.unpack_from(buf, pos)
            if end - pos - 4 < length:
                break
            frame = bytes(buf[pos + 4 : pos + 4 + length])
            self._received.append((source, frame))
            self.stats.count_recv(source, length)
            pos += 4 + length
        if pos:
            del buf[:pos]

    def _pump(self, timeout: float | None) -> None:
        for key, _ in self._selector.select(timeout):
            role, peer = key.data
            if role == "wake":
                try:
                    while self._wake_r.recv(4096):
                        pass
                except BlockingIOError:
                    pass
            elif role == "in":
                self._read(key.fileobj, peer)
            else:
                self._flush(self.out[peer])

    def poll(self, timeout: float | None = 0.0, drain: bool = False):
        if not self._received and not self.completions.ready():
            self._pump(timeout)
        self._pump(0)
        frames, self._received = self._received, []
        return frames, self.completions.take(drain)

    def wakeup(self) -> None:
        try:
            self._wake_w.send(b"\0")
        except (BlockingIOError, OSError):
            pass

    def close(self) -> None:
        if self._closed:
            return
        self._closed = True
        deadline = time.monotonic() + 5.0
        while self._pending_frames and time.monotonic() < deadline:
            self._pump(0.01)
        try:
            self._selector.close()
        except Exception:
            pass
        for out in self.out.values():
            try:
                out.sock.shutdown(socket.SHUT_WR)
            except OSError:
                pass
            out.sock.close()
        for sock in self.incoming:
            sock.close()
        self.listener.close()
        self._wake_r.close()
        self._wake_w.close()


class SocketMesh(Mesh):
    def __init__(self, n: int, config: TransportConfig):
        super().__init__(n, config)
        self.endpoints = []
        try:
            self.endpoints = [SocketEndpoint(i, n, config) for i in range(n)]
            for i, ep in enumerate(self.endpoints):
                for j, peer in enumerate(self.endpoints):
                    if i == j:
                        continue
                    sock = socket.create_connection(peer.address, timeout=5.0)
                    sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
                    sock.setsockopt(socket.SOL_SOCKET, socket.SO_SNDBUF, _SOCK_BUF)
                    sock.sendall(_HELLO.pack(i))
                    ep.out[j] = _Outgoing(sock, j)
            for ep in self.endpoints:
                ep.listener.settimeout(5.0)
                for _ in range(n - 1):
                    conn, _ = ep.listener.accept()
                    conn.settimeout(5.0)
                    conn.setsockopt(socket.SOL_SOCKET, socket.SO_RCVBUF, _SOCK_BUF)
                    hello = b""
                    while len(hello) < _HELLO.size:
                        chunk = conn.recv(_HELLO.size - len(hello))
                        if not chunk:
                            raise StartupError("peer closed during handshake")
                        hello += chunk
                    (src,) = _HELLO.unpack(hello)
                    ep.incoming[conn] = src
            for ep in self.endpoints:
                ep._register()
        except OSError as exc:
            self.close()
            raise StartupError(f"could not open socket mesh of {n} nodes: {exc}") from exc

    @property
    def connections(self) -> int:
        return sum(len(ep.out) for ep in self.endpoints)
