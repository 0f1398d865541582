"""Socket transport: one OS process per rank, length-prefixed frames.

Connection setup: every rank dials every higher rank and sends a hello
frame naming itself; lower ranks are discovered by accepting and reading
the hello.  After setup each pair of ranks shares one TCP connection used
in both directions.

Each peer connection owns two threads on each side: a send worker that
applies the modeled flight delay and writes frames to the socket in
trigger order, and a receive loop that applies incoming writes to local
segments and fires their notifications.  The receiving application thread
never performs a transport call for a transfer to complete; it only polls
notification slots.
"""

from __future__ import annotations

import queue
import socket
import threading
import time

from ..errors import ConfigError, ProtocolError, RoutingError, TransportError
from . import wire
from .base import (
    CONTROL_SEGMENT,
    LatencyModel,
    Segment,
    Ticket,
    TransportBase,
    WriteRequest,
    completed_ticket,
)

_CONNECT_TIMEOUT = 30.0
_BARRIER_TIMEOUT = 120.0
_POLL_SLEEP = 2e-5


def _recv_exact(sock: socket.socket, n: int) -> bytearray | None:
    """Read exactly n bytes; None on clean EOF before the first byte."""
    data = bytearray(n)
    view = memoryview(data)
    got = 0
    while got < n:
        r = sock.recv_into(view[got:], n - got)
        if r == 0:
            if got == 0:
                return None
            raise TransportError(f"connection closed mid-frame ({got}/{n} bytes)")
        got += r
    return data


class _SendWorker:
    """Serializes outbound frames for one peer, applying flight delay."""

    def __init__(self, transport: "TcpTransport", peer: int, sock: socket.socket):
        self._transport = transport
        self._sock = sock
        self._queue: queue.Queue = queue.Queue()
        self._thread = threading.Thread(
            target=self._run, name=f"tcp-send-{transport.rank}-{peer}", daemon=True
        )
        self._thread.start()

    def submit(self, header: bytes, payload, size: int, ticket: Ticket) -> None:
        self._queue.put((header, payload, size, ticket))

    def _run(self) -> None:
        while True:
            item = self._queue.get()
            if item is None:
                return
            header, payload, size, ticket = item
            try:
                delay = self._transport.latency.delay_seconds(size)
                if delay > 0:
                    time.sleep(delay)
                self._sock.sendall(header + bytes(payload) if size else header)
                ticket.complete()
            except Exception as exc:
                ticket.fail(exc)
                self._transport._mark_failed(exc)

    def stop(self) -> None:
        self._queue.put(None)
        self._thread.join(timeout=5)


class TcpTransport(TransportBase):
    """One rank's endpoint of a fully connected localhost/TCP mesh."""

    def __init__(
        self,
        rank: int,
        world_size: int,
        listener: socket.socket | None,
        addresses: list[tuple[str, int]],
        latency: LatencyModel | None = None,
    ):
        super().__init__(rank, world_size, latency)
        if world_size > 1 and len(addresses) != world_size:
            raise ConfigError(f"need {world_size} addresses, got {len(addresses)}")
        self._failure: Exception | None = None
        self._closing = False
        # peers that closed their side cleanly (EOF on a frame boundary);
        # everything they ever sent has already been applied by then
        self._peers_closed: set[int] = set()
        self._peers: dict[int, socket.socket] = {}
        self._senders: dict[int, _SendWorker] = {}
        self._recv_threads: list[threading.Thread] = []
        self._barrier_seq = 0
        # control segment for barrier traffic; bypasses segment_create on
        # purpose, the id is reserved and exists before any peer can write.
        self._segments[CONTROL_SEGMENT] = Segment(CONTROL_SEGMENT, 1, 64)
        if world_size > 1:
            if listener is None:
                raise ConfigError("a bound listening socket is required for world_size > 1")
            self._connect_mesh(listener, addresses)

    # -- mesh setup ---------------------------------------------------------
    def _connect_mesh(self, listener: socket.socket, addresses: list[tuple[str, int]]) -> None:
        listener.settimeout(_CONNECT_TIMEOUT)
        try:
            for peer in range(self.rank + 1, self.world_size):
                sock = socket.create_connection(addresses[peer], timeout=_CONNECT_TIMEOUT)
                sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
                sock.sendall(wire.pack_hello(self.rank))
                self._peers[peer] = sock
            for _ in range(self.rank):
                sock, _addr = listener.accept()
                sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
                hello = _recv_exact(sock, wire.HELLO_SIZE)
                if hello is None:
                    raise TransportError("peer closed connection before hello")
                peer = wire.unpack_hello(bytes(hello))
                if not (0 <= peer < self.rank) or peer in self._peers:
                    raise ProtocolError(f"unexpected hello from rank {peer}")
                self._peers[peer] = sock
        except (OSError, socket.timeout) as exc:
            raise TransportError(f"mesh setup failed on rank {self.rank}: {exc}") from exc
        finally:
            listener.close()
        for peer, sock in self._peers.items():
            sock.settimeout(None)
            self._senders[peer] = _SendWorker(self, peer, sock)
            t = threading.Thread(
                target=self._recv_loop,
                args=(peer, sock),
                name=f"tcp-recv-{self.rank}-{peer}",
                daemon=True,
            )
            t.start()
            self._recv_threads.append(t)

    # -- receive path -------------------------------------------------------
    def _recv_loop(self, peer: int, sock: socket.socket) -> None:
        try:
            while True:
                header = _recv_exact(sock, wire.HEADER_SIZE)
                if header is None:
                    # clean close: the frame stream ended on a boundary, so
                    # every notification the peer fired is already visible.
                    # Record it per peer instead of failing the transport;
                    # waits that still depend on this peer raise themselves.
                    self._peers_closed.add(peer)
                    return
                fh = wire.unpack_write_notify(bytes(header))
                payload = b""
                if fh.payload_size:
                    got = _recv_exact(sock, fh.payload_size)
                    if got is None:
                        raise TransportError("connection closed before payload")
                    payload = got
                seg = self.segment(fh.dest_segment)
                seg.write(fh.dest_offset, payload)
                seg.notifications.fire(fh.notification_id, fh.notification_value)
        except Exception as exc:
            if not self._closing:
                self._mark_failed(exc)

    def _mark_failed(self, exc: Exception) -> None:
        if self._failure is None:
            self._failure = exc

    def _check_failed(self) -> None:
        if self._failure is not None:
            raise TransportError(f"transport failed: {self._failure}") from self._failure

    # -- one-sided ops ------------------------------------------------------
    def write_notify(self, req: WriteRequest) -> Ticket:
        self._check_failed()
        src = self._validate_request(req)
        view = src.data[req.local_offset : req.local_offset + req.size]
        if req.rank == self.rank:
            seg = self.segment(req.remote_segment)
            seg.check_range(req.remote_offset, req.size)
            if req.size:
                seg.data[req.remote_offset : req.remote_offset + req.size] = view
            seg.notifications.fire(req.notification_id, req.notification_value)
            return completed_ticket()
        sender = self._senders.get(req.rank)
        if sender is None:
            raise RoutingError(f"rank {req.rank} outside world of size {self.world_size}")
        header = wire.pack_write_notify(
            req.remote_segment,
            req.remote_offset,
            req.size,
            req.notification_id,
            req.notification_value,
        )
        ticket = Ticket()
        sender.submit(header, view, req.size, ticket)
        return ticket

    def notify_poll(self, segment_id: int, first_id: int, count: int) -> list[tuple[int, int]]:
        hits = self.segment(segment_id).notifications.poll(first_id, count)
        if not hits:
            # only surface peer loss when there is nothing left to consume;
            # already-delivered data stays readable during teardown.
            self._check_failed()
            if self._peers_closed and not self._closing:
                gone = min(self._peers_closed)
                raise TransportError(f"rank {gone} closed its connection")
        return hits

    # -- collective ---------------------------------------------------------
    def barrier(self) -> None:
        """Dissemination barrier built from size-0 notify writes.

        Round t: tell rank (r + 2^t) mod s, wait for (r - 2^t) mod s.  Slots
        alternate by barrier parity so a rank one barrier ahead can never
        overwrite a flag its partner has not consumed yet.
        """
        self.barrier_calls += 1
        if self.world_size == 1:
            return
        self._barrier_seq += 1
        seq = self._barrier_seq
        rounds = (self.world_size - 1).bit_length()
        control = self._segments[CONTROL_SEGMENT]
        for t in range(rounds):
            dst = (self.rank + (1 << t)) % self.world_size
            src = (self.rank - (1 << t)) % self.world_size
            nid = 1 + 2 * t + (seq & 1)
            self.write_notify(
                WriteRequest(CONTROL_SEGMENT, 0, dst, CONTROL_SEGMENT, 0, 0, nid, seq)
            )
            deadline = time.monotonic() + _BARRIER_TIMEOUT
            while True:
                got = control.notifications.reset(nid)
                if got == seq:
                    break
                if got != 0:
                    raise ProtocolError(f"barrier slot held {got}, expected {seq}")
                self._check_failed()
                if src in self._peers_closed:
                    # a clean close delivers everything first, so one more
                    # look at the slot decides whether the peer made it
                    got = control.notifications.reset(nid)
                    if got == seq:
                        break
                    raise TransportError(
                        f"rank {src} closed its connection before completing the barrier"
                    )
                if time.monotonic() > deadline:
                    raise TransportError(f"barrier timed out after {_BARRIER_TIMEOUT} s")
                time.sleep(_POLL_SLEEP)

    # -- lifecycle ----------------------------------------------------------
    def close(self) -> None:
        self._closing = True
        for sender in self._senders.values():
            sender.stop()
        for sock in self._peers.values():
            try:
                sock.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            sock.close()
        for t in self._recv_threads:
            t.join(timeout=5)


def bind_listener(host: str = "127.0.0.1", port: int = 0) -> socket.socket:
    """Bound, listening socket; the assigned port is in getsockname()."""
    sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    sock.bind((host, port))
    sock.listen(64)
    return sock
