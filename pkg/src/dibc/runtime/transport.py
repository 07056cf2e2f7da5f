"""Message channels: in-process queues and length-prefixed TCP frames.

Both transports move the same encoded frames produced by
:mod:`dibc.runtime.messages`, so pipeline behavior and byte accounting are
identical across them.  The master side wraps each channel in a
:class:`MeteredChannel` that records frame counts and byte volumes per
message kind, direction and pipeline phase.
"""

import queue
import socket
import struct
import threading
from collections import defaultdict

from ..errors import TransportError
from .messages import (
    FRAME_HEADER,
    PROTOCOL_MAGIC,
    PROTOCOL_VERSION,
    Kind,
    Message,
    decode_body,
    encode_frame,
)


class Meter:
    """Accumulates message counts and byte volumes.

    Keys are (phase, kind name, direction); direction is 'to_worker' or
    'to_master'.
    """

    def __init__(self):
        self.phase = "setup"
        self.records = defaultdict(lambda: {"frames": 0, "bytes": 0})
        self.lock = threading.Lock()

    def set_phase(self, phase):
        self.phase = phase

    def record(self, kind, direction, n_bytes):
        with self.lock:
            rec = self.records[(self.phase, kind.name, direction)]
            rec["frames"] += 1
            rec["bytes"] += n_bytes

    def master_bound_bytes(self, phases=None):
        total = 0
        for (phase, _, direction), rec in self.records.items():
            if direction == "to_master" and (phases is None or phase in phases):
                total += rec["bytes"]
        return total

    def summary(self):
        out = {}
        for (phase, kind, direction), rec in sorted(self.records.items()):
            out.setdefault(phase, {}).setdefault(kind, {})[direction] = dict(rec)
        return out


class InProcChannel:
    """One end of a pair of in-memory frame queues."""

    def __init__(self, inbox, outbox):
        self.inbox = inbox
        self.outbox = outbox
        self.closed = False

    @staticmethod
    def pair():
        a = queue.Queue()
        b = queue.Queue()
        return InProcChannel(a, b), InProcChannel(b, a)

    def send_bytes(self, frame):
        if self.closed:
            raise TransportError("channel is closed")
        self.outbox.put(frame)

    def recv_bytes(self):
        frame = self.inbox.get()
        if frame is None:
            raise TransportError("channel closed by peer")
        return frame

    def close(self):
        if not self.closed:
            self.closed = True
            self.outbox.put(None)


class SocketChannel:
    """Length-prefixed frames over a connected socket."""

    def __init__(self, sock):
        self.sock = sock

    def _recv_exact(self, n):
        chunks = []
        remaining = n
        while remaining > 0:
            chunk = self.sock.recv(remaining)
            if not chunk:
                raise TransportError("connection closed while reading")
            chunks.append(chunk)
            remaining -= len(chunk)
        return b"".join(chunks)

    def send_bytes(self, frame):
        try:
            self.sock.sendall(frame)
        except OSError as exc:
            raise TransportError(f"send failed: {exc}") from exc

    def recv_bytes(self):
        header = self._recv_exact(FRAME_HEADER.size)
        (length,) = FRAME_HEADER.unpack(header)
        return header + self._recv_exact(length)

    def close(self):
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()


class MeteredChannel:
    """Master-side channel wrapper: encodes, meters and enforces the
    no-raw-rows rule after the shard assignment."""

    def __init__(self, channel, meter, guard=None):
        self.channel = channel
        self.meter = meter
        self.guard = guard

    def send(self, msg):
        if self.guard is not None:
            self.guard(msg, "to_worker")
        frame = encode_frame(msg)
        self.meter.record(msg.kind, "to_worker", len(frame))
        self.channel.send_bytes(frame)

    def recv(self):
        frame = self.channel.recv_bytes()
        msg = decode_body(frame[FRAME_HEADER.size:])
        self.meter.record(msg.kind, "to_master", len(frame))
        if self.guard is not None:
            self.guard(msg, "to_master")
        error = msg.payload.get("error") if isinstance(msg.payload, dict) else None
        if error is not None:
            raise TransportError(
                f"worker reported error (code {error['code']}): {error['message']}"
            )
        return msg

    def request(self, msg):
        self.send(msg)
        return self.recv()

    def close(self):
        self.channel.close()


def raw_row_guard(msg, direction):
    """Transport-level assertion: after the shard assignment no message may
    carry raw data rows."""
    if msg.kind == Kind.SHARD_ASSIGN:
        return
    if "shard" in msg.payload or "points" in msg.payload:
        raise TransportError(
            f"raw rows attempted to cross the transport in {msg.kind.name}"
        )


class WorkerPool:
    """Master-side handle over R worker channels, id-ordered."""

    def __init__(self, channels, meter):
        self.meter = meter
        self.channels = dict(channels)

    @property
    def worker_ids(self):
        return sorted(self.channels)

    def send(self, worker_id, msg):
        self.channels[worker_id].send(msg)

    def recv(self, worker_id):
        return self.channels[worker_id].recv()

    def request(self, worker_id, msg):
        return self.channels[worker_id].request(msg)

    def broadcast(self, make_msg):
        for worker_id in self.worker_ids:
            self.send(worker_id, make_msg(worker_id))

    def gather(self, expected_kind):
        """One reply per worker, read in worker-id order."""
        out = {}
        for worker_id in self.worker_ids:
            msg = self.recv(worker_id)
            if msg.kind != expected_kind:
                raise TransportError(
                    f"expected {expected_kind.name} from worker {worker_id}, "
                    f"got {msg.kind.name}"
                )
            out[worker_id] = msg
        return out

    def shutdown(self):
        for worker_id in self.worker_ids:
            try:
                self.send(worker_id, Message(Kind.SHUTDOWN))
            except TransportError:
                pass
        for channel in self.channels.values():
            channel.close()


def launch_inproc_workers(n_workers, meter, guard=raw_row_guard):
    """Spawn worker loops on threads connected by in-process channels.

    Returns (pool, workers, threads); the worker objects are exposed for
    white-box tests.
    """
    from .worker import WorkerRuntime

    channels = {}
    workers = {}
    threads = []
    for r in range(1, n_workers + 1):
        master_end, worker_end = InProcChannel.pair()
        worker = WorkerRuntime(worker_end)
        thread = threading.Thread(
            target=worker.run, name=f"dibc-worker-{r}", daemon=True
        )
        thread.start()
        channels[r] = MeteredChannel(master_end, meter, guard)
        workers[r] = worker
        threads.append(thread)
    return WorkerPool(channels, meter), workers, threads


def _worker_socket_main(host, port, worker_id):
    from .worker import WorkerRuntime

    sock = socket.create_connection((host, port))
    sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
    hello = PROTOCOL_MAGIC + struct.pack("<HI", PROTOCOL_VERSION, worker_id)
    sock.sendall(hello)
    WorkerRuntime(SocketChannel(sock)).run()


def launch_tcp_workers(n_workers, meter, guard=raw_row_guard, host="127.0.0.1"):
    """Listen on an ephemeral port and spawn local socket workers.

    ``dibc.runtime.transport.worker_main`` runs the same loop for workers
    started out of process.
    """
    server = socket.create_server((host, 0))
    port = server.getsockname()[1]
    threads = []
    for r in range(1, n_workers + 1):
        thread = threading.Thread(
            target=_worker_socket_main,
            args=(host, port, r),
            name=f"dibc-tcp-worker-{r}",
            daemon=True,
        )
        thread.start()
        threads.append(thread)
    channels = {}
    for _ in range(n_workers):
        conn, _addr = server.accept()
        conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        raw = b""
        while len(raw) < len(PROTOCOL_MAGIC) + 6:
            chunk = conn.recv(len(PROTOCOL_MAGIC) + 6 - len(raw))
            if not chunk:
                raise TransportError("worker hello truncated")
            raw += chunk
        if raw[: len(PROTOCOL_MAGIC)] != PROTOCOL_MAGIC:
            raise TransportError("bad protocol magic in worker hello")
        version, worker_id = struct.unpack("<HI", raw[len(PROTOCOL_MAGIC):])
        if version != PROTOCOL_VERSION:
            raise TransportError(f"protocol version mismatch: {version}")
        channels[worker_id] = MeteredChannel(SocketChannel(conn), meter, guard)
    server.close()
    return WorkerPool(channels, meter), {}, threads


def worker_main(host, port, worker_id):
    """Entry point for running one worker against a remote master."""
    _worker_socket_main(host, port, worker_id)
