"""All-reduce-sum for distributed boosting, with communication accounting.

Two transports share one contract: every worker contributes a float64 vector
per ``(opcode, round)`` and every worker gets back the elementwise sum,
accumulated in ascending worker id so both transports are bit-identical.

TCP uses a star topology around a coordinator. Frame layout (little-endian)::

    b"GBUN" | version u8 | opcode u8 | worker_id u16 | round u32 | count u32 | count x f64

A worker opens with a handshake frame (opcode 0, count 0) and the
coordinator answers in kind.
"""

from __future__ import annotations

import json
import logging
import socket
import struct
import threading
import time
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

MAGIC = b"GBUN"
VERSION = 1
HEADER = struct.Struct("<4sBBHII")
HEADER_SIZE = HEADER.size  # 16

HANDSHAKE = 0
NORM_STATS = 1
SYSTEM_AB = 2
METRICS = 3  # diagnostic loss sums, kept out of the payload counters
SHUTDOWN = 0xFE
ABORT = 0xFF

OPCODE_NAMES = {NORM_STATS: "NORM_STATS", SYSTEM_AB: "SYSTEM_AB", METRICS: "METRICS"}
COORDINATOR_ID = 0xFFFF
DEFAULT_TIMEOUT = 30.0


class CollectiveError(RuntimeError):
    pass


class ProtocolError(CollectiveError):
    pass


@dataclass
class ReducePayload:
    opcode: int
    round: int
    values: np.ndarray

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float64).reshape(-1)


def norm_stats_length(K: int) -> int:
    return 2 * K + 1


def system_ab_length(K: int) -> int:
    return K * K + K


def predicted_comm_values(K: int, num_classes: int = 1) -> int:
    """Values each worker sends per round: one NORM_STATS plus one SYSTEM_AB per class."""
    if K < 1:
        raise ValueError("K must be >= 1")
    return norm_stats_length(K) + num_classes * system_ab_length(K)


def _sum_in_rank_order(payloads: list[ReducePayload]) -> ReducePayload:
    first = payloads[0]
    for p in payloads[1:]:
        if p.opcode != first.opcode:
            raise ProtocolError(f"opcode mismatch: {first.opcode} vs {p.opcode}")
        if p.round != first.round:
            raise ProtocolError(f"round mismatch: {first.round} vs {p.round}")
        if len(p.values) != len(first.values):
            raise ProtocolError(
                f"length mismatch: {len(first.values)} vs {len(p.values)}"
            )
    total = first.values.copy()
    for p in payloads[1:]:
        total += p.values
    return ReducePayload(first.opcode, first.round, total)


@dataclass
class RoundCounters:
    payload_values_sent: int = 0
    payload_values_received: int = 0
    aux_values_sent: int = 0
    aux_values_received: int = 0
    frames: int = 0
    bytes_on_wire: int = 0
    reduces: dict = field(default_factory=lambda: defaultdict(int))


class CommLedger:
    """Per-round, per-worker traffic counters; safe to share between threads."""

    def __init__(self):
        self._lock = threading.Lock()
        self.rounds: dict[int, dict[int, RoundCounters]] = {}
        self.control: dict[int, RoundCounters] = {}
        self.meta: dict = {}

    def _counters(self, worker, rnd):
        return self.rounds.setdefault(rnd, {}).setdefault(worker, RoundCounters())

    def record(self, worker: int, payload: ReducePayload, frames=0, bytes_on_wire=0):
        n = len(payload.values)
        with self._lock:
            c = self._counters(worker, payload.round)
            if payload.opcode in (NORM_STATS, SYSTEM_AB):
                c.payload_values_sent += n
                c.payload_values_received += n
            else:
                c.aux_values_sent += n
                c.aux_values_received += n
            c.frames += frames
            c.bytes_on_wire += bytes_on_wire
            c.reduces[OPCODE_NAMES.get(payload.opcode, str(payload.opcode))] += 1

    def record_control(self, worker: int, frames: int, bytes_on_wire: int):
        with self._lock:
            c = self.control.setdefault(worker, RoundCounters())
            c.frames += frames
            c.bytes_on_wire += bytes_on_wire

    def to_dict(self) -> dict:
        def enc(c: RoundCounters):
            d = {k: getattr(c, k) for k in (
                "payload_values_sent", "payload_values_received", "aux_values_sent",
                "aux_values_received", "frames", "bytes_on_wire")}
            d["reduces"] = dict(sorted(c.reduces.items()))
            return d

        with self._lock:
            return {
                "header_size": HEADER_SIZE,
                "meta": dict(self.meta),
                "rounds": {
                    str(r): {str(w): enc(c) for w, c in sorted(ws.items())}
                    for r, ws in sorted(self.rounds.items())
                },
                "control": {str(w): enc(c) for w, c in sorted(self.control.items())},
            }

    @classmethod
    def from_dict(cls, d: dict) -> "CommLedger":
        led = cls()
        try:
            led.meta = dict(d.get("meta", {}))
            for r, ws in d["rounds"].items():
                for w, c in ws.items():
                    rc = led._counters(int(w), int(r))
                    for k, v in c.items():
                        if k == "reduces":
                            rc.reduces.update({str(a): int(b) for a, b in v.items()})
                        elif hasattr(rc, k):
                            setattr(rc, k, int(v))
                        else:
                            raise KeyError(k)
            for w, c in d.get("control", {}).items():
                rc = led.control.setdefault(int(w), RoundCounters())
                rc.frames, rc.bytes_on_wire = int(c["frames"]), int(c["bytes_on_wire"])
        except (KeyError, TypeError, ValueError, AttributeError) as e:
            raise ValueError(f"malformed communication ledger: {e!r}") from None
        return led

    def dump(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "CommLedger":
        with open(path) as fh:
            try:
                d = json.load(fh)
            except json.JSONDecodeError as e:
                raise ValueError(f"malformed communication ledger: {e}") from None
        if not isinstance(d, dict):
            raise ValueError("malformed communication ledger: not an object")
        return cls.from_dict(d)


def ledger_report(ledger: CommLedger) -> list[dict]:
    """One row per round: per-worker counters plus totals across workers."""
    rows = []
    for rnd, workers in sorted(ledger.rounds.items()):
        per_worker = {w: c for w, c in sorted(workers.items())}
        rows.append({
            "round": rnd,
            "workers": len(per_worker),
            "payload_values_sent": {w: c.payload_values_sent for w, c in per_worker.items()},
            "payload_values_received": {w: c.payload_values_received for w, c in per_worker.items()},
            "frames": {w: c.frames for w, c in per_worker.items()},
            "bytes_on_wire": {w: c.bytes_on_wire for w, c in per_worker.items()},
            "reduces": {w: dict(c.reduces) for w, c in per_worker.items()},
            "total_payload_values_sent": sum(c.payload_values_sent for c in per_worker.values()),
            "total_bytes_on_wire": sum(c.bytes_on_wire for c in per_worker.values()),
        })
    return rows


class Communicator:
    rank = 0
    world_size = 1
    ledger: CommLedger | None = None

    def allreduce_sum(self, payload: ReducePayload) -> ReducePayload:
        raise NotImplementedError

    def close(self, abort: bool = False):
        pass


class InProcessGroup:
    """Barrier rendezvous for ``world_size`` threads in one process."""

    def __init__(self, world_size: int, timeout: float = DEFAULT_TIMEOUT,
                 ledger: CommLedger | None = None):
        if world_size < 1:
            raise ValueError("world_size must be >= 1")
        self.world_size = world_size
        self.ledger = ledger
        self._slots: list[ReducePayload | None] = [None] * world_size
        self._barrier = threading.Barrier(world_size, timeout=timeout)

    def communicator(self, rank: int) -> "InProcessCommunicator":
        return InProcessCommunicator(self, rank)

    def abort(self):
        self._barrier.abort()

    def _wait(self):
        try:
            self._barrier.wait()
        except threading.BrokenBarrierError:
            raise CollectiveError("in-process all-reduce aborted or timed out") from None

    def _allreduce(self, rank: int, payload: ReducePayload) -> ReducePayload:
        self._slots[rank] = payload
        self._wait()
        try:
            out = _sum_in_rank_order(list(self._slots))
        finally:
            self._wait()
        if self.ledger is not None:
            self.ledger.record(rank, payload)
        return out


class InProcessCommunicator(Communicator):
    def __init__(self, group: InProcessGroup, rank: int):
        if not 0 <= rank < group.world_size:
            raise ValueError(f"rank {rank} outside [0, {group.world_size})")
        self.group = group
        self.rank = rank
        self.world_size = group.world_size
        self.ledger = group.ledger

    def allreduce_sum(self, payload):
        return self.group._allreduce(self.rank, payload)


def encode_frame(opcode: int, worker_id: int, rnd: int, values=None) -> bytes:
    vals = np.zeros(0) if values is None else np.asarray(values, dtype="<f8").reshape(-1)
    return HEADER.pack(MAGIC, VERSION, opcode, worker_id, rnd, len(vals)) + vals.tobytes()


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        try:
            chunk = sock.recv(n - len(buf))
        except socket.timeout:
            raise CollectiveError("timed out waiting for peer") from None
        except OSError as e:
            raise CollectiveError(f"connection failed: {e}") from None
        if not chunk:
            raise CollectiveError("peer closed the connection")
        buf += chunk
    return bytes(buf)


def read_frame(sock: socket.socket):
    """Return ``(opcode, worker_id, round, values)`` and the frame size in bytes."""
    magic, version, opcode, wid, rnd, count = HEADER.unpack(_recv_exact(sock, HEADER_SIZE))
    if magic != MAGIC:
        raise ProtocolError(f"bad frame magic {magic!r}")
    if version != VERSION:
        raise ProtocolError(f"unsupported wire version {version}")
    body = _recv_exact(sock, 8 * count) if count else b""
    values = np.frombuffer(body, dtype="<f8").astype(np.float64)
    return (opcode, wid, rnd, values), HEADER_SIZE + len(body)


def _send(sock: socket.socket, data: bytes):
    try:
        sock.sendall(data)
    except socket.timeout:
        raise CollectiveError("timed out sending to peer") from None
    except OSError as e:
        raise CollectiveError(f"connection failed: {e}") from None


def parse_address(addr: str) -> tuple[str, int]:
    host, sep, port = addr.rpartition(":")
    if not sep or not host:
        raise ValueError(f"address must look like host:port, got {addr!r}")
    return host, int(port)


class TcpCoordinator:
    """Star-topology reducer: gathers one frame per worker, sums, broadcasts."""

    def __init__(self, host: str = "127.0.0.1", port: int = 0, world_size: int = 1,
                 timeout: float = DEFAULT_TIMEOUT):
        self.world_size = world_size
        self.timeout = timeout
        self._server = socket.create_server((host, port))
        self._server.settimeout(timeout)
        self.address = self._server.getsockname()[:2]
        self.error: Exception | None = None
        self._thread: threading.Thread | None = None

    @property
    def address_str(self) -> str:
        return f"{self.address[0]}:{self.address[1]}"

    def start(self) -> "TcpCoordinator":
        self._thread = threading.Thread(target=self._run_safely, name="gbun-coordinator", daemon=True)
        self._thread.start()
        return self

    def join(self, timeout=None):
        if self._thread is not None:
            self._thread.join(timeout)

    def _run_safely(self):
        try:
            self.serve()
        except Exception as e:  # surfaced through .error; workers see the closed sockets
            self.error = e
            log.error("coordinator stopped: %s", e)

    def _accept_all(self) -> list[socket.socket]:
        conns: dict[int, socket.socket] = {}
        deadline = time.monotonic() + self.timeout
        try:
            while len(conns) < self.world_size:
                if time.monotonic() > deadline:
                    raise CollectiveError("timed out waiting for workers to join")
                try:
                    sock, _ = self._server.accept()
                except socket.timeout:
                    raise CollectiveError("timed out waiting for workers to join") from None
                sock.settimeout(self.timeout)
                sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
                (op, wid, _, vals), _ = read_frame(sock)
                if op != HANDSHAKE or len(vals):
                    sock.close()
                    raise ProtocolError("expected a handshake frame")
                if wid >= self.world_size or wid in conns:
                    sock.close()
                    raise ProtocolError(f"bad or duplicate worker id {wid}")
                conns[wid] = sock
            for wid, sock in conns.items():
                _send(sock, encode_frame(HANDSHAKE, COORDINATOR_ID, 0))
        except Exception:
            for s in conns.values():
                s.close()
            raise
        return [conns[w] for w in range(self.world_size)]

    def serve(self):
        try:
            conns = self._accept_all()
        finally:
            self._server.close()
        try:
            while True:
                frames = []
                for sock in conns:
                    (op, wid, rnd, vals), _ = read_frame(sock)
                    frames.append((op, rnd, vals))
                ops = {f[0] for f in frames}
                if ops == {SHUTDOWN}:
                    return
                if len(ops) != 1 or SHUTDOWN in ops or HANDSHAKE in ops:
                    raise ProtocolError(f"workers sent mismatched opcodes {sorted(ops)}")
                total = _sum_in_rank_order([ReducePayload(*f) for f in frames])
                out = encode_frame(total.opcode, COORDINATOR_ID, total.round, total.values)
                for sock in conns:
                    _send(sock, out)
        except Exception:
            for sock in conns:
                try:
                    sock.sendall(encode_frame(ABORT, COORDINATOR_ID, 0))
                except OSError:
                    pass
            raise
        finally:
            for sock in conns:
                sock.close()


class TcpCommunicator(Communicator):
    def __init__(self, address: str | tuple, rank: int, world_size: int,
                 timeout: float = DEFAULT_TIMEOUT, ledger: CommLedger | None = None):
        if not 0 <= rank < world_size:
            raise ValueError(f"rank {rank} outside [0, {world_size})")
        self.rank = rank
        self.world_size = world_size
        self.timeout = timeout
        self.ledger = ledger
        host, port = parse_address(address) if isinstance(address, str) else address
        self.sock = self._connect(host, port)
        hello = encode_frame(HANDSHAKE, rank, 0)
        _send(self.sock, hello)
        (op, _, _, vals), nbytes = read_frame(self.sock)
        if op != HANDSHAKE or len(vals):
            raise ProtocolError("coordinator did not acknowledge the handshake")
        if ledger is not None:
            ledger.record_control(rank, 2, len(hello) + nbytes)

    def _connect(self, host, port) -> socket.socket:
        deadline = time.monotonic() + self.timeout
        while True:
            try:
                sock = socket.create_connection((host, port), timeout=self.timeout)
                break
            except OSError as e:
                if time.monotonic() > deadline:
                    raise CollectiveError(f"cannot reach coordinator {host}:{port}: {e}") from None
                time.sleep(0.05)
        sock.settimeout(self.timeout)
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        return sock

    def allreduce_sum(self, payload):
        frame = encode_frame(payload.opcode, self.rank, payload.round, payload.values)
        _send(self.sock, frame)
        (op, _, rnd, vals), nbytes = read_frame(self.sock)
        if op == ABORT:
            raise CollectiveError("coordinator aborted the reduce")
        if op != payload.opcode or rnd != payload.round:
            raise ProtocolError(f"reply ({op}, {rnd}) does not match request "
                                f"({payload.opcode}, {payload.round})")
        if len(vals) != len(payload.values):
            raise ProtocolError("reply length does not match request")
        if self.ledger is not None:
            self.ledger.record(self.rank, payload, frames=2, bytes_on_wire=len(frame) + nbytes)
        return ReducePayload(op, rnd, vals)

    def close(self, abort: bool = False):
        if abort:
            self.sock.close()
            return
        try:
            frame = encode_frame(SHUTDOWN, self.rank, 0)
            self.sock.sendall(frame)
            if self.ledger is not None:
                self.ledger.record_control(self.rank, 1, len(frame))
        except OSError:
            pass
        finally:
            self.sock.close()
