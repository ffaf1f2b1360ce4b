"""Length-prefixed wire protocol, PIR servers, concurrent client and benchmark.

Every message is a frame::

    magic "DRPIR1" | msg_type u8 | length u32 (big-endian) | payload

QUERY payload: ``query_id u32 | num_ads u16 | depth u8 | depth x u32 level
lengths | share bytes``.  Share bytes are, for each ad and each level, the
level vector packed into ``ceil(r_i * w / 8)`` bytes.

RESPONSE payload: ``query_id u32 | num_ads u16 | words u32 | reply bytes``,
one packed ``s``-word vector per ad.

DB_INFO payload is the 30-byte database file header, verbatim.  ERROR
payload is ``reason u8 | utf-8 message``.
"""
from __future__ import annotations

import csv
import itertools
import logging
import socket
import socketserver
import statistics
import struct
import threading
import time
from concurrent.futures import FIRST_COMPLETED, ThreadPoolExecutor, wait
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import pir_core
from .errors import (BadDepth, DualRingError, FormatError, ProtocolError, QuorumUnreachable,
                     ShapeMismatch)
from .gf import pack_words, packed_len, unpack_words
from .pir_core import (DatabaseMatrix, DbShape, PirParams, QueryShare, ServerResponse,
                       cost_model, wire_dims)

log = logging.getLogger(__name__)

MAGIC = b"DRPIR1"
HEADER = struct.Struct(">6sBI")

QUERY = 0x01
RESPONSE = 0x02
DB_INFO = 0x03
DB_INFO_REQ = 0x04
ERROR = 0x7F
MSG_TYPES = {QUERY, RESPONSE, DB_INFO, DB_INFO_REQ, ERROR}

# ERROR reason codes
ERR_MALFORMED = 0x01
ERR_SHAPE = 0x02
ERR_UNKNOWN_TYPE = 0x03
ERR_BAD_DEPTH = 0x04
ERR_INTERNAL = 0x05

MAX_PAYLOAD = 1 << 31

assert HEADER.size == pir_core.FRAME_HEADER_BYTES


@dataclass(frozen=True)
class Frame:
    msg_type: int
    payload: bytes = b""

    def serialize(self) -> bytes:
        return HEADER.pack(MAGIC, self.msg_type, len(self.payload)) + self.payload

    @property
    def wire_size(self) -> int:
        return HEADER.size + len(self.payload)

    @classmethod
    def parse(cls, buf: bytes) -> "Frame":
        if len(buf) < HEADER.size:
            raise ProtocolError("frame shorter than header", ERR_MALFORMED)
        magic, msg_type, length = HEADER.unpack_from(buf)
        if magic != MAGIC:
            raise ProtocolError(f"bad frame magic {magic!r}", ERR_MALFORMED)
        if len(buf) - HEADER.size != length:
            raise ProtocolError(
                f"declared length {length} but {len(buf) - HEADER.size} payload bytes",
                ERR_MALFORMED)
        return cls(msg_type, bytes(buf[HEADER.size:]))


def error_frame(code: int, message: str) -> Frame:
    return Frame(ERROR, bytes([code]) + message.encode("utf-8"))


def parse_error(frame: Frame) -> ProtocolError:
    code = frame.payload[0] if frame.payload else ERR_INTERNAL
    text = frame.payload[1:].decode("utf-8", "replace")
    if code == ERR_SHAPE:
        return ShapeMismatch(text)
    return ProtocolError(text, code)


def read_frame(sock: socket.socket) -> Frame | None:
    """Read one frame; ``None`` on a clean EOF before any header byte."""
    head = _recv_exact(sock, HEADER.size, allow_eof=True)
    if head is None:
        return None
    magic, msg_type, length = HEADER.unpack(head)
    if magic != MAGIC:
        raise ProtocolError(f"bad frame magic {magic!r}", ERR_MALFORMED)
    if length > MAX_PAYLOAD:
        raise ProtocolError("payload too large", ERR_MALFORMED)
    return Frame(msg_type, _recv_exact(sock, length))


def _recv_exact(sock, n, allow_eof=False):
    chunks = []
    got = 0
    while got < n:
        chunk = sock.recv(min(n - got, 1 << 20))
        if not chunk:
            if allow_eof and got == 0:
                return None
            raise ConnectionError("connection closed mid-frame")
        chunks.append(chunk)
        got += len(chunk)
    return b"".join(chunks)


# -- payload codecs -------------------------------------------------------------

_QUERY_FIXED = struct.Struct(">IHB")
_RESPONSE_FIXED = struct.Struct(">IHI")


def encode_query_payload(query_id: int, shares: Sequence[QueryShare], w: int) -> bytes:
    """Pack the shares destined for one server (one per requested ad)."""
    depth = len(shares[0].levels) if shares else 1
    dims = [len(v) for v in shares[0].levels] if shares else []
    parts = [_QUERY_FIXED.pack(query_id, len(shares), depth)]
    parts.append(struct.pack(f">{len(dims)}I", *dims))
    for share in shares:
        if [len(v) for v in share.levels] != dims:
            raise ValueError("all shares in one frame must have the same shape")
        parts.extend(pack_words(v, w) for v in share.levels)
    return b"".join(parts)


def decode_query_payload(payload: bytes, w: int):
    """Return ``(query_id, dims, [levels per ad])``."""
    if len(payload) < _QUERY_FIXED.size:
        raise ProtocolError("query payload too short", ERR_MALFORMED)
    query_id, num_ads, depth = _QUERY_FIXED.unpack_from(payload)
    off = _QUERY_FIXED.size
    if len(payload) < off + 4 * depth:
        raise ProtocolError("query payload truncated in level lengths", ERR_MALFORMED)
    dims = list(struct.unpack_from(f">{depth}I", payload, off))
    off += 4 * depth
    per_ad = sum(packed_len(r, w) for r in dims)
    if len(payload) - off != num_ads * per_ad:
        raise ProtocolError(
            f"query declares {num_ads} x {per_ad} share bytes, carries {len(payload) - off}",
            ERR_MALFORMED)
    ads = []
    for _ in range(num_ads):
        levels = []
        for r in dims:
            nb = packed_len(r, w)
            levels.append(unpack_words(payload[off:off + nb], w, r))
            off += nb
        ads.append(tuple(levels))
    return query_id, dims, ads


def encode_response_payload(query_id: int, vectors: Sequence[np.ndarray], w: int) -> bytes:
    s = len(vectors[0]) if vectors else 0
    parts = [_RESPONSE_FIXED.pack(query_id, len(vectors), s)]
    parts.extend(pack_words(v, w) for v in vectors)
    return b"".join(parts)


def decode_response_payload(payload: bytes, w: int):
    if len(payload) < _RESPONSE_FIXED.size:
        raise ProtocolError("response payload too short", ERR_MALFORMED)
    query_id, num_ads, s = _RESPONSE_FIXED.unpack_from(payload)
    off = _RESPONSE_FIXED.size
    nb = packed_len(s, w)
    if len(payload) - off != num_ads * nb:
        raise ProtocolError("response payload length mismatch", ERR_MALFORMED)
    vecs = [unpack_words(payload[off + k * nb: off + (k + 1) * nb], w, s)
            for k in range(num_ads)]
    return query_id, vecs


# -- server -------------------------------------------------------------------

class PirServer:
    """Answers frames against one immutable database.

    ``handle`` is reentrant; the TCP front end calls it from one thread per
    connection.
    """

    def __init__(self, db: DatabaseMatrix, server_index: int = 0, backend=None):
        self.db = db
        self.server_index = server_index
        self.backend = backend
        self.header = db.shape.header_bytes()

    def handle(self, frame: Frame) -> Frame:
        try:
            if frame.msg_type == DB_INFO_REQ:
                return Frame(DB_INFO, self.header)
            if frame.msg_type == QUERY:
                return self._answer(frame.payload)
            if frame.msg_type in MSG_TYPES:
                return error_frame(ERR_MALFORMED,
                                   f"unexpected message type {frame.msg_type:#04x}")
            return error_frame(ERR_UNKNOWN_TYPE,
                               f"unknown message type {frame.msg_type:#04x}")
        except ProtocolError as exc:
            return error_frame(exc.code, str(exc))
        except DualRingError as exc:
            return error_frame(ERR_BAD_DEPTH if "depth" in str(exc) else ERR_INTERNAL,
                               str(exc))

    def _answer(self, payload: bytes) -> Frame:
        w = self.db.word_bits
        query_id, dims, ads = decode_query_payload(payload, w)
        try:
            pir_core.check_levels(dims, self.db.num_records)
        except BadDepth as exc:
            return error_frame(ERR_BAD_DEPTH, str(exc))
        vectors = []
        for levels in ads:
            share = QueryShare(self.server_index, 0, levels)
            vectors.append(pir_core.server_compute(share, self.db, self.backend).vector)
        return Frame(RESPONSE, encode_response_payload(query_id, vectors, w))


class _Handler(socketserver.BaseRequestHandler):
    def handle(self):
        server: PirServer = self.server.pir
        sock = self.request
        while True:
            try:
                frame = read_frame(sock)
            except ProtocolError as exc:
                # stream cannot be resynchronized after a bad header
                sock.sendall(error_frame(exc.code, str(exc)).serialize())
                return
            except (ConnectionError, OSError):
                return
            if frame is None:
                return
            try:
                sock.sendall(server.handle(frame).serialize())
            except OSError:
                return


class _TCPServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True


class RunningServer:
    """A TCP server answering on a background thread."""

    def __init__(self, pir: PirServer, bind: tuple[str, int]):
        self.pir = pir
        self._tcp = _TCPServer(bind, _Handler)
        self._tcp.pir = pir
        self._thread = threading.Thread(target=self._tcp.serve_forever, daemon=True)
        self._thread.start()

    @property
    def address(self) -> tuple[str, int]:
        return self._tcp.server_address[:2]

    @property
    def endpoint(self) -> str:
        host, port = self.address
        return f"{host}:{port}"

    def shutdown(self):
        self._tcp.shutdown()
        self._tcp.server_close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.shutdown()


def serve(db_path, bind_address: str = "127.0.0.1:0", server_index: int = 0
          ) -> RunningServer:
    """Load a database file and start answering on ``bind_address``."""
    db = DatabaseMatrix.load(db_path)
    return RunningServer(PirServer(db, server_index), parse_endpoint(bind_address))


def parse_endpoint(text: str) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    if not host or not port.isdigit():
        raise ValueError(f"endpoint must be host:port, got {text!r}")
    return host, int(port)


# -- transports -----------------------------------------------------------------

class InProcessEndpoint:
    """Serializes frames exactly as TCP would, without a socket."""

    def __init__(self, server: PirServer):
        self.server = server
        self.alive = True

    def exchange(self, data: bytes) -> bytes:
        if not self.alive:
            raise ConnectionError("endpoint is down")
        return self.server.handle(Frame.parse(data)).serialize()

    def close(self):
        pass


class TcpEndpoint:
    def __init__(self, address: str, timeout: float = 30.0):
        self.address = parse_endpoint(address)
        self.timeout = timeout
        self._sock = None
        self._lock = threading.Lock()

    def _connect(self):
        if self._sock is None:
            self._sock = socket.create_connection(self.address, timeout=self.timeout)
            self._sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        return self._sock

    def exchange(self, data: bytes) -> bytes:
        with self._lock:
            sock = self._connect()
            try:
                sock.sendall(data)
                frame = read_frame(sock)
            except OSError:
                self.close()
                raise
            if frame is None:
                self.close()
                raise ConnectionError("server closed the connection")
            return frame.serialize()

    def close(self):
        if self._sock is not None:
            try:
                self._sock.close()
            finally:
                self._sock = None


def make_endpoint(spec):
    if isinstance(spec, str):
        return TcpEndpoint(spec)
    return spec


# -- client -------------------------------------------------------------------

@dataclass
class BenchRecord:
    scheme: str
    db_bytes: int
    record_bytes: int
    l: int
    t: int
    w: int
    d: int
    q: int
    up_bytes: int = 0
    down_bytes: int = 0
    encode_s: float = 0.0
    server_s: float = 0.0
    decode_s: float = 0.0
    total_s: float = 0.0
    up_framing: int = 0
    down_framing: int = 0
    responders: int = 0


def scheme_name(depth: int) -> str:
    return "ITPIR" if depth == 1 else f"RPIR({depth})"


def _request(endpoint, frame: Frame) -> Frame:
    reply = Frame.parse(endpoint.exchange(frame.serialize()))
    if reply.msg_type == ERROR:
        raise parse_error(reply)
    return reply


def fetch_db_info(endpoints, params: PirParams, timeout: float = 30.0):
    """Handshake: the agreed shape, live endpoint indices and a latency baseline."""
    shapes = {}
    rtts = []
    req = Frame(DB_INFO_REQ)
    for i, ep in enumerate(endpoints):
        try:
            best = None
            for _ in range(3):
                t0 = time.perf_counter()
                reply = _request(ep, req)
                dt = time.perf_counter() - t0
                best = dt if best is None else min(best, dt)
            if reply.msg_type != DB_INFO:
                raise ProtocolError("expected DB_INFO")
            shapes[i] = DbShape.from_header(reply.payload)
            rtts.append(best)
        except (OSError, ConnectionError) as exc:
            log.warning("server %d unreachable during handshake: %s", i, exc)
    if len(shapes) < params.quorum:
        raise QuorumUnreachable(
            f"only {len(shapes)} of {len(endpoints)} servers answered; need {params.quorum}")
    distinct = set(shapes.values())
    if len(distinct) != 1:
        raise ProtocolError("servers disagree on the database shape")
    shape = distinct.pop()
    if shape.word_bits != params.word_bits_w:
        raise ProtocolError(
            f"servers use w={shape.word_bits}, client asked for w={params.word_bits_w}")
    return shape, sorted(shapes), max(rtts)


def client_fetch(beta_list: Sequence[int], endpoints: Sequence, params: PirParams,
                 rng: np.random.Generator, wait_all: bool = True,
                 timeout: float = 60.0, db_bytes: int | None = None):
    """Privately fetch ``beta_list`` from ``l`` servers.

    Returns ``(records, BenchRecord)``.  With ``wait_all`` the client waits
    for every live server (extra replies are checked for consistency);
    otherwise it decodes as soon as ``quorum`` replies are in.
    """
    endpoints = [make_endpoint(e) for e in endpoints]
    if len(endpoints) != params.servers_l:
        raise ValueError(f"params say l={params.servers_l}, got {len(endpoints)} endpoints")
    shape, live, baseline = fetch_db_info(endpoints, params, timeout)
    w = params.word_bits_w
    q = len(beta_list)

    t_start = time.perf_counter()
    per_ad = [pir_core.encode_query(b, shape, params, rng) for b in beta_list]
    query_id = int(rng.integers(0, 2 ** 32))
    frames = {}
    for i in live:
        shares = [ad[i] for ad in per_ad]
        if shares:
            payload = encode_query_payload(query_id, shares, w)
        else:
            dims = wire_dims(shape.num_records, params)
            payload = (_QUERY_FIXED.pack(query_id, 0, len(dims))
                       + struct.pack(f">{len(dims)}I", *dims))
        frames[i] = Frame(QUERY, payload).serialize()
    t_encoded = time.perf_counter()

    replies: dict[int, list[ServerResponse]] = {}
    up = down = 0
    need = params.quorum
    pool = ThreadPoolExecutor(max_workers=len(frames))
    try:
        futures = {pool.submit(endpoints[i].exchange, data): i for i, data in frames.items()}
        up = sum(len(data) for data in frames.values())
        pending = set(futures)
        deadline = t_encoded + timeout
        while pending:
            done, pending = wait(pending, timeout=max(0.0, deadline - time.perf_counter()),
                                 return_when=FIRST_COMPLETED)
            if not done:
                break
            for fut in done:
                i = futures[fut]
                try:
                    raw = fut.result()
                except (OSError, ConnectionError) as exc:
                    log.warning("server %d failed: %s", i, exc)
                    continue
                reply = Frame.parse(raw)
                if reply.msg_type == ERROR:
                    raise parse_error(reply)
                if reply.msg_type != RESPONSE:
                    raise ProtocolError(f"unexpected reply type {reply.msg_type:#04x}")
                rid, vecs = decode_response_payload(reply.payload, w)
                if rid != query_id or len(vecs) != q:
                    raise ProtocolError("response does not match the query")
                down += len(raw)
                x = params.eval_points[i]
                replies[i] = [ServerResponse(i, x, v) for v in vecs]
            if not wait_all and len(replies) >= need:
                break
    finally:
        pool.shutdown(wait=wait_all, cancel_futures=not wait_all)
    t_replied = time.perf_counter()
    if len(replies) < need:
        raise QuorumUnreachable(f"{len(replies)} servers replied; need {need}")

    order = sorted(replies)
    records = []
    for k in range(q):
        resps = [replies[i][k] for i in order]
        row = pir_core.fetch_row(beta_list[k], shape.num_records, params)
        records.append(pir_core.decode(resps, params, shape.record_size, row))
    t_done = time.perf_counter()

    cost = cost_model(shape, params, q, servers=len(frames))
    down_cost = cost_model(shape, params, q, servers=len(replies))
    rec = BenchRecord(
        scheme=scheme_name(params.depth_d),
        db_bytes=db_bytes if db_bytes is not None else shape.num_records * shape.record_size,
        record_bytes=shape.record_size, l=params.servers_l, t=params.privacy_t,
        w=w, d=params.depth_d, q=q, up_bytes=up, down_bytes=down,
        encode_s=t_encoded - t_start,
        server_s=max(0.0, (t_replied - t_encoded) - baseline),
        decode_s=t_done - t_replied, total_s=t_done - t_start,
        up_framing=cost.up_framing, down_framing=down_cost.down_framing,
        responders=len(replies))
    if up != cost.up_bytes or down != down_cost.down_bytes:
        raise AssertionError(
            f"wire bytes up={up} down={down} differ from the cost model "
            f"({cost.up_bytes}, {down_cost.down_bytes})")
    return records, rec


# -- benchmark ----------------------------------------------------------------

MB = 1 << 20

CSV_COLUMNS = ["scheme", "db_bytes", "record_bytes", "l", "t", "w", "d", "q",
               "up_bytes", "down_bytes", "encode_s_mean", "encode_s_sd",
               "server_s_mean", "server_s_sd", "decode_s_mean", "decode_s_sd",
               "total_s_mean", "total_s_sd"]


@dataclass
class SweepConfig:
    db_sizes: Sequence[int] = (64 * MB,)
    record_sizes: Sequence[int] = (16384,)
    servers: Sequence[int] = (4,)
    privacy_t: int | None = None
    word_bits: int = 10
    depths: Sequence[int] = (1,)
    ads: Sequence[int] = (1,)
    repeats: int = 3
    warmup: int = 1
    seed: int = 0
    transport: str = "inproc"
    backend: str | None = None

    def t_for(self, l: int, d: int) -> int:
        if self.privacy_t is not None:
            return self.privacy_t
        # largest t (at most 2) the quorum allows
        return max(1, min(2, (l - 1) // d))


@dataclass
class BenchRow:
    scheme: str
    db_bytes: int
    record_bytes: int
    l: int
    t: int
    w: int
    d: int
    q: int
    up_bytes: int
    down_bytes: int
    encode_s_mean: float
    encode_s_sd: float
    server_s_mean: float
    server_s_sd: float
    decode_s_mean: float
    decode_s_sd: float
    total_s_mean: float
    total_s_sd: float
    runs: list = field(default_factory=list, repr=False)


def _mean_sd(values):
    values = list(values)
    sd = statistics.stdev(values) if len(values) > 1 else 0.0
    return statistics.fmean(values), sd


def aggregate(runs: Sequence[BenchRecord]) -> BenchRow:
    first = runs[0]
    if any((r.up_bytes, r.down_bytes) != (first.up_bytes, first.down_bytes) for r in runs):
        raise AssertionError("byte counts vary between repetitions of one cell")
    stats = {}
    for name in ("encode_s", "server_s", "decode_s", "total_s"):
        stats[name + "_mean"], stats[name + "_sd"] = _mean_sd(getattr(r, name) for r in runs)
    return BenchRow(scheme=first.scheme, db_bytes=first.db_bytes,
                    record_bytes=first.record_bytes, l=first.l, t=first.t, w=first.w,
                    d=first.d, q=first.q, up_bytes=first.up_bytes,
                    down_bytes=first.down_bytes, runs=list(runs), **stats)


def _start_servers(db, l, transport, backend):
    if transport == "inproc":
        return [InProcessEndpoint(PirServer(db, i, backend)) for i in range(l)], []
    if transport == "tcp":
        running = [RunningServer(PirServer(db, i, backend), ("127.0.0.1", 0))
                   for i in range(l)]
        return [TcpEndpoint(r.endpoint) for r in running], running
    raise ValueError(f"unknown transport {transport!r}")


def bench(config: SweepConfig, verify: bool = True) -> list[BenchRow]:
    """Run every cell of the sweep ``repeats`` times."""
    rows = []
    rng = np.random.default_rng(config.seed)
    for db_bytes, record_size in itertools.product(config.db_sizes, config.record_sizes):
        n = max(1, db_bytes // record_size)
        db = pir_core.synthetic_database(n, record_size, config.word_bits, config.seed)
        for l, d, q in itertools.product(config.servers, config.depths, config.ads):
            params = PirParams(l, config.t_for(l, d), config.word_bits, d)
            endpoints, running = _start_servers(db, l, config.transport, config.backend)
            try:
                runs = []
                for k in range(config.warmup + config.repeats):
                    betas = [int(b) for b in rng.integers(0, n, size=q)]
                    records, rec = client_fetch(betas, endpoints, params, rng,
                                                db_bytes=db_bytes)
                    if verify and records != [db.record(b) for b in betas]:
                        raise AssertionError(f"PIR returned wrong records in cell {rec}")
                    if k >= config.warmup:
                        runs.append(rec)
            finally:
                for ep in endpoints:
                    ep.close()
                for srv in running:
                    srv.shutdown()
            row = aggregate(runs)
            log.info("%s db=%d rec=%d l=%d d=%d q=%d total=%.4fs", row.scheme, db_bytes,
                     record_size, l, d, q, row.total_s_mean)
            rows.append(row)
        del db
    return rows


def write_csv(rows: Iterable[BenchRow], fh) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for row in rows:
        vals = asdict(row)
        writer.writerow([_fmt(vals[c]) for c in CSV_COLUMNS])


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.6f}"
    return str(v)


def read_csv(fh) -> list[dict]:
    reader = csv.DictReader(fh)
    if reader.fieldnames != CSV_COLUMNS:
        raise FormatError(f"unexpected benchmark columns {reader.fieldnames}")
    return list(reader)


__all__ = ["Frame", "PirServer", "RunningServer", "InProcessEndpoint", "TcpEndpoint",
           "BenchRecord", "BenchRow", "SweepConfig", "client_fetch", "bench", "serve",
           "write_csv", "read_csv", "CSV_COLUMNS"]
