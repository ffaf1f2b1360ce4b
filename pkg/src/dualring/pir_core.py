"""t-private multi-server information-theoretic PIR over GF(2^w).

The database is an ``n x s`` matrix of ``w``-bit words, one record per row.
A query for row ``beta`` is a Shamir sharing of the unit vector ``e_beta``:
coordinate ``j`` is a random degree-``t`` polynomial whose constant term is
``[j == beta]``, and server ``i`` receives every polynomial evaluated at its
point ``x_i``.  Each server folds the rows by its share; interpolating the
replies at 0 yields row ``beta``.

Depth ``d > 1`` splits the row index into ``d`` mixed-radix digits and
shares a unit vector per digit.  Servers fold one level at a time, so the
reply is a polynomial of degree ``d * t`` and decoding needs ``d*t + 1``
replies.  This stands in for the hybrid scheme's computational inner
layer; there is no lattice cryptography here.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from typing import BinaryIO, Iterable, Sequence

import numpy as np

from . import kernels
from .errors import (BadDepth, EmptyDatabase, FormatError, InconsistentResponses,
                     IndexOutOfRange, InsufficientResponses, ShapeMismatch)
from .gf import (GF, SUPPORTED_WORD_BITS, bytes_to_words, field, packed_len, word_dtype,
                 words_per_record, words_to_bytes)

DB_MAGIC = b"DRADB1"
DB_VERSION = 1
DB_HEADER = struct.Struct(">6sHHIQQ")

# Wire framing sizes; pir_net builds frames with exactly these layouts.
FRAME_HEADER_BYTES = 6 + 1 + 4              # magic, msg_type, length
QUERY_FIXED_BYTES = 4 + 2 + 1               # query_id, num_ads, depth
QUERY_PER_LEVEL_BYTES = 4                   # one u32 length per level
RESPONSE_FIXED_BYTES = 4 + 2 + 4            # query_id, num_ads, words per reply

_LAYOUT_CHUNK_BYTES = 1 << 24


@dataclass(frozen=True)
class PirParams:
    servers_l: int
    privacy_t: int
    word_bits_w: int = 10
    depth_d: int = 1
    eval_points: tuple[int, ...] = ()

    def __post_init__(self):
        if self.word_bits_w not in SUPPORTED_WORD_BITS:
            raise ValueError(f"word size must be one of {SUPPORTED_WORD_BITS}")
        if self.servers_l < 1:
            raise ValueError("need at least one server")
        if not 0 <= self.privacy_t <= self.servers_l - 1:
            raise ValueError("privacy_t must lie in [0, servers_l - 1]")
        if self.depth_d < 1:
            raise BadDepth("depth must be >= 1")
        if not self.eval_points:
            object.__setattr__(self, "eval_points",
                               tuple(range(1, self.servers_l + 1)))
        pts = self.eval_points
        if len(pts) != self.servers_l or len(set(pts)) != len(pts):
            raise ValueError("eval_points must be servers_l distinct values")
        if any(not 0 < x < (1 << self.word_bits_w) for x in pts):
            raise ValueError("eval_points must be nonzero field elements")

    @property
    def folded_levels(self) -> int:
        """Levels the servers fold.

        Each folded level multiplies the reply degree by one more factor of
        t, so at most ``(l - 1) // t`` levels fit under the server count.
        Deeper levels travel back unfolded and the client picks its row.
        """
        if self.privacy_t == 0:
            return self.depth_d
        return min(self.depth_d, (self.servers_l - 1) // self.privacy_t)

    @property
    def degree(self) -> int:
        """Degree of the reply polynomial."""
        return self.folded_levels * self.privacy_t

    @property
    def quorum(self) -> int:
        return self.degree + 1

    @property
    def gf(self) -> GF:
        return field(self.word_bits_w)


@dataclass(frozen=True)
class DbShape:
    """What a client needs to know about a database (the DB_INFO contents)."""

    num_records: int
    record_size: int
    word_bits: int
    poly: int

    @property
    def words_per_row(self) -> int:
        return words_per_record(self.record_size, self.word_bits)

    @property
    def rows(self) -> int:
        return self.num_records

    def header_bytes(self) -> bytes:
        return DB_HEADER.pack(DB_MAGIC, DB_VERSION, self.word_bits, self.poly,
                              self.record_size, self.num_records)

    @classmethod
    def from_header(cls, buf: bytes) -> "DbShape":
        if len(buf) != DB_HEADER.size:
            raise FormatError(f"database header must be {DB_HEADER.size} bytes")
        magic, version, w, poly, record_size, n = DB_HEADER.unpack(buf)
        if magic != DB_MAGIC:
            raise FormatError(f"bad database magic {magic!r}")
        if version != DB_VERSION:
            raise FormatError(f"unsupported database version {version}")
        if w not in SUPPORTED_WORD_BITS:
            raise FormatError(f"unsupported word size {w}")
        if poly != field(w).poly:
            raise FormatError(f"database polynomial {poly:#x} differs from the field's")
        return cls(num_records=n, record_size=record_size, word_bits=w, poly=poly)


@dataclass(frozen=True, eq=False)
class DatabaseMatrix:
    """Record store as an ``n x s`` word matrix (one record per row)."""

    words: np.ndarray
    record_size_bytes: int
    word_bits: int
    rows_per_record: int = 1

    @property
    def num_records(self) -> int:
        return self.words.shape[0]

    @property
    def r(self) -> int:
        return self.words.shape[0]

    @property
    def s(self) -> int:
        return self.words.shape[1]

    @property
    def gf(self) -> GF:
        return field(self.word_bits)

    @property
    def shape(self) -> DbShape:
        return DbShape(self.num_records, self.record_size_bytes, self.word_bits,
                       self.gf.poly)

    def record(self, index: int) -> bytes:
        """Direct (non-private) lookup."""
        row = self.words[index]
        return words_to_bytes(row[None, :], self.word_bits,
                              self.record_size_bytes)[0].tobytes()

    def records(self) -> list[bytes]:
        return [self.record(i) for i in range(self.num_records)]

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            self.write(fh)

    def write(self, fh: BinaryIO) -> None:
        fh.write(self.shape.header_bytes())
        step = max(1, _LAYOUT_CHUNK_BYTES // max(1, self.s * 4))
        nbytes = packed_len(self.s, self.word_bits)
        for lo in range(0, self.num_records, step):
            fh.write(words_to_bytes(self.words[lo:lo + step], self.word_bits,
                                    nbytes).tobytes())

    @classmethod
    def load(cls, path) -> "DatabaseMatrix":
        with open(path, "rb") as fh:
            shape = DbShape.from_header(fh.read(DB_HEADER.size))
            s = shape.words_per_row
            row_bytes = packed_len(s, shape.word_bits)
            words = np.empty((shape.num_records, s), dtype=word_dtype(shape.word_bits))
            step = max(1, _LAYOUT_CHUNK_BYTES // max(1, row_bytes))
            for lo in range(0, shape.num_records, step):
                hi = min(lo + step, shape.num_records)
                buf = fh.read((hi - lo) * row_bytes)
                if len(buf) != (hi - lo) * row_bytes:
                    raise FormatError("database file is truncated")
                rows = np.frombuffer(buf, dtype=np.uint8).reshape(hi - lo, row_bytes)
                words[lo:hi] = bytes_to_words(rows, shape.word_bits, s)
            if fh.read(1):
                raise FormatError("trailing bytes after database rows")
        if shape.num_records == 0:
            raise EmptyDatabase("database has no records")
        return cls(words, shape.record_size, shape.word_bits)


def layout(records: Sequence[bytes], record_size: int, w: int = 10) -> DatabaseMatrix:
    """Pack records (zero-padded to ``record_size``) into a word matrix."""
    if not records:
        raise EmptyDatabase("cannot lay out an empty database")
    if w not in SUPPORTED_WORD_BITS:
        raise ValueError(f"word size must be one of {SUPPORTED_WORD_BITS}")
    s = words_per_record(record_size, w)
    words = np.empty((len(records), s), dtype=word_dtype(w))
    step = max(1, _LAYOUT_CHUNK_BYTES // max(1, record_size * 8))
    for lo in range(0, len(records), step):
        chunk = records[lo:lo + step]
        buf = np.zeros((len(chunk), record_size), dtype=np.uint8)
        for k, rec in enumerate(chunk):
            if len(rec) > record_size:
                raise ValueError(f"record {lo + k} exceeds record_size={record_size}")
            buf[k, :len(rec)] = np.frombuffer(bytes(rec), dtype=np.uint8)
        words[lo:lo + len(chunk)] = bytes_to_words(buf, w, s)
    return DatabaseMatrix(words, record_size, w)


def synthetic_database(num_records: int, record_size: int, w: int,
                       seed: int) -> DatabaseMatrix:
    """Deterministic random database built without materializing all bytes."""
    if num_records < 1:
        raise EmptyDatabase("need at least one record")
    rng = np.random.default_rng([seed, num_records, record_size])
    s = words_per_record(record_size, w)
    words = np.empty((num_records, s), dtype=word_dtype(w))
    step = max(1, _LAYOUT_CHUNK_BYTES // max(1, record_size * 8))
    for lo in range(0, num_records, step):
        hi = min(lo + step, num_records)
        buf = rng.integers(0, 256, size=(hi - lo, record_size), dtype=np.uint8)
        words[lo:hi] = bytes_to_words(buf, w, s)
    return DatabaseMatrix(words, record_size, w)


# -- recursion geometry -------------------------------------------------------

def _iroot_ceil(n: int, k: int) -> int:
    """Smallest b with b**k >= n."""
    b = max(1, round(n ** (1.0 / k)))
    while b ** k < n:
        b += 1
    while b > 1 and (b - 1) ** k >= n:
        b -= 1
    return b


def level_dims(num_records: int, depth: int) -> list[int]:
    """Per-level query lengths ``r_1..r_d``, each about ``n**(1/d)``."""
    if depth < 1:
        raise BadDepth("depth must be >= 1")
    if depth > 1 and depth > math.log2(max(num_records, 1)):
        raise BadDepth(f"depth {depth} exceeds log2(n) for n={num_records}")
    dims = []
    rows = num_records
    for remaining in range(depth, 0, -1):
        r_i = _iroot_ceil(rows, remaining)
        dims.append(r_i)
        rows = -(-rows // r_i)
    return dims


def block_rows(num_records: int, dims: Sequence[int]) -> list[int]:
    """Rows per block after each fold."""
    out = []
    rows = num_records
    for r_i in dims:
        rows = -(-rows // r_i)
        out.append(rows)
    return out


def wire_dims(num_records: int, params: "PirParams") -> list[int]:
    """Per-level share lengths as sent; unfolded levels have length 0."""
    dims = level_dims(num_records, params.depth_d)
    f = params.folded_levels
    return dims[:f] + [0] * (len(dims) - f)


def check_levels(got: Sequence[int], num_records: int) -> int:
    """Validate received level lengths; returns the number of folded levels.

    Every level is either the full ``r_i`` or empty, and empty levels only
    trail.
    """
    dims = level_dims(num_records, len(got))
    folded = 0
    while folded < len(got) and got[folded] == dims[folded] and got[folded]:
        folded += 1
    if folded == 0 or any(g != 0 for g in got[folded:]):
        raise ShapeMismatch(f"query level lengths {list(got)} do not match {dims}")
    return folded


def reply_rows(num_records: int, dims: Sequence[int], folded: int) -> int:
    """Rows left in the reply after ``folded`` levels."""
    return block_rows(num_records, dims)[folded - 1]


def residual_row(beta: int, num_records: int, dims: Sequence[int], folded: int) -> int:
    """Position of ``beta`` inside the unfolded reply block."""
    rem = beta
    for blk in block_rows(num_records, dims)[:folded]:
        rem %= blk
    return rem


def index_digits(beta: int, num_records: int, dims: Sequence[int]) -> list[int]:
    digits = []
    rem = beta
    for blk in block_rows(num_records, dims):
        digits.append(rem // blk)
        rem %= blk
    return digits


# -- query encoding -----------------------------------------------------------

@dataclass(frozen=True, eq=False)
class QueryShare:
    server_index: int
    eval_point: int
    levels: tuple[np.ndarray, ...]

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate(self.levels)


@dataclass(frozen=True, eq=False)
class ServerResponse:
    server_index: int
    eval_point: int
    vector: np.ndarray


def share_unit_vector(index: int, length: int, eval_points: Sequence[int], t: int,
                      coeffs: np.ndarray, gf: GF) -> list[np.ndarray]:
    """Evaluate the sharing of ``e_index`` at each point.

    ``coeffs`` has shape ``(t, length)``: row ``k`` holds the coefficient of
    ``x**(k+1)`` for every coordinate.  The constant term is the only input
    that depends on ``index``.
    """
    coeffs = np.asarray(coeffs)
    if coeffs.shape != (t, length):
        raise ValueError(f"coeffs must have shape {(t, length)}")
    unit = np.zeros(length, dtype=gf.dtype)
    unit[index] = 1
    shares = []
    for x in eval_points:
        acc = unit.copy()
        for k in range(t):
            acc ^= gf.scale(gf.pow(x, k + 1), coeffs[k])
        shares.append(acc)
    return shares


def encode_query(beta: int, shape: DbShape | tuple[int, int], params: PirParams,
                 rng: np.random.Generator) -> list[QueryShare]:
    """Shares of a query for record ``beta``, one per server."""
    n = shape.num_records if isinstance(shape, DbShape) else int(shape[0])
    if not 0 <= beta < n:
        raise IndexOutOfRange(f"beta={beta} outside [0, {n})")
    gf = params.gf
    dims = level_dims(n, params.depth_d)
    digits = index_digits(beta, n, dims)
    per_level = []
    for k, (digit, r_i) in enumerate(zip(digits, dims)):
        if k >= params.folded_levels:
            per_level.append([np.zeros(0, dtype=gf.dtype)] * params.servers_l)
            continue
        coeffs = gf.random(rng, (params.privacy_t, r_i))
        per_level.append(share_unit_vector(digit, r_i, params.eval_points,
                                           params.privacy_t, coeffs, gf))
    return [
        QueryShare(i, x, tuple(level[i] for level in per_level))
        for i, x in enumerate(params.eval_points)
    ]


def encode_query_recursive(beta: int, shape, params: PirParams,
                           rng: np.random.Generator) -> list[QueryShare]:
    if params.depth_d < 2:
        raise BadDepth("recursive encoding needs depth >= 2")
    return encode_query(beta, shape, params, rng)


# -- server side --------------------------------------------------------------

def server_compute(share: QueryShare, db: DatabaseMatrix, backend: str | None = None
                   ) -> ServerResponse:
    """Fold the database by the share, level by level."""
    got = [len(v) for v in share.levels]
    folded = check_levels(got, db.num_records)
    dims = level_dims(db.num_records, len(got))
    s = db.s
    flat = db.words.reshape(-1)
    for vec, rows in zip(share.levels[:folded], block_rows(db.num_records, dims)):
        flat = kernels.vecmat(vec, flat, rows * s, db.gf, backend=backend)
    rows = reply_rows(db.num_records, dims, folded)
    return ServerResponse(share.server_index, share.eval_point, flat[:rows * s])


def server_compute_naive(share: QueryShare, db: DatabaseMatrix) -> ServerResponse:
    """Double-loop reference for depth-1 shares."""
    if len(share.levels) != 1 or len(share.levels[0]) != db.r:
        raise ShapeMismatch("naive compute supports flat shares only")
    gf = db.gf
    out = [0] * db.s
    q = share.levels[0]
    for j in range(db.r):
        for k in range(db.s):
            out[k] ^= gf.mul(int(q[j]), int(db.words[j, k]))
    return ServerResponse(share.server_index, share.eval_point,
                          np.array(out, dtype=gf.dtype))


# -- client decoding ----------------------------------------------------------

def lagrange_coeffs(xs: Sequence[int], at: int, gf: GF) -> list[int]:
    """Coefficients ``c_i`` with ``f(at) = sum c_i f(xs[i])`` for deg f < len(xs)."""
    coeffs = []
    for i, xi in enumerate(xs):
        num, den = 1, 1
        for k, xk in enumerate(xs):
            if k != i:
                num = gf.mul(num, xk ^ at)
                den = gf.mul(den, xk ^ xi)
        coeffs.append(gf.div(num, den))
    return coeffs


def interpolate(responses: Sequence[ServerResponse], at: int, gf: GF) -> np.ndarray:
    lam = lagrange_coeffs([r.eval_point for r in responses], at, gf)
    acc = np.zeros(len(responses[0].vector), dtype=gf.dtype)
    for c, resp in zip(lam, responses):
        acc ^= gf.scale(c, resp.vector)
    return acc


def decode_words(responses: Iterable[ServerResponse], params: PirParams) -> np.ndarray:
    """Recover the requested row's words.

    The first ``quorum`` replies determine the polynomial; any extras are
    checked against it.
    """
    responses = list(responses)
    pts = [r.eval_point for r in responses]
    if len(set(pts)) != len(pts):
        raise ValueError("responses must come from distinct eval points")
    if len(responses) < params.quorum:
        raise InsufficientResponses(
            f"need {params.quorum} responses, got {len(responses)}")
    gf = params.gf
    base = responses[:params.quorum]
    for extra in responses[params.quorum:]:
        if not np.array_equal(interpolate(base, extra.eval_point, gf), extra.vector):
            raise InconsistentResponses(
                f"server {extra.server_index} disagrees with the interpolated reply")
    return interpolate(base, 0, gf)


def decode(responses: Iterable[ServerResponse], params: PirParams,
           record_size: int, row: int = 0) -> bytes:
    """Recover the record; ``row`` selects it inside an unfolded reply."""
    words = decode_words(responses, params)
    s = words_per_record(record_size, params.word_bits_w)
    words = words[row * s:(row + 1) * s]
    if len(words) != s:
        raise ValueError(f"reply holds no row {row}")
    return words_to_bytes(words[None, :], params.word_bits_w, record_size)[0].tobytes()


def decode_recursive(responses, params: PirParams, record_size: int,
                     beta: int = 0, num_records: int = 1) -> bytes:
    if params.depth_d < 2:
        raise BadDepth("recursive decoding needs depth >= 2")
    dims = level_dims(num_records, params.depth_d)
    row = residual_row(beta, num_records, dims, params.folded_levels)
    return decode(responses, params, record_size, row)


def fetch_row(beta: int, num_records: int, params: PirParams) -> int:
    """Row of ``beta`` inside the decoded reply (0 when every level folds)."""
    dims = level_dims(num_records, params.depth_d)
    return residual_row(beta, num_records, dims, params.folded_levels)


# -- communication cost -------------------------------------------------------

@dataclass(frozen=True)
class Cost:
    up_payload: int
    up_framing: int
    down_payload: int
    down_framing: int

    @property
    def up_bytes(self) -> int:
        return self.up_payload + self.up_framing

    @property
    def down_bytes(self) -> int:
        return self.down_payload + self.down_framing


def query_share_bytes(dims: Sequence[int], w: int) -> int:
    return sum(packed_len(r_i, w) for r_i in dims)


def cost_model(shape: DbShape, params: PirParams, num_ads: int,
               servers: int | None = None) -> Cost:
    """Exact bytes on the wire for one fetch of ``num_ads`` records.

    ``servers`` is the number of servers contacted (default: all ``l``).
    A fetch of zero ads still exchanges one (empty) frame per server.
    """
    l = params.servers_l if servers is None else servers
    dims = level_dims(shape.num_records, params.depth_d)
    w = params.word_bits_w
    rows = reply_rows(shape.num_records, dims, params.folded_levels)
    up_payload = l * num_ads * query_share_bytes(dims[:params.folded_levels], w)
    down_payload = l * num_ads * packed_len(rows * shape.words_per_row, w)
    up_framing = l * (FRAME_HEADER_BYTES + QUERY_FIXED_BYTES
                      + QUERY_PER_LEVEL_BYTES * len(dims))
    down_framing = l * (FRAME_HEADER_BYTES + RESPONSE_FIXED_BYTES)
    return Cost(up_payload, up_framing, down_payload, down_framing)
