"""GF(2^w) arithmetic through log/antilog tables.

Elements are plain integers (or numpy unsigned arrays) in ``[0, 2**w)``.
Addition is XOR; multiplication goes through the discrete log with respect
to the generator ``x``, which requires the reduction polynomial to be
primitive, not just irreducible.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np

# Primitive reduction polynomials, bit i = coefficient of x^i.
PRIMITIVE_POLYS = {
    8: 0x11D,       # x^8 + x^4 + x^3 + x^2 + 1
    10: 0x409,      # x^10 + x^3 + 1
    16: 0x1100B,    # x^16 + x^12 + x^3 + x + 1
    20: 0x100009,   # x^20 + x^3 + 1
}

SUPPORTED_WORD_BITS = tuple(sorted(PRIMITIVE_POLYS))


def word_dtype(w: int) -> np.dtype:
    if w <= 8:
        return np.dtype(np.uint8)
    if w <= 16:
        return np.dtype(np.uint16)
    return np.dtype(np.uint32)


class GF:
    """The field GF(2^w) defined by ``poly``.

    ``exp`` has length ``2 * order`` so a sum of two logs never needs a
    modulo; ``log[0]`` is a sentinel and must be masked by callers.
    """

    def __init__(self, w: int, poly: int | None = None):
        if poly is None:
            if w not in PRIMITIVE_POLYS:
                raise ValueError(f"no default polynomial for w={w}")
            poly = PRIMITIVE_POLYS[w]
        if poly >> w != 1:
            raise ValueError(f"polynomial {poly:#x} does not have degree {w}")
        self.w = w
        self.poly = poly
        self.size = 1 << w
        self.order = self.size - 1
        self.dtype = word_dtype(w)
        self.exp, self.log = _tables(w, poly)

    def __repr__(self):
        return f"GF(2^{self.w}, poly={self.poly:#x})"

    # scalar operations ---------------------------------------------------

    def mul(self, a: int, b: int) -> int:
        if a == 0 or b == 0:
            return 0
        return int(self.exp[int(self.log[a]) + int(self.log[b])])

    def inv(self, a: int) -> int:
        if a == 0:
            raise ZeroDivisionError("0 has no inverse in GF(2^w)")
        return int(self.exp[self.order - int(self.log[a])])

    def div(self, a: int, b: int) -> int:
        return self.mul(a, self.inv(b))

    def pow(self, a: int, e: int) -> int:
        if e == 0:
            return 1
        if a == 0:
            return 0
        return int(self.exp[(int(self.log[a]) * e) % self.order])

    # array operations ----------------------------------------------------

    def mul_vec(self, a, b) -> np.ndarray:
        """Element-wise product of two broadcastable arrays."""
        a = np.asarray(a)
        b = np.asarray(b)
        prod = self.exp[self.log[a].astype(np.int64) + self.log[b]]
        prod = np.where((a == 0) | (b == 0), 0, prod)
        return prod.astype(self.dtype)

    def scale(self, c: int, v) -> np.ndarray:
        """Multiply array ``v`` by the scalar ``c``."""
        v = np.asarray(v)
        if c == 0:
            return np.zeros(v.shape, dtype=self.dtype)
        out = self.exp[int(self.log[c]) + self.log[v].astype(np.int64)]
        out[v == 0] = 0
        return out.astype(self.dtype)

    def random(self, rng: np.random.Generator, size) -> np.ndarray:
        return rng.integers(0, self.size, size=size, dtype=np.int64).astype(self.dtype)


@lru_cache(maxsize=None)
def _tables(w: int, poly: int) -> tuple[np.ndarray, np.ndarray]:
    size = 1 << w
    order = size - 1
    exp = np.zeros(2 * size, dtype=np.uint32)
    log = np.zeros(size, dtype=np.int64)
    x = 1
    for i in range(order):
        exp[i] = x
        log[x] = i
        x <<= 1
        if x & size:
            x ^= poly
    if x != 1 or len(set(exp[:order].tolist())) != order:
        raise ValueError(f"polynomial {poly:#x} is not primitive for w={w}")
    exp[order:2 * order] = exp[:order]
    exp.setflags(write=False)
    log.setflags(write=False)
    return exp, log


@lru_cache(maxsize=None)
def field(w: int) -> GF:
    """Shared field instance for the default polynomial of ``w``."""
    return GF(w)


# -- bit packing -------------------------------------------------------------

def words_per_record(record_size: int, w: int) -> int:
    return -(-record_size * 8 // w)


def packed_len(nwords: int, w: int) -> int:
    return -(-nwords * w // 8)


def bytes_to_words(data: np.ndarray, w: int, nwords: int) -> np.ndarray:
    """Split rows of bytes into big-endian ``w``-bit words.

    ``data`` is a ``(rows, nbytes)`` uint8 array.  The bit stream of each row
    is zero-padded on the right up to ``nwords * w`` bits.
    """
    data = np.atleast_2d(np.asarray(data, dtype=np.uint8))
    rows, nbytes = data.shape
    if w == 8 and nbytes == nwords:
        return data.copy()
    if w == 16 and nbytes == 2 * nwords:
        return data.view(">u2").astype(np.uint16)
    bits = np.unpackbits(data, axis=1)
    need = nwords * w
    if bits.shape[1] < need:
        bits = np.concatenate(
            [bits, np.zeros((rows, need - bits.shape[1]), dtype=np.uint8)], axis=1)
    elif bits.shape[1] >= need + 8:
        raise ValueError("row has more bits than nwords * w")
    else:
        bits = bits[:, :need]
    bits = bits.reshape(rows, nwords, w)
    weights = (1 << np.arange(w - 1, -1, -1, dtype=np.uint32)).astype(np.uint32)
    return (bits.astype(np.uint32) @ weights).astype(word_dtype(w))


def words_to_bytes(words: np.ndarray, w: int, nbytes: int) -> np.ndarray:
    """Inverse of :func:`bytes_to_words`, truncated to ``nbytes`` per row."""
    words = np.atleast_2d(np.asarray(words))
    rows, nwords = words.shape
    shifts = np.arange(w - 1, -1, -1, dtype=np.uint32)
    bits = ((words.astype(np.uint32)[:, :, None] >> shifts) & 1).astype(np.uint8)
    bits = bits.reshape(rows, nwords * w)
    pad = (-bits.shape[1]) % 8
    if pad:
        bits = np.concatenate([bits, np.zeros((rows, pad), dtype=np.uint8)], axis=1)
    return np.packbits(bits, axis=1)[:, :nbytes]


def pack_words(words, w: int) -> bytes:
    """Serialize a 1-D word vector into ``packed_len`` bytes."""
    words = np.asarray(words)
    return words_to_bytes(words[None, :], w, packed_len(len(words), w))[0].tobytes()


def unpack_words(buf: bytes, w: int, nwords: int) -> np.ndarray:
    data = np.frombuffer(buf, dtype=np.uint8)
    if len(data) != packed_len(nwords, w):
        raise ValueError(f"expected {packed_len(nwords, w)} bytes, got {len(data)}")
    if w == 8:
        return data.copy()
    if w == 16:
        return data.view(">u2").astype(np.uint16)
    bits = np.unpackbits(data)[: nwords * w].reshape(nwords, w)
    weights = (1 << np.arange(w - 1, -1, -1, dtype=np.uint32)).astype(np.uint32)
    return (bits.astype(np.uint32) @ weights).astype(word_dtype(w))
