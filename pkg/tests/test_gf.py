import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dualring.gf import (GF, PRIMITIVE_POLYS, bytes_to_words, field, pack_words,
                         packed_len, unpack_words, words_per_record, words_to_bytes)

WORD_BITS = (8, 10, 16, 20)


def clmul_mod(a, b, w, poly):
    """Shift-and-add multiplication, reduced modulo the field polynomial."""
    out = 0
    while b:
        if b & 1:
            out ^= a
        b >>= 1
        a <<= 1
        if a >> w:
            a ^= poly
    return out


def test_w8_multiplication_table_matches_clmul_exhaustively():
    gf = field(8)
    a = np.arange(256)
    table = gf.mul_vec(a[:, None].repeat(256, 1), a[None, :].repeat(256, 0))
    for x in range(256):
        for y in range(0, 256, 1):
            assert table[x, y] == clmul_mod(x, y, 8, PRIMITIVE_POLYS[8])


def test_w8_field_laws_exhaustive():
    gf = field(8)
    a = np.arange(256, dtype=np.uint32)
    A, B = np.meshgrid(a, a, indexing="ij")
    ab = gf.mul_vec(A, B)
    assert np.array_equal(ab, ab.T)                                   # commutative
    for c in (0, 1, 2, 3, 0x53, 0xCA, 255):
        lhs = gf.mul_vec(ab, np.full_like(ab, c))
        rhs = gf.mul_vec(A, gf.mul_vec(B, np.full_like(B, c)))
        assert np.array_equal(lhs, rhs)                               # associative
        dist_l = gf.mul_vec(np.full_like(A, c), A ^ B)
        dist_r = gf.mul_vec(np.full_like(A, c), A) ^ gf.mul_vec(np.full_like(B, c), B)
        assert np.array_equal(dist_l, dist_r)                         # distributive
    for x in range(1, 256):
        assert gf.mul(x, gf.inv(x)) == 1
    assert gf.mul(0, 77) == 0


@pytest.mark.parametrize("w", WORD_BITS[1:])
def test_sampled_field_laws(w):
    gf = field(w)
    rng = np.random.default_rng(w)
    xs = rng.integers(0, 1 << w, size=(400, 3))
    for a, b, c in xs.tolist():
        assert gf.mul(a, b) == clmul_mod(a, b, w, PRIMITIVE_POLYS[w])
        assert gf.mul(a, b) == gf.mul(b, a)
        assert gf.mul(gf.mul(a, b), c) == gf.mul(a, gf.mul(b, c))
        assert gf.mul(a, b ^ c) == gf.mul(a, b) ^ gf.mul(a, c)
        if a:
            assert gf.mul(a, gf.inv(a)) == 1
            assert gf.div(gf.mul(a, b), a) == b


@pytest.mark.parametrize("w", WORD_BITS)
def test_generator_has_full_order(w):
    gf = field(w)
    assert len(set(gf.exp[: (1 << w) - 1].tolist())) == (1 << w) - 1


def test_pow_and_scale_agree_with_mul():
    gf = field(10)
    assert gf.pow(3, 0) == 1
    assert gf.pow(3, 4) == gf.mul(gf.mul(3, 3), gf.mul(3, 3))
    v = np.array([0, 1, 5, 1023], dtype=np.uint16)
    assert gf.scale(7, v).tolist() == [gf.mul(7, int(x)) for x in v]
    assert gf.scale(0, v).tolist() == [0, 0, 0, 0]


def test_inverse_of_zero_raises():
    with pytest.raises(ZeroDivisionError):
        field(8).inv(0)


def test_unsupported_word_size():
    with pytest.raises(ValueError):
        GF(12)


def test_words_per_record_matches_arithmetic():
    assert words_per_record(16384, 10) == 13108
    assert words_per_record(1, 8) == 1
    assert packed_len(13108, 10) == 16385


@pytest.mark.parametrize("w", WORD_BITS)
@settings(max_examples=40, deadline=None)
@given(data=st.data())
def test_pack_round_trip(w, data):
    n = data.draw(st.integers(0, 50))
    words = np.array(data.draw(st.lists(st.integers(0, (1 << w) - 1), min_size=n,
                                        max_size=n)), dtype=np.uint32)
    buf = pack_words(words, w)
    assert len(buf) == packed_len(n, w)
    assert unpack_words(buf, w, n).tolist() == words.tolist()


@pytest.mark.parametrize("w", WORD_BITS)
@settings(max_examples=30, deadline=None)
@given(raw=st.binary(min_size=1, max_size=40))
def test_bytes_words_round_trip(w, raw):
    nbytes = len(raw)
    nwords = words_per_record(nbytes, w)
    arr = np.frombuffer(raw, dtype=np.uint8)[None, :]
    words = bytes_to_words(arr, w, nwords)
    assert words.max(initial=0) < (1 << w)
    assert words_to_bytes(words, w, nbytes)[0].tobytes() == raw


def test_big_endian_bit_order():
    # 0xFF 0xC0 -> first 10-bit word is all ones
    words = bytes_to_words(np.array([[0xFF, 0xC0]], dtype=np.uint8), 10, 1)
    assert words.tolist() == [[1023]]
