import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dualring import pir_core as pc
from dualring.errors import (BadDepth, EmptyDatabase, InconsistentResponses, IndexOutOfRange,
                             InsufficientResponses, ShapeMismatch)
from dualring.gf import field


def records(n, size, seed=0):
    rng = np.random.default_rng(seed)
    return [rng.bytes(size) for _ in range(n)]


def fetch(db, beta, params, rng, keep=None):
    shares = pc.encode_query(beta, db.shape, params, rng)
    resps = [pc.server_compute(s, db) for s in shares]
    if keep is not None:
        resps = resps[:keep]
    row = pc.fetch_row(beta, db.num_records, params)
    return pc.decode(resps, params, db.shape.record_size, row)


# -- params and layout ----------------------------------------------------------

def test_params_defaults_and_validation():
    p = pc.PirParams(4, 2)
    assert p.eval_points == (1, 2, 3, 4)
    assert p.quorum == 3
    with pytest.raises(ValueError):
        pc.PirParams(3, 3)
    with pytest.raises(ValueError):
        pc.PirParams(3, 1, eval_points=(1, 1, 2))
    with pytest.raises(ValueError):
        pc.PirParams(3, 1, eval_points=(0, 1, 2))
    with pytest.raises(ValueError):
        pc.PirParams(3, 1, word_bits_w=12)
    with pytest.raises(BadDepth):
        pc.PirParams(3, 1, depth_d=0)


def test_folded_levels_respect_server_count():
    assert pc.PirParams(6, 1, depth_d=3).folded_levels == 3
    assert pc.PirParams(3, 1, depth_d=3).folded_levels == 2
    assert pc.PirParams(4, 2, depth_d=2).folded_levels == 1
    for l, t, d in itertools.product(range(2, 7), range(1, 5), range(1, 4)):
        if t < l:
            p = pc.PirParams(l, t, depth_d=d)
            assert 1 <= p.folded_levels <= d
            assert p.quorum <= l


def test_layout_one_byte_record():
    db = pc.layout([b"\x07"], 1, 8)
    assert (db.r, db.s) == (1, 1)
    assert db.record(0) == b"\x07"


def test_layout_16k_w10_width():
    db = pc.layout([b"x"], 16384, 10)
    assert db.s == 13108


def test_layout_pads_short_records_and_rejects_empty():
    db = pc.layout([b"ab", b"c"], 4, 10)
    assert db.record(1) == b"c\x00\x00\x00"
    with pytest.raises(EmptyDatabase):
        pc.layout([], 4, 10)
    with pytest.raises(ValueError):
        pc.layout([b"toolong"], 4, 10)


@settings(max_examples=25, deadline=None)
@given(st.sampled_from((8, 10, 16, 20)), st.integers(1, 9), st.integers(1, 33), st.data())
def test_layout_round_trip(w, n, size, data):
    recs = [data.draw(st.binary(min_size=size, max_size=size)) for _ in range(n)]
    db = pc.layout(recs, size, w)
    assert db.records() == recs


def test_database_file_round_trip(tmp_path):
    recs = records(13, 21)
    db = pc.layout(recs, 21, 10)
    path = tmp_path / "db.bin"
    db.save(path)
    raw = path.read_bytes()
    assert raw[:6] == b"DRADB1"
    shape = pc.DbShape.from_header(raw[:30])
    assert (shape.num_records, shape.record_size, shape.word_bits) == (13, 21, 10)
    again = pc.DatabaseMatrix.load(path)
    assert again.records() == recs
    assert np.array_equal(again.words, db.words)


def test_synthetic_database_is_deterministic():
    a = pc.synthetic_database(5, 40, 10, seed=3)
    b = pc.synthetic_database(5, 40, 10, seed=3)
    c = pc.synthetic_database(5, 40, 10, seed=4)
    assert a.records() == b.records() != c.records()


# -- geometry -------------------------------------------------------------------

def test_level_dims_examples():
    assert pc.level_dims(9, 2) == [3, 3]
    assert pc.level_dims(27, 3) == [3, 3, 3]
    assert pc.level_dims(10, 1) == [10]
    with pytest.raises(BadDepth):
        pc.level_dims(4, 3)
    with pytest.raises(BadDepth):
        pc.level_dims(1, 2)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 500), st.integers(1, 3))
def test_digits_address_every_record_once(n, d):
    try:
        dims = pc.level_dims(n, d)
    except BadDepth:
        return
    blocks = pc.block_rows(n, dims)
    assert blocks[-1] == 1
    seen = set()
    for beta in range(n):
        digits = pc.index_digits(beta, n, dims)
        assert all(0 <= g < r for g, r in zip(digits, dims))
        assert sum(g * b for g, b in zip(digits, blocks)) == beta
        seen.add(tuple(digits))
    assert len(seen) == n


# -- encoding -------------------------------------------------------------------

def test_t0_shares_are_unit_vectors(rng):
    p = pc.PirParams(3, 0)
    for share in pc.encode_query(2, (4, 1), p, rng):
        assert share.vector.tolist() == [0, 0, 1, 0]


def test_interpolating_shares_recovers_unit_vector():
    p = pc.PirParams(3, 1, word_bits_w=8)
    shares = pc.encode_query(1, (4, 1), p, np.random.default_rng(42))
    resp = [pc.ServerResponse(s.server_index, s.eval_point, s.vector) for s in shares]
    assert pc.interpolate(resp[:2], 0, p.gf).tolist() == [0, 1, 0, 0]
    assert pc.interpolate(resp, 0, p.gf).tolist() == [0, 1, 0, 0]


def test_index_out_of_range(rng):
    with pytest.raises(IndexOutOfRange):
        pc.encode_query(4, (4, 1), pc.PirParams(3, 1), rng)
    with pytest.raises(IndexOutOfRange):
        pc.encode_query(-1, (4, 1), pc.PirParams(3, 1), rng)


def test_only_constant_term_depends_on_index():
    gf = field(8)
    coeffs = gf.random(np.random.default_rng(1), (2, 5))
    a = pc.share_unit_vector(0, 5, (1, 2, 3), 2, coeffs, gf)
    b = pc.share_unit_vector(3, 5, (1, 2, 3), 2, coeffs, gf)
    for sa, sb in zip(a, b):
        diff = sa ^ sb
        assert diff.tolist() == [1, 0, 0, 1, 0]


# -- server ---------------------------------------------------------------------

def test_server_unit_and_zero_share():
    db = pc.layout(records(4, 6), 6, 10)
    e0 = pc.QueryShare(0, 1, (np.array([1, 0, 0, 0], dtype=np.uint16),))
    assert pc.server_compute(e0, db).vector.tolist() == db.words[0].tolist()
    z = pc.QueryShare(0, 1, (np.zeros(4, dtype=np.uint16),))
    assert not pc.server_compute(z, db).vector.any()


@pytest.mark.parametrize("w", (8, 10, 16, 20))
def test_server_matches_naive_double_loop(w):
    gf = field(w)
    rng = np.random.default_rng(w)
    db = pc.DatabaseMatrix(gf.random(rng, (4, 3)), 3 * w // 8, w)
    share = pc.QueryShare(0, 1, (gf.random(rng, 4),))
    assert (pc.server_compute(share, db).vector.tolist()
            == pc.server_compute_naive(share, db).vector.tolist())


def test_server_rejects_wrong_length():
    db = pc.layout(records(4, 6), 6, 10)
    with pytest.raises(ShapeMismatch):
        pc.server_compute(pc.QueryShare(0, 1, (np.zeros(3, dtype=np.uint16),)), db)
    with pytest.raises(ShapeMismatch):
        pc.server_compute(pc.QueryShare(0, 1, (np.zeros(0, dtype=np.uint16),
                                               np.zeros(2, dtype=np.uint16))), db)


# -- decoding -------------------------------------------------------------------

def test_single_record_database(rng):
    recs = records(1, 16)
    db = pc.layout(recs, 16, 10)
    assert fetch(db, 0, pc.PirParams(3, 1), rng) == recs[0]


@pytest.mark.parametrize("l", range(3, 7))
def test_four_record_fixture_all_betas(l):
    recs = records(4, 16, seed=l)
    db = pc.layout(recs, 16, 10)
    rng = np.random.default_rng(l)
    trials = 0
    for t in range(1, l - 1):
        for beta in range(4):
            for _ in range(5):
                assert fetch(db, beta, pc.PirParams(l, t), rng) == recs[beta]
                trials += 1
    assert trials >= 20


def test_decodes_with_exactly_quorum(rng):
    recs = records(8, 10)
    db = pc.layout(recs, 10, 16)
    p = pc.PirParams(6, 2, word_bits_w=16)
    assert fetch(db, 5, p, rng, keep=p.quorum) == recs[5]
    with pytest.raises(InsufficientResponses):
        fetch(db, 5, p, rng, keep=p.quorum - 1)


def test_inconsistent_extra_reply_detected(rng):
    recs = records(4, 10)
    db = pc.layout(recs, 10, 10)
    p = pc.PirParams(4, 1)
    resps = [pc.server_compute(s, db) for s in pc.encode_query(2, db.shape, p, rng)]
    bad = resps[3].vector.copy()
    bad[0] ^= 1
    resps[3] = pc.ServerResponse(3, 4, bad)
    with pytest.raises(InconsistentResponses):
        pc.decode(resps, p, 10)
    assert pc.decode(resps[:3], p, 10) == recs[2]


def test_recursion_depth_one_matches_flat(rng):
    recs = records(9, 12)
    db = pc.layout(recs, 12, 10)
    p = pc.PirParams(3, 1)
    a = pc.encode_query(4, db.shape, p, np.random.default_rng(5))
    b = pc.encode_query(4, db.shape, p, np.random.default_rng(5))
    assert all(np.array_equal(x.vector, y.vector) for x, y in zip(a, b))
    with pytest.raises(BadDepth):
        pc.encode_query_recursive(4, db.shape, p, rng)


def test_recursive_query_length_n9_d2(rng):
    p = pc.PirParams(3, 1, depth_d=2)
    shares = pc.encode_query_recursive(0, (9, 1), p, rng)
    assert [len(v) for v in shares[0].levels] == [3, 3]
    assert len(shares[0].vector) == 6


@pytest.mark.parametrize("l,t", [(6, 1), (3, 1), (4, 1)])
def test_recursive_27_records_all_betas(l, t):
    recs = records(27, 16, seed=27)
    db = pc.layout(recs, 16, 10)
    p = pc.PirParams(l, t, depth_d=3)
    rng = np.random.default_rng(l)
    for beta in range(27):
        shares = pc.encode_query_recursive(beta, db.shape, p, rng)
        resps = [pc.server_compute(s, db) for s in shares]
        assert pc.decode_recursive(resps, p, 16, beta, 27) == recs[beta]


def test_partial_fold_keeps_unfolded_levels_empty(rng):
    p = pc.PirParams(3, 1, depth_d=3)
    assert pc.wire_dims(27, p) == [3, 3, 0]
    shares = pc.encode_query(0, (27, 1), p, rng)
    assert [len(v) for v in shares[0].levels] == [3, 3, 0]


@settings(max_examples=40, deadline=None)
@given(n=st.integers(1, 64), size=st.integers(1, 64), w=st.sampled_from((8, 10, 16, 20)),
       l=st.integers(3, 6), d=st.integers(1, 3), seed=st.integers(0, 2 ** 32 - 1),
       data=st.data())
def test_correctness_property(n, size, w, l, d, seed, data):
    t = data.draw(st.integers(1, l - 2))
    rng = np.random.default_rng(seed)
    recs = [rng.bytes(size) for _ in range(n)]
    db = pc.layout(recs, size, w)
    try:
        params = pc.PirParams(l, t, w, d)
        pc.level_dims(n, d)
    except BadDepth:
        assert d > 1 and d > np.log2(n) if n > 1 else d > 1
        return
    beta = data.draw(st.integers(0, n - 1))
    assert fetch(db, beta, params, rng) == recs[beta]


# -- cost model -----------------------------------------------------------------

def test_cost_model_worked_example():
    shape = pc.DbShape(1000, 16384, 10, 0x409)
    cost = pc.cost_model(shape, pc.PirParams(4, 1), 1)
    assert cost.up_payload == 5000
    assert cost.down_payload == 65540
    assert cost.up_framing == 4 * (11 + 7 + 4)
    assert cost.down_framing == 4 * (11 + 10)


def test_cost_model_zero_ads_is_framing_only():
    shape = pc.DbShape(1000, 16384, 10, 0x409)
    cost = pc.cost_model(shape, pc.PirParams(4, 1), 0)
    assert cost.up_payload == cost.down_payload == 0
    assert cost.up_bytes == cost.up_framing > 0
    assert cost.down_bytes == cost.down_framing > 0


def test_cost_model_linear_in_records_at_depth_one():
    p = pc.PirParams(4, 1)
    a = pc.cost_model(pc.DbShape(1000, 16384, 10, 0x409), p, 1)
    b = pc.cost_model(pc.DbShape(2000, 16384, 10, 0x409), p, 1)
    assert b.up_payload == 2 * a.up_payload
    assert b.down_payload == a.down_payload


def test_recursion_shrinks_upload():
    shape = pc.DbShape(4096, 1024, 10, 0x409)
    flat = pc.cost_model(shape, pc.PirParams(5, 1), 1)
    rec = pc.cost_model(shape, pc.PirParams(5, 1, depth_d=2), 1)
    assert rec.up_payload < flat.up_payload
    assert rec.up_payload == 5 * 2 * 80  # two levels of 64 ten-bit words
