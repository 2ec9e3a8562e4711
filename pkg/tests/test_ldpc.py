import itertools

import numpy as np
import pytest
import sympy
from hypothesis import given, settings, strategies as st

import airsum.ldpc as ldpc
from airsum.ldpc import (
    DecodeFailure,
    ParityCheckMatrix,
    bp_posteriors,
    builtin_matrix,
    chk_update,
    init_messages,
    ldpc_encode,
    ldpc_jt_decode,
    ldpc_psud_decode,
    resolve_matrix,
    sum_bit_decision,
    sum_decisions,
    syndrome,
    var_update,
)
from airsum.phy import combination_table

WIFI = builtin_matrix()
TREE = builtin_matrix("tree-13")

simplex4 = st.lists(st.floats(0.01, 1.0), min_size=4, max_size=4).map(lambda v: np.array(v) / sum(v))


def grid(coded, snr_db, rng, phases=None):
    m, n = coded.shape
    g = np.exp(2j * np.pi * rng.random((n, m))) if phases is None else np.broadcast_to(np.exp(1j * np.asarray(phases)), (n, m))
    pts = g @ combination_table(m).T
    y = (g * (2.0 * coded.T - 1)).sum(axis=1)
    nv = m / 10 ** (snr_db / 10)
    y = y + np.sqrt(nv / 2) * (rng.standard_normal(n) + 1j * rng.standard_normal(n))
    ll = -np.abs(y[:, None] - pts) ** 2 / nv
    return np.exp(ll - ll.max(axis=1, keepdims=True))


def test_builtin_matrix_shape():
    assert (WIFI.n, WIFI.k, WIFI.m) == (1296, 648, 648)
    d = WIFI.dense()
    assert d.any(axis=0).all() and d.any(axis=1).all()
    assert (TREE.n, TREE.k) == (13, 7)
    with pytest.raises(ValueError):
        builtin_matrix("nope")


def test_pcm_roundtrip(tmp_path):
    p = tmp_path / "t.pcm"
    TREE.save(p)
    back = resolve_matrix(str(p))
    assert back.checks == TREE.checks and back.n == TREE.n
    text = p.read_text().splitlines()
    with pytest.raises(ValueError):
        ParityCheckMatrix.parse(text[1:])
    with pytest.raises(ValueError):
        ParityCheckMatrix.parse([text[0], "13 6 6"] + text[2:])
    with pytest.raises(ValueError):
        ParityCheckMatrix.parse(text[:-1])


def test_matrix_validation():
    with pytest.raises(ValueError):
        ParityCheckMatrix(3, ((0, 1),))  # column 2 unused
    with pytest.raises(ValueError):
        ParityCheckMatrix(3, ((0, 1, 2), ()))


def test_qc_expansion_matches_dense():
    base = [[0, -1, 1], [2, 0, -1]]
    h = ParityCheckMatrix.from_qc(base, 3)
    d = h.dense()
    assert d.shape == (6, 9)
    # block (0, 0) is the identity, block (0, 2) shifted by one
    np.testing.assert_array_equal(d[:3, :3], np.eye(3, dtype=d.dtype))
    np.testing.assert_array_equal(d[:3, 6:], np.roll(np.eye(3, dtype=d.dtype), 1, axis=1))
    assert not d[:3, 3:6].any()


def test_encode_zero_and_syndrome(rng):
    assert not ldpc_encode(np.zeros(WIFI.k, np.uint8), WIFI).any()
    msgs = rng.integers(0, 2, (5, WIFI.k), dtype=np.uint8)
    cws = ldpc_encode(msgs, WIFI)
    assert not syndrome(cws, WIFI).any()
    np.testing.assert_array_equal(cws[:, WIFI.info_positions], msgs)
    with pytest.raises(ValueError):
        ldpc_encode(np.zeros(5, np.uint8), WIFI)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_encode_linearity(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.integers(0, 2, (2, WIFI.k), dtype=np.uint8)
    np.testing.assert_array_equal(ldpc_encode(a, WIFI) ^ ldpc_encode(b, WIFI), ldpc_encode(a ^ b, WIFI))


def test_init_messages():
    np.testing.assert_allclose(init_messages([[1, 0, 0, 0]]), [[1, 0, 0, 0]])
    np.testing.assert_allclose(init_messages([[2, 2, 2, 2]]), [[0.25] * 4])
    np.testing.assert_allclose(init_messages([[3, 1, 0, 0]]), [[0.75, 0.25, 0, 0]])
    with pytest.raises(ValueError):
        init_messages([[0, 0, 0, 0]])


def test_chk_update_examples():
    np.testing.assert_allclose(chk_update([[1, 0, 0, 0], [1, 0, 0, 0]]), [1, 0, 0, 0])
    np.testing.assert_allclose(chk_update([[0.25] * 4, [0.1, 0.2, 0.3, 0.4]]), [0.25] * 4)
    np.testing.assert_allclose(chk_update([[0.5, 0.5, 0, 0], [0.5, 0.5, 0, 0]]), [0.5, 0.5, 0, 0])
    with pytest.raises(ValueError):
        chk_update([])
    with pytest.raises(ValueError):
        chk_update([[1, 0, 0], [1, 0, 0]])


@settings(max_examples=50, deadline=None)
@given(simplex4, simplex4, simplex4)
def test_chk_update_commutative_associative(a, b, c):
    ab_c = chk_update([chk_update([a, b]), c])
    a_bc = chk_update([a, chk_update([b, c])])
    np.testing.assert_allclose(ab_c, a_bc, rtol=1e-12)
    np.testing.assert_allclose(chk_update([a, b, c]), chk_update([c, a, b]), rtol=1e-12)
    assert abs(ab_c.sum() - 1) < 1e-9 and ab_c.min() >= 0


def test_chk_update_symbolic_sixteen_products():
    p = sympy.symbols("p00 p01 p10 p11")
    q = sympy.symbols("q00 q01 q10 q11")
    out = chk_update([list(p), list(q)])
    # each output sums the four products whose label XOR equals its index
    for v in range(4):
        expected = sum(p[a] * q[a ^ v] for a in range(4))
        assert sympy.expand(out[v] - expected) == 0
    terms = set()
    for v in range(4):
        terms |= set(sympy.Add.make_args(sympy.expand(out[v])))
    assert terms == {pa * qb for pa in p for qb in q}


def test_var_update_examples():
    np.testing.assert_allclose(var_update([1, 0, 0, 0], [[1, 0, 0, 0]]), [1, 0, 0, 0])
    np.testing.assert_allclose(var_update([0.5, 0.5, 0, 0], [[0.5, 0, 0.5, 0]]), [1, 0, 0, 0])
    v = np.array([0.1, 0.2, 0.3, 0.4])
    np.testing.assert_allclose(var_update([0.25] * 4, [v]), v)
    with pytest.raises(DecodeFailure):
        var_update([1, 0, 0, 0], [[0, 1, 0, 0]])


def test_sum_bit_decision_examples():
    assert sum_bit_decision([0.4, 0.1, 0.2, 0.3], 2) == 0
    assert sum_bit_decision([1, 0, 0, 0], 2) == 0
    assert sum_bit_decision([0, 0.5, 0.5, 0], 2) == 1
    post = np.array([[0.4, 0.1, 0.2, 0.3], [0, 0.5, 0.5, 0], [0, 0, 0.1, 0.9]])
    np.testing.assert_array_equal(sum_decisions(post, 2), [0, 1, 2])


def exact_marginals(lh, h, m):
    msgs = np.array(list(itertools.product((0, 1), repeat=h.k)), np.uint8)
    cws = ldpc_encode(msgs, h).astype(np.int64)
    cols = np.arange(h.n)
    post = np.zeros((h.n, 1 << m))
    for combo in itertools.product(range(len(cws)), repeat=m):
        idx = sum(cws[c] << u for u, c in enumerate(combo))
        post[cols, idx] += np.prod(lh[cols, idx])
    return post / post.sum(axis=1, keepdims=True)


def test_tree_code_is_cycle_free():
    # a Tanner graph is a forest iff edges = nodes - components; here one tree
    edges = sum(len(c) for c in TREE.checks)
    assert edges == TREE.n + TREE.m - 1


def test_bp_matches_exact_marginals_on_tree(rng):
    for _ in range(5):
        msgs = rng.integers(0, 2, (2, TREE.k), dtype=np.uint8)
        lh = grid(ldpc_encode(msgs, TREE), 1.0, rng)
        ref = exact_marginals(lh, TREE, 2)
        post, failed = bp_posteriors(lh, TREE, 2, iterations=TREE.n)
        assert not failed.any()
        np.testing.assert_allclose(post[0], ref, atol=1e-12)
        np.testing.assert_array_equal(
            ldpc_jt_decode(lh, TREE, 2, TREE.n), sum_decisions(ref[TREE.info_positions], 2)
        )


def reference_llr_bp(lh, h, iterations):
    """Textbook single-user sum-product decoder in the LLR domain (tanh rule)."""
    clip = np.log(1.0 / ldpc.FLOOR)
    ev = np.log(lh[:, 0]) - np.log(lh[:, 1])  # LLR of bit 0
    edges = [(c, v) for c, row in enumerate(h.checks) for v in row]
    cs = np.array([e[0] for e in edges])
    vs = np.array([e[1] for e in edges])
    v2c = ev[vs].copy()
    c2v = np.zeros(len(edges))
    for _ in range(iterations):
        t = np.tanh(np.clip(v2c, -clip, clip) / 2)
        for c in range(h.m):
            idx = np.nonzero(cs == c)[0]
            for i in idx:
                prod = np.prod(t[idx[idx != i]])
                c2v[i] = np.clip(2 * np.arctanh(np.clip(prod, -1 + 1e-16, 1 - 1e-16)), -clip, clip)
        total = ev + np.bincount(vs, weights=c2v, minlength=h.n)
        v2c = total[vs] - c2v
    total = ev + np.bincount(vs, weights=c2v, minlength=h.n)
    return (total < 0).astype(np.int64)


def test_single_user_matches_reference_bp(rng):
    for snr in (-1.0, 1.0):
        msg = rng.integers(0, 2, (1, WIFI.k), dtype=np.uint8)
        lh = grid(ldpc_encode(msg, WIFI), snr, rng, phases=[0.0])
        ref = reference_llr_bp(lh, WIFI, 10)[WIFI.info_positions]
        np.testing.assert_array_equal(ldpc_jt_decode(lh, WIFI, 1, 10), ref)
        np.testing.assert_array_equal(ldpc_psud_decode(lh, WIFI, 1, 10), ref)


def test_noiseless_indicator_one_iteration(rng):
    msgs = rng.integers(0, 2, (2, WIFI.k), dtype=np.uint8)
    cw = ldpc_encode(msgs, WIFI).astype(np.int64)
    lh = np.zeros((WIFI.n, 4))
    lh[np.arange(WIFI.n), cw[0] + 2 * cw[1]] = 1.0
    np.testing.assert_array_equal(ldpc_jt_decode(lh, WIFI, 2, 1), msgs.sum(axis=0))


def test_psud_noiseless_orthogonal(rng):
    msgs = rng.integers(0, 2, (2, WIFI.k), dtype=np.uint8)
    lh = grid(ldpc_encode(msgs, WIFI), 40.0, rng, phases=[0.0, np.pi / 2])
    np.testing.assert_array_equal(ldpc_psud_decode(lh, WIFI, 2), msgs.sum(axis=0))
    np.testing.assert_array_equal(ldpc_jt_decode(lh, WIFI, 2), msgs.sum(axis=0))


def test_posteriors_on_simplex_and_scale_invariant(rng):
    msgs = rng.integers(0, 2, (2, WIFI.k), dtype=np.uint8)
    lh = grid(ldpc_encode(msgs, WIFI), 3.0, rng)
    post, _ = bp_posteriors(lh, WIFI, 2, 5)
    np.testing.assert_allclose(post.sum(axis=2), 1.0, atol=1e-9)
    assert post.min() >= 0
    np.testing.assert_array_equal(ldpc_jt_decode(lh * 7.5, WIFI, 2, 5), ldpc_jt_decode(lh, WIFI, 2, 5))


def test_multiple_blocks(rng):
    msgs = rng.integers(0, 2, (2, 3, TREE.k), dtype=np.uint8)
    cws = ldpc_encode(msgs.reshape(-1, TREE.k), TREE).reshape(2, -1)
    lh = grid(cws, 30.0, rng, phases=[0.0, np.pi / 2])
    np.testing.assert_array_equal(ldpc_jt_decode(lh, TREE, 2), msgs.sum(axis=0).reshape(-1))
    with pytest.raises(ValueError):
        ldpc_jt_decode(lh[:-1], TREE, 2)


def test_contradiction_reported(monkeypatch):
    monkeypatch.setattr(ldpc, "FLOOR", 0.0)
    cw = np.zeros(TREE.n, np.int64)
    cw[0] = 1  # not a codeword
    lh = np.zeros((TREE.n, 2))
    lh[np.arange(TREE.n), cw] = 1.0
    with pytest.raises(DecodeFailure):
        ldpc_jt_decode(lh, TREE, 1, 3)
    out = ldpc_jt_decode(lh, TREE, 1, 3, allow_failure=True)
    assert (out == -1).all()
