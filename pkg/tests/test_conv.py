import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from airsum.conv import (
    ConvCode,
    DecodeStats,
    bcjr_sum_decode,
    bcjr_sum_posteriors,
    conv_encode,
    conv_psud_decode,
    fsjd_decode,
    joint_viterbi,
    rsjd_decode,
)
from airsum.phy import combination_table

WIFI = ConvCode()
TOY = ConvCode(3, (0o7, 0o5))


def noisy_grid(coded, snr_db, rng, phases=None):
    """Likelihood rows for superimposed BPSK with per-position or fixed phases."""
    m, n = coded.shape
    g = np.exp(2j * np.pi * rng.random((n, m))) if phases is None else np.broadcast_to(np.exp(1j * np.asarray(phases)), (n, m))
    pts = g @ combination_table(m).T
    y = (g * (2.0 * coded.T - 1)).sum(axis=1)
    nv = m / 10 ** (snr_db / 10) if np.isfinite(snr_db) else 0.0
    y = y + np.sqrt(nv / 2) * (rng.standard_normal(n) + 1j * rng.standard_normal(n))
    d2 = np.abs(y[:, None] - pts) ** 2
    if nv == 0:
        return (d2 <= d2.min(axis=1, keepdims=True) + 1e-9).astype(float)
    ll = -d2 / nv
    return np.exp(ll - ll.max(axis=1, keepdims=True))


def encode_users(msgs, code):
    return np.stack([conv_encode(m, code) for m in msgs])


def viterbi_single(lh, code):
    """Plain single-user soft Viterbi (reference oracle)."""
    L, n = code.constraint_length, code.n_out
    ns = 1 << (L - 1)
    nl = -np.log(np.maximum(lh, 1e-300))
    stages = lh.shape[0] // n
    k = stages - (L - 1)
    metric = np.full(ns, np.inf)
    metric[0] = 0.0
    back = []
    for t in range(stages):
        new = np.full(ns, np.inf)
        arg = np.zeros(ns, dtype=int)
        for s in range(ns):
            if not np.isfinite(metric[s]):
                continue
            for a in ((0, 1) if t < k else (0,)):
                reg = (a << (L - 1)) | s
                cost = metric[s]
                for j, g in enumerate(code.generators):
                    bit = bin(reg & g).count("1") & 1
                    cost += nl[t * n + j, bit]
                nxt = reg >> 1
                if cost < new[nxt]:
                    new[nxt], arg[nxt] = cost, s
        back.append(arg)
        metric = new
    s, bits = 0, []
    for t in range(stages - 1, -1, -1):
        bits.append(s >> (L - 2))
        s = back[t][s]
    return np.array(bits[::-1][:k])


def test_code_validation():
    with pytest.raises(ValueError):
        ConvCode(1, (1,))
    with pytest.raises(ValueError):
        ConvCode(3, (0o17,))
    with pytest.raises(ValueError):
        ConvCode(3, (0,))
    assert WIFI.n_states == 64 and WIFI.rate == 0.5
    assert WIFI.coded_length(1194) == 2400


def test_encode_zero_and_length():
    out = conv_encode(np.zeros(10, np.uint8), WIFI)
    assert out.shape == (32,) and not out.any()


def test_impulse_response_133_171():
    out = conv_encode([1, 0, 0, 0, 0, 0, 0], WIFI)
    # 133 = 1 011 011, 171 = 1 111 001 read from the current input backwards
    expected = [1, 1, 0, 1, 1, 1, 1, 1, 0, 0, 1, 0, 1, 1] + [0] * 12
    np.testing.assert_array_equal(out, expected)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(0, 1), min_size=1, max_size=40), st.integers(0, 2**32 - 1))
def test_encode_linearity(a, seed):
    a = np.array(a, np.uint8)
    b = np.random.default_rng(seed).integers(0, 2, a.size, dtype=np.uint8)
    np.testing.assert_array_equal(conv_encode(a, WIFI) ^ conv_encode(b, WIFI), conv_encode(a ^ b, WIFI))


def test_fsjd_matches_exhaustive_small(rng):
    k = 6
    msgs_all = np.array(list(itertools.product((0, 1), repeat=k)), np.uint8)
    cws = encode_users(msgs_all, TOY)
    for _ in range(30):
        msgs = rng.integers(0, 2, (2, k), dtype=np.uint8)
        lh = noisy_grid(encode_users(msgs, TOY), 2.0, rng)
        nl = -np.log(lh)
        best = min(
            nl[np.arange(cws.shape[1]), cws[i] + 2 * cws[j]].sum()
            for i in range(len(cws)) for j in range(len(cws))
        )
        assert joint_viterbi(lh, TOY, 2).cost == pytest.approx(best, rel=1e-12)


@pytest.mark.parametrize("code", [TOY, WIFI])
def test_single_user_matches_reference_viterbi(code, rng):
    for _ in range(5):
        msg = rng.integers(0, 2, (1, 40), dtype=np.uint8)
        lh = noisy_grid(encode_users(msg, code), -1.0, rng)
        ref = viterbi_single(lh, code)
        np.testing.assert_array_equal(fsjd_decode(lh, code, 1), ref)
        np.testing.assert_array_equal(conv_psud_decode(lh, code, 1), ref)


@pytest.mark.parametrize("m", [1, 2, 3])
def test_rsjd_full_equals_fsjd(m, rng):
    code = TOY if m == 3 else WIFI
    for _ in range(3):
        msgs = rng.integers(0, 2, (m, 60), dtype=np.uint8)
        lh = noisy_grid(encode_users(msgs, code), 3.0, rng)
        full = 1 << (m * code.memory)
        np.testing.assert_array_equal(rsjd_decode(lh, code, m, full), fsjd_decode(lh, code, m))


def test_rsjd_full_equals_fsjd_with_ties(rng):
    msgs = rng.integers(0, 2, (2, 80), dtype=np.uint8)
    lh = np.round(noisy_grid(encode_users(msgs, TOY), 0.0, rng), 1) + 0.1
    np.testing.assert_array_equal(rsjd_decode(lh, TOY, 2, 16), fsjd_decode(lh, TOY, 2))


def greedy_oracle(lh, code, m):
    """R = 1: keep only the lowest-metric successor (lowest state on ties)."""
    L, n = code.constraint_length, code.n_out
    mem = L - 1
    nl = -np.log(np.maximum(lh, 1e-300))
    stages = lh.shape[0] // n
    k = stages - mem
    state, metric, inputs = 0, 0.0, []
    for t in range(stages):
        cands = []
        for e in (range(1 << m) if t < k else (0,)):
            nxt, cost = 0, metric
            combos = [0] * n
            for u in range(m):
                s = (state >> (u * mem)) & ((1 << mem) - 1)
                reg = (((e >> u) & 1) << mem) | s
                nxt |= (reg >> 1) << (u * mem)
                for j, g in enumerate(code.generators):
                    combos[j] |= (bin(reg & g).count("1") & 1) << u
            cost += sum(nl[t * n + j, combos[j]] for j in range(n))
            cands.append((cost, nxt, e))
        metric, state, e = min(cands)
        inputs.append(e)
    return np.array([bin(e).count("1") for e in inputs[:k]])


def test_rsjd_r1_is_greedy(rng):
    for _ in range(10):
        msgs = rng.integers(0, 2, (2, 30), dtype=np.uint8)
        lh = noisy_grid(encode_users(msgs, TOY), 1.0, rng)
        np.testing.assert_array_equal(rsjd_decode(lh, TOY, 2, 1), greedy_oracle(lh, TOY, 2))


def test_rsjd_retained_bounds():
    lh = np.ones((TOY.coded_length(4), 4))
    with pytest.raises(ValueError):
        joint_viterbi(lh, TOY, 2, retained=0)
    with pytest.raises(ValueError):
        joint_viterbi(lh, TOY, 2, retained=17)


def test_infeasible_and_malformed_grids():
    lh = np.ones((TOY.coded_length(4), 4))
    lh[3] = 0
    with pytest.raises(ValueError, match="infeasible"):
        fsjd_decode(lh, TOY, 2)
    with pytest.raises(ValueError):
        fsjd_decode(np.ones((TOY.coded_length(4), 3)), TOY, 2)
    with pytest.raises(ValueError):
        fsjd_decode(np.ones((5, 4)), TOY, 2)


@pytest.mark.parametrize("decoder", ["fsjd", "rsjd", "bcjr", "bcjr256", "psud"])
def test_noiseless_orthogonal_exact(decoder, rng):
    msgs = rng.integers(0, 2, (2, 200), dtype=np.uint8)
    lh = noisy_grid(encode_users(msgs, WIFI), np.inf, rng, phases=[0.0, np.pi / 2])
    run = {
        "fsjd": lambda: fsjd_decode(lh, WIFI, 2),
        "rsjd": lambda: rsjd_decode(lh, WIFI, 2, 256),
        "bcjr": lambda: bcjr_sum_decode(lh, WIFI, 2),
        "bcjr256": lambda: bcjr_sum_decode(lh, WIFI, 2, 256),
        "psud": lambda: conv_psud_decode(lh, WIFI, 2),
    }[decoder]
    np.testing.assert_array_equal(run(), msgs.sum(axis=0))


@settings(max_examples=15, deadline=None)
@given(st.floats(1e-3, 1e3), st.integers(0, 2**32 - 1))
def test_scale_invariance(scale, seed):
    rng = np.random.default_rng(seed)
    msgs = rng.integers(0, 2, (2, 20), dtype=np.uint8)
    lh = noisy_grid(encode_users(msgs, TOY), 2.0, rng)
    for dec in (
        lambda x: fsjd_decode(x, TOY, 2),
        lambda x: rsjd_decode(x, TOY, 2, 4),
        lambda x: bcjr_sum_decode(x, TOY, 2),
        lambda x: conv_psud_decode(x, TOY, 2),
    ):
        out = dec(lh)
        np.testing.assert_array_equal(dec(lh * scale), out)
        assert out.min() >= 0 and out.max() <= 2


def exhaustive_posteriors(lh, code, k):
    msgs = np.array(list(itertools.product((0, 1), repeat=k)), np.uint8)
    cws = encode_users(msgs, code)
    pos = np.arange(cws.shape[1])
    post = np.zeros((k, 3))
    for i in range(len(msgs)):
        for j in range(len(msgs)):
            w = np.prod(lh[pos, cws[i] + 2 * cws[j]])
            post[np.arange(k), msgs[i].astype(int) + msgs[j]] += w
    return post / post.sum(axis=1, keepdims=True)


@pytest.mark.parametrize("retained", [None, 16])
def test_bcjr_posteriors_match_exhaustive(retained, rng):
    for _ in range(5):
        msgs = rng.integers(0, 2, (2, 6), dtype=np.uint8)
        lh = noisy_grid(encode_users(msgs, TOY), 1.0, rng)
        post = bcjr_sum_posteriors(lh, TOY, 2, retained)
        np.testing.assert_allclose(post, exhaustive_posteriors(lh, TOY, 6), atol=1e-12)


def test_acs_counts():
    k = 100
    lh = np.ones((WIFI.coded_length(k), 4))
    stats = DecodeStats()
    fsjd_decode(lh, WIFI, 2, stats)
    assert stats.acs_ops == 4096 * (k + 6)
    stats = DecodeStats()
    rsjd_decode(lh, WIFI, 2, 256, stats)
    assert stats.acs_ops <= 256 * (k + 6)
    assert stats.frames == 1
