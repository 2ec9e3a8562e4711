"""Brute-force oracle checks run by ``airsum validate``.

Each check compares a fast decoder or closed form against exhaustive
enumeration or Monte-Carlo on a problem small enough to enumerate.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .aggregate import QuantizerConfig, dequantize, quantize_stochastic
from .analysis import exact_sum_ber, analytic_sum_ber, simulate_sum_ber
from .conv import ConvCode, bcjr_sum_posteriors, conv_encode, joint_viterbi
from .ldpc import bp_posteriors, builtin_matrix, ldpc_encode
from .phy import combination_table

TOY_CODE = ConvCode(3, (0o7, 0o5))


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str


def random_likelihoods(coded: np.ndarray, snr_db: float, rng) -> np.ndarray:
    """AWGN likelihood rows for users' coded bits with random per-position phases."""
    m, n = coded.shape
    g = np.exp(2j * np.pi * rng.random((n, m)))
    pts = g @ combination_table(m).T  # (n, 2^m)
    x = g * (2.0 * coded.T - 1.0)
    nv = m / 10 ** (snr_db / 10)
    y = x.sum(axis=1) + np.sqrt(nv / 2) * (rng.standard_normal(n) + 1j * rng.standard_normal(n))
    d2 = np.abs(y[:, None] - pts) ** 2
    ll = -d2 / nv
    return np.exp(ll - ll.max(axis=1, keepdims=True))


def _combo(codewords: list[np.ndarray]) -> np.ndarray:
    """Combination index per position, user u in bit u."""
    return sum(cw.astype(np.int64) << u for u, cw in enumerate(codewords))


def exhaustive_joint_ml(lh: np.ndarray, code: ConvCode, k: int) -> tuple[float, np.ndarray]:
    """Minimum joint path cost over all pairs of messages (two users)."""
    msgs = np.array(list(itertools.product((0, 1), repeat=k)), dtype=np.uint8)
    cws = np.stack([conv_encode(m, code) for m in msgs])
    nl = -np.log(np.maximum(lh, 1e-300))
    # cost(a, b) = sum_n nl[n, cwa[n] + 2 cwb[n]]
    base = nl[:, 0]
    ca = nl[:, 1] - base
    cb = nl[:, 2] - base
    cab = nl[:, 3] - nl[:, 1] - nl[:, 2] + base
    cwf = cws.astype(np.float64)
    cost = base.sum() + (cwf @ ca)[:, None] + (cwf @ cb)[None, :] + (cwf * cab) @ cwf.T
    i, j = np.unravel_index(np.argmin(cost), cost.shape)
    return float(cost[i, j]), msgs[i].astype(np.int64) + msgs[j]


def check_fsjd(instances: int = 50, k: int = 6, seed: int = 1) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(instances):
        msgs = rng.integers(0, 2, (2, k), dtype=np.uint8)
        coded = np.stack([conv_encode(m, TOY_CODE) for m in msgs])
        lh = random_likelihoods(coded, 3.0, rng)
        ref, _ = exhaustive_joint_ml(lh, TOY_CODE, k)
        got = joint_viterbi(lh, TOY_CODE, 2).cost
        worst = max(worst, abs(got - ref) / max(1.0, abs(ref)))
    return CheckResult("fsjd-vs-exhaustive", worst < 1e-9, f"max rel cost gap {worst:.2e}")


def exhaustive_sum_posteriors(lh: np.ndarray, code: ConvCode, k: int) -> np.ndarray:
    msgs = np.array(list(itertools.product((0, 1), repeat=k)), dtype=np.uint8)
    cws = [conv_encode(m, code) for m in msgs]
    post = np.zeros((k, 3))
    for a, ca in zip(msgs, cws):
        for b, cb in zip(msgs, cws):
            p = np.prod(lh[np.arange(len(ca)), _combo([ca, cb])])
            post[np.arange(k), a.astype(int) + b] += p
    return post / post.sum(axis=1, keepdims=True)


def check_bcjr(instances: int = 10, k: int = 5, seed: int = 2) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(instances):
        msgs = rng.integers(0, 2, (2, k), dtype=np.uint8)
        coded = np.stack([conv_encode(m, TOY_CODE) for m in msgs])
        lh = random_likelihoods(coded, 2.0, rng)
        ref = exhaustive_sum_posteriors(lh, TOY_CODE, k)
        worst = max(worst, float(np.max(np.abs(bcjr_sum_posteriors(lh, TOY_CODE, 2) - ref))))
    return CheckResult("bcjr-vs-exhaustive", worst < 1e-9, f"max posterior gap {worst:.2e}")


def exhaustive_bp_posteriors(lh: np.ndarray, h, m_users: int) -> np.ndarray:
    """Exact per-variable joint posteriors over all codeword tuples."""
    msgs = np.array(list(itertools.product((0, 1), repeat=h.k)), dtype=np.uint8)
    cws = ldpc_encode(msgs, h)
    q = 1 << m_users
    post = np.zeros((h.n, q))
    cols = np.arange(h.n)
    for combo in itertools.product(range(len(cws)), repeat=m_users):
        idx = _combo([cws[c] for c in combo])
        post[cols, idx] += np.prod(lh[cols, idx])
    return post / post.sum(axis=1, keepdims=True)


def check_bp(instances: int = 5, seed: int = 3) -> CheckResult:
    h = builtin_matrix("tree-13")
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(instances):
        msgs = rng.integers(0, 2, (2, h.k), dtype=np.uint8)
        lh = random_likelihoods(ldpc_encode(msgs, h), 2.0, rng)
        ref = exhaustive_bp_posteriors(lh, h, 2)
        post, _ = bp_posteriors(lh, h, 2, iterations=h.n)
        worst = max(worst, float(np.max(np.abs(post[0] - ref))))
    return CheckResult("bp-vs-exhaustive", worst < 1e-9, f"max posterior gap {worst:.2e}")


def check_sum_ber(positions: int = 200_000, seed: int = 4) -> CheckResult:
    rng = np.random.default_rng(seed)
    zs = []
    for alpha in (0.1, 0.01):
        for n in (2, 3, 4):
            p = exact_sum_ber(alpha, n)
            err, tot = simulate_sum_ber(alpha, n, positions, rng)
            zs.append(abs(err / tot - p) / math.sqrt(p * (1 - p) / tot))
    closed = abs(analytic_sum_ber(0.1, 2) - exact_sum_ber(0.1, 2))
    ok = max(zs) <= 4.0 and closed < 1e-12
    return CheckResult("sum-ber-monte-carlo", ok, f"max |z| {max(zs):.2f}, n=2 closed-form gap {closed:.1e}")


def check_quantizer(samples: int = 100_000, seed: int = 5) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for bits in (4, 8):
        cfg = QuantizerConfig(bits, 1.0)
        v = rng.uniform(-1, 1, samples)
        err = dequantize(quantize_stochastic(v, cfg, rng)) - v
        worst = max(worst, abs(err.mean()) / (err.std() / math.sqrt(samples)))
    return CheckResult("quantizer-unbiased", bool(worst <= 4.0), f"max |mean error| / (sigma/sqrt N) {worst:.2f}")


CHECKS: tuple[Callable[[], CheckResult], ...] = (
    check_fsjd, check_bcjr, check_bp, check_sum_ber, check_quantizer,
)


def run_all() -> list[CheckResult]:
    return [c() for c in CHECKS]
