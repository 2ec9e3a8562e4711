import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from airsum.analysis import (
    ConvergenceParams,
    SweepSpec,
    analytic_sum_ber,
    exact_sum_ber,
    format_sweep_csv,
    run_sweep,
    simulate_sum_ber,
    sum_ber,
    theorem1_bound,
    wilson_interval,
)
from airsum.aggregate import QuantizerConfig, lemma1_error_terms
from airsum.scenarios import PhaseScenario


def test_sum_ber_example():
    assert sum_ber([0, 1, 2, 1], [0, 1, 1, 1]) == 0.25
    assert sum_ber([], []) == 0.0
    with pytest.raises(ValueError):
        sum_ber([0, 1], [0])


def test_wilson_interval():
    lo, hi = wilson_interval(0, 100)
    assert lo == 0.0 and 0.03 < hi < 0.04
    lo, hi = wilson_interval(50, 100)
    assert lo < 0.5 < hi and hi - 0.5 == pytest.approx(0.5 - lo)
    assert wilson_interval(0, 0) == (0.0, 1.0)


def test_analytic_examples():
    assert analytic_sum_ber(0.1, 2) == pytest.approx(0.185, abs=1e-12)
    for n in range(2, 7):
        assert analytic_sum_ber(0.0, n) == 0.0
        assert exact_sum_ber(0.0, n) == 0.0
    with pytest.raises(ValueError):
        analytic_sum_ber(0.1, 1)


@pytest.mark.parametrize("n", [2, 3, 4, 5])
@pytest.mark.parametrize("alpha", [1e-3, 1e-4, 1e-5])
def test_sum_ber_sandwich(alpha, n):
    beta = analytic_sum_ber(alpha, n)
    assert alpha < beta < 1 - (1 - alpha) ** n


def brute_sum_ber(alpha, n):
    """Enumerate every source word and flip pattern."""
    total = 0.0
    for src in itertools.product((0, 1), repeat=n):
        for flips in itertools.product((0, 1), repeat=n):
            k = sum(flips)
            p = alpha**k * (1 - alpha) ** (n - k) / 2**n
            if sum(s ^ f for s, f in zip(src, flips)) != sum(src):
                total += p
    return total


@pytest.mark.parametrize("n", [2, 3, 4, 5])
@pytest.mark.parametrize("alpha", [0.1, 0.01, 0.3])
def test_exact_matches_enumeration(alpha, n):
    assert exact_sum_ber(alpha, n) == pytest.approx(brute_sum_ber(alpha, n), rel=1e-12)


def test_closed_form_exact_for_two_users():
    for a in np.linspace(0, 0.9, 10):
        assert analytic_sum_ber(a, 2) == pytest.approx(exact_sum_ber(a, 2), abs=1e-14)


@pytest.mark.parametrize("n", [2, 3, 4])
def test_exact_vs_monte_carlo(n):
    p = exact_sum_ber(0.05, n)
    err, tot = simulate_sum_ber(0.05, n, 400_000, 11)
    assert abs(err / tot - p) <= 4 * math.sqrt(p * (1 - p) / tot)


def params(**kw):
    base = dict(mu=1.0, L_smooth=4.0, gamma=10.0, tau=5, G2=1.0, sigma2=(0.1, 0.2),
                Gamma=0.5, p=(0.5, 0.5), T=30, d=10, bits=8, spans=2.0, alphas=1e-3)
    base.update(kw)
    return ConvergenceParams(**base)


def test_params_validation():
    with pytest.raises(ValueError):
        params(gamma=3.0)  # must exceed L/mu = 4
    with pytest.raises(ValueError):
        params(p=(0.7, 0.7))
    with pytest.raises(ValueError):
        params(p=(1.0,))


def test_bound_error_free_has_only_first_term():
    P = params(alphas=0.0, bits=float("inf"))
    tr = theorem1_bound(P, 3.0)
    assert not tr.quant.any() and not tr.kterm.any()
    t = np.arange(1, P.T + 1)
    np.testing.assert_allclose(tr.total, P.L_smooth / 2 / (P.gamma + t) * (4 * P.U / P.mu**2 + P.gamma * 3.0))


def test_bound_nested_loop_oracle():
    P = params(bits=np.array([[6, 8]] * 30), alphas=np.linspace(0, 1e-2, 30)[:, None])
    tr = theorem1_bound(P, 1.0)
    # direct double sum over rounds, independent of the recursion
    w = np.array(P.p)
    for t in range(1, P.T + 1):
        q = k = 0.0
        for j in range(t):
            prod = 1.0
            for i in range(j + 1, t):
                prod *= 1 - 2 / (P.gamma + i)
            ej = [lemma1_error_terms(QuantizerConfig(int(P.bits[j][u])), P.d, float(P.alphas[j][0]), 2.0) for u in range(2)]
            q += prod * sum(w[u] * ej[u][0] for u in range(2))
            k += prod * sum(w[u] * ej[u][1] for u in range(2))
        assert tr.quant[t - 1] == pytest.approx(P.L_smooth / 2 * q, rel=1e-12)
        assert tr.kterm[t - 1] == pytest.approx(P.L_smooth / 2 * k, rel=1e-12, abs=1e-300)


def test_U_constant():
    P = params()
    t = 5
    expected = t * t * 0.3 + t * 1.0 + 2 * 4.0 * t * t * 0.5 + 3.0 * t * (t - 1) * (2 * t - 1) / 6 * 1.0
    assert P.U == pytest.approx(expected)


@settings(max_examples=20, deadline=None)
@given(st.integers(2, 12))
def test_bound_quant_term_decreases_with_bits(b):
    lo = theorem1_bound(params(bits=b, alphas=0.0), 1.0).quant
    hi = theorem1_bound(params(bits=b + 1, alphas=0.0), 1.0).quant
    assert np.all(hi < lo)


def test_sweep_spec_validation():
    with pytest.raises(ValueError):
        SweepSpec(snr_db=())
    with pytest.raises(ValueError):
        SweepSpec(snr_db=(1.0,), decoders=("nope",))
    with pytest.raises(ValueError):
        SweepSpec(snr_db=(1.0,), users=2, gains=(1.0,))


SMALL = SweepSpec(
    snr_db=(2.0, 8.0), decoders=("fsjd", "conv-psud", "ldpc-jd"),
    scenario=PhaseScenario("fixed", math.pi / 2), seed=3,
)


def test_sweep_deterministic_and_job_independent():
    a = run_sweep(SMALL)
    b = run_sweep(SMALL)
    c = run_sweep(SMALL, jobs=2)
    assert format_sweep_csv(a) == format_sweep_csv(b) == format_sweep_csv(c)
    assert len(a) == 6
    assert [r.decoder for r in a[:3]] == list(SMALL.decoders)


def test_sweep_monotone_in_snr():
    rows = run_sweep(SMALL)
    by = {(r.decoder, r.snr_db): r.sum_ber for r in rows}
    for d in SMALL.decoders:
        assert by[(d, 8.0)] <= by[(d, 2.0)]


def test_noiseless_sweep_is_error_free():
    spec = SweepSpec(snr_db=(math.inf,), decoders=("fsjd", "rsjd", "bcjr", "conv-psud", "ldpc-jd", "ldpc-psud"),
                     scenario=PhaseScenario("fixed", math.pi / 2))
    rows = run_sweep(spec)
    assert all(r.sum_errors == 0 and r.sum_bits > 0 for r in rows)
    assert all(r.ci_lo == 0.0 for r in rows)


def test_target_bits_sets_frames():
    spec = SweepSpec(snr_db=(math.inf,), decoders=("fsjd",), target_bits=30_000)
    assert spec.frames_for("conv") == math.ceil(30_000 / (10 * 1194))
