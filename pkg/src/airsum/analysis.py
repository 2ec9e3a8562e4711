"""SUM-BER metrics, closed forms, the convergence bound and Monte-Carlo sweeps."""

from __future__ import annotations

import csv
import io
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from typing import Sequence

import numpy as np

from .aggregate import QuantizerConfig, lemma1_error_terms
from .conv import (
    ConvCode,
    DecodeStats,
    bcjr_sum_decode,
    conv_encode,
    conv_psud_decode,
    fsjd_decode,
    rsjd_decode,
)
from .ldpc import DEFAULT_ITERATIONS, ParityCheckMatrix, ldpc_encode, ldpc_jt_decode, ldpc_psud_decode, resolve_matrix
from .phy import FrameConfig, soft_joint_likelihoods, stale_csi, superimpose
from .scenarios import PhaseScenario

log = logging.getLogger(__name__)

CONV_DECODERS = ("fsjd", "rsjd", "bcjr", "conv-psud")
LDPC_DECODERS = ("ldpc-jd", "ldpc-psud")
DECODERS = CONV_DECODERS + LDPC_DECODERS
CSV_COLUMNS = (
    "decoder", "users", "phase_scenario", "snr_db", "frames", "sum_bits",
    "sum_errors", "sum_ber", "ci_lo", "ci_hi", "acs_ops",
)


# ---------------------------------------------------------------------------
# metrics and closed forms

def sum_ber(decoded, truth) -> float:
    """Fraction of positions whose SUM symbols differ."""
    a = np.asarray(decoded)
    b = np.asarray(truth)
    if a.shape != b.shape:
        raise ValueError("SUM words must have equal length")
    if a.size == 0:
        return 0.0
    return float(np.mean(a != b))


def wilson_interval(errors: int, n: int, z: float = 1.959963984540054) -> tuple[float, float]:
    if n <= 0:
        return 0.0, 1.0
    p = errors / n
    den = 1 + z * z / n
    centre = (p + z * z / (2 * n)) / den
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / den
    lo = 0.0 if errors == 0 else max(0.0, centre - half)
    hi = 1.0 if errors == n else min(1.0, centre + half)
    return lo, hi


def analytic_sum_ber(alpha: float, n: int) -> float:
    """Closed-form SUM BER of n users with independent source bit errors at rate alpha:
    1 - (1-a)^n - 2^-n sum_{n0=1}^{n-1} C(n,n0) sum_{e=1}^{min(n0,n-n0)} a^(2e).

    Exact for n = 2.  For n >= 3 it leaves out how many ways cancelling error
    pairs can be placed and the probability that the remaining bits are
    correct; :func:`exact_sum_ber` keeps both.
    """
    if not 0.0 <= alpha < 1.0:
        raise ValueError("alpha must lie in [0, 1)")
    if n < 2:
        raise ValueError("need at least two users")
    tail = sum(
        math.comb(n, n0) * sum(alpha ** (2 * e) for e in range(1, min(n0, n - n0) + 1))
        for n0 in range(1, n)
    )
    return 1.0 - (1.0 - alpha) ** n - tail / 2.0**n


def exact_sum_ber(alpha: float, n: int) -> float:
    """SUM BER under uniform source bits and i.i.d. flips, counting every
    error pattern whose up and down flips cancel."""
    keep = 0.0
    for n0 in range(n + 1):
        for e in range(min(n0, n - n0) + 1):
            keep += (
                math.comb(n, n0) * math.comb(n0, e) * math.comb(n - n0, e)
                * alpha ** (2 * e) * (1 - alpha) ** (n - 2 * e)
            )
    return 1.0 - keep / 2.0**n


def simulate_sum_ber(alpha: float, n: int, positions: int, rng=None) -> tuple[int, int]:
    """Monte-Carlo SUM errors of n independent bit streams with flip rate alpha."""
    rng = np.random.default_rng(rng)
    bits = rng.integers(0, 2, (n, positions), dtype=np.int8)
    flips = (rng.random((n, positions)) < alpha).astype(np.int8)
    errors = int(np.count_nonzero((bits ^ flips).sum(axis=0) != bits.sum(axis=0)))
    return errors, positions


# ---------------------------------------------------------------------------
# convergence bound

@dataclass(frozen=True)
class ConvergenceParams:
    """Constants of the FedAvg convergence bound.

    ``bits``, ``spans`` and ``alphas`` broadcast to (rounds, devices); a bit
    width of ``inf`` means unquantized (no quantization or bit-error term).
    """

    mu: float
    L_smooth: float
    gamma: float
    tau: int
    G2: float
    sigma2: tuple[float, ...]
    Gamma: float
    p: tuple[float, ...]
    T: int
    d: int
    bits: object = 8
    spans: object = 2.0
    alphas: object = 0.0

    def __post_init__(self):
        object.__setattr__(self, "sigma2", tuple(float(s) for s in self.sigma2))
        object.__setattr__(self, "p", tuple(float(x) for x in self.p))
        if self.mu <= 0 or self.L_smooth <= 0 or self.T < 1 or self.tau < 1 or self.d < 1:
            raise ValueError("mu, L_smooth, T, tau and d must be positive")
        if not self.gamma > max(2.0, 2.0 / self.mu, self.L_smooth / self.mu):
            raise ValueError("gamma must exceed max(2, 2/mu, L/mu)")
        if len(self.p) != len(self.sigma2) or not self.p:
            raise ValueError("p and sigma2 need one entry per device")
        if abs(sum(self.p) - 1.0) > 1e-9 or min(self.p) < 0:
            raise ValueError("device weights p must be a distribution")

    @property
    def devices(self) -> int:
        return len(self.p)

    @property
    def U(self) -> float:
        t = self.tau
        return (
            t * t * sum(self.sigma2)
            + t * self.G2
            + 2 * self.L_smooth * t * t * self.Gamma
            + (self.mu + 2) * t * (t - 1) * (2 * t - 1) / 6 * self.G2
        )

    def error_terms(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-round, per-device (J^2, K) arrays of shape (T, devices)."""
        shape = (self.T, self.devices)
        b = np.broadcast_to(np.asarray(self.bits, dtype=float), shape)
        s = np.broadcast_to(np.asarray(self.spans, dtype=float), shape)
        a = np.broadcast_to(np.asarray(self.alphas, dtype=float), shape)
        j2 = np.zeros(shape)
        k = np.zeros(shape)
        cache = {}
        for idx in np.ndindex(shape):
            key = (b[idx], s[idx], a[idx])
            if key not in cache:
                if math.isinf(key[0]):
                    cache[key] = (0.0, 0.0)
                else:
                    cache[key] = lemma1_error_terms(QuantizerConfig(int(key[0])), self.d, key[2], key[1])
            j2[idx], k[idx] = cache[key]
        return j2, k


@dataclass
class BoundTrace:
    rounds: np.ndarray
    first: np.ndarray
    quant: np.ndarray
    kterm: np.ndarray

    @property
    def total(self) -> np.ndarray:
        return self.first + self.quant + self.kterm


def theorem1_bound(params: ConvergenceParams, w0_gap: float) -> BoundTrace:
    """Bound on E[F(w(t)) - F*] for t = 1..T.

    first(t) = L/2/(gamma+t) * (4U/mu^2 + gamma*gap); the error terms are
    L/2 * sum_{j<t} e_j prod_{i=j+1}^{t-1} (1 - 2/(gamma+i)) with e_j the
    p-weighted J^2 (quant) or K (kterm) of round j, evaluated by the
    recursion S_{t+1} = (1 - 2/(gamma+t)) S_t + e_t.
    """
    P = params
    t = np.arange(1, P.T + 1)
    first = P.L_smooth / 2 / (P.gamma + t) * (4 * P.U / P.mu**2 + P.gamma * w0_gap)
    j2, k = P.error_terms()
    w = np.asarray(P.p)
    out = []
    for e in (j2 @ w, k @ w):
        s = np.zeros(P.T)
        acc = 0.0
        for r in range(P.T):
            acc = acc * (1 - 2 / (P.gamma + r)) + e[r] if r else e[0]
            s[r] = acc
        out.append(P.L_smooth / 2 * s)
    return BoundTrace(t, first, out[0], out[1])


# ---------------------------------------------------------------------------
# Monte-Carlo sweeps

@dataclass(frozen=True)
class SweepSpec:
    snr_db: tuple[float, ...]
    scenario: PhaseScenario = PhaseScenario()
    users: int = 2
    decoders: tuple[str, ...] = ("fsjd",)
    frames: int = 1
    target_bits: int | None = None  # if set, frames per point = ceil(target / bits per frame)
    seed: int = 0
    frame: FrameConfig = FrameConfig()
    conv: ConvCode = ConvCode()
    conv_source_bits: int = 1194
    matrix: str = "wifi-1296-r12"
    ldpc_iterations: int = DEFAULT_ITERATIONS
    rsjd_states: int = 256
    bcjr_mode: str = "full"
    normalization: str = "none"
    stale_csi: bool = False
    gains: tuple[float, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "snr_db", tuple(float(s) for s in self.snr_db))
        object.__setattr__(self, "decoders", tuple(self.decoders))
        if not self.snr_db:
            raise ValueError("need at least one SNR point")
        bad = [d for d in self.decoders if d not in DECODERS]
        if bad or not self.decoders:
            raise ValueError(f"unknown decoders {bad}; choose from {DECODERS}")
        if self.frames < 1:
            raise ValueError("frames per point must be >= 1")
        if self.users < 1:
            raise ValueError("need at least one user")
        if self.gains is not None and len(self.gains) != self.users:
            raise ValueError("one gain per user")
        if any(d in CONV_DECODERS for d in self.decoders) and self.conv_codewords < 1:
            raise ValueError("convolutional codeword does not fit in a frame")

    @property
    def conv_codewords(self) -> int:
        return self.frame.positions // self.conv.coded_length(self.conv_source_bits)

    def frames_for(self, family: str, matrix: ParityCheckMatrix | None = None) -> int:
        if self.target_bits is None:
            return self.frames
        if family == "conv":
            per = self.conv_codewords * self.conv_source_bits
        else:
            per = (self.frame.positions // matrix.n) * matrix.k
        return max(self.frames, math.ceil(self.target_bits / per))


@dataclass
class SweepRow:
    decoder: str
    users: int
    phase_scenario: str
    snr_db: float
    frames: int
    sum_bits: int
    sum_errors: int
    sum_ber: float
    ci_lo: float
    ci_hi: float
    acs_ops: int

    def as_list(self) -> list:
        return [getattr(self, f.name) for f in fields(self)]


@dataclass
class _Tally:
    errors: int = 0
    bits: int = 0
    frames: int = 0
    stats: DecodeStats = field(default_factory=DecodeStats)


def _frame_rng(seed: int, family: int, point: int, frame: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, family, point, frame]))


def _transmit(spec: SweepSpec, coded: np.ndarray, snr: float, rng) -> np.ndarray:
    """Pad, superimpose and demodulate; returns the likelihood rows of ``coded``."""
    m, n = coded.shape
    pad = rng.integers(0, 2, (m, spec.frame.positions - n), dtype=np.uint8)
    bits = np.concatenate([coded, pad], axis=1)
    grid = spec.scenario.grid(m, spec.frame, rng, spec.gains)
    frame, grid = superimpose(bits, grid, spec.frame, snr, rng)
    rx_grid = stale_csi(grid) if spec.stale_csi else grid
    return soft_joint_likelihoods(frame, rx_grid, spec.normalization)[:n]


def _conv_point(spec: SweepSpec, point: int, decoders: Sequence[str]) -> dict[str, _Tally]:
    code, k, m = spec.conv, spec.conv_source_bits, spec.users
    n_cw = spec.conv_codewords
    clen = code.coded_length(k)
    tallies = {d: _Tally() for d in decoders}
    snr = spec.snr_db[point]
    for f in range(spec.frames_for("conv")):
        rng = _frame_rng(spec.seed, 0, point, f)
        src = rng.integers(0, 2, (m, n_cw, k), dtype=np.uint8)
        coded = np.stack([np.concatenate([conv_encode(src[u, c], code) for c in range(n_cw)]) for u in range(m)])
        lh = _transmit(spec, coded, snr, rng)
        truth = src.sum(axis=0)
        for d in decoders:
            t = tallies[d]
            t.frames += 1
            t.bits += truth.size
            try:
                errs = 0
                for c in range(n_cw):
                    block = lh[c * clen : (c + 1) * clen]
                    if d == "fsjd":
                        out = fsjd_decode(block, code, m, t.stats)
                    elif d == "rsjd":
                        out = rsjd_decode(block, code, m, spec.rsjd_states, t.stats)
                    elif d == "bcjr":
                        out = bcjr_sum_decode(block, code, m, spec.bcjr_mode, t.stats)
                    else:
                        out = conv_psud_decode(block, code, m, t.stats)
                    errs += int(np.count_nonzero(out != truth[c]))
                t.errors += errs
            except ValueError as exc:
                log.warning("%s frame %d at %.2f dB failed: %s", d, f, snr, exc)
                t.errors += truth.size
    return tallies


def _ldpc_point(spec: SweepSpec, point: int, decoders: Sequence[str]) -> dict[str, _Tally]:
    h = resolve_matrix(spec.matrix)
    m = spec.users
    n_cw = spec.frame.positions // h.n
    if n_cw < 1:
        raise ValueError("LDPC codeword does not fit in a frame")
    tallies = {d: _Tally() for d in decoders}
    snr = spec.snr_db[point]
    for f in range(spec.frames_for("ldpc", h)):
        rng = _frame_rng(spec.seed, 1, point, f)
        src = rng.integers(0, 2, (m, n_cw, h.k), dtype=np.uint8)
        coded = np.stack([ldpc_encode(src[u], h).reshape(-1) for u in range(m)])
        lh = _transmit(spec, coded, snr, rng)
        truth = src.sum(axis=0).reshape(-1)
        for d in decoders:
            t = tallies[d]
            t.frames += 1
            t.bits += truth.size
            fn = ldpc_jt_decode if d == "ldpc-jd" else ldpc_psud_decode
            out = fn(lh, h, m, spec.ldpc_iterations, allow_failure=True)
            t.stats.acs_ops += spec.ldpc_iterations * n_cw
            if np.any(out < 0):
                log.warning("%s frame %d at %.2f dB: BP contradiction", d, f, snr)
                t.errors += truth.size
            else:
                t.errors += int(np.count_nonzero(out != truth))
    return tallies


def _run_point(args) -> list[SweepRow]:
    spec, point = args
    conv = [d for d in spec.decoders if d in CONV_DECODERS]
    ldpc = [d for d in spec.decoders if d in LDPC_DECODERS]
    tallies: dict[str, _Tally] = {}
    if conv:
        tallies.update(_conv_point(spec, point, conv))
    if ldpc:
        tallies.update(_ldpc_point(spec, point, ldpc))
    rows = []
    for d in spec.decoders:
        t = tallies[d]
        lo, hi = wilson_interval(t.errors, t.bits)
        rows.append(SweepRow(
            d, spec.users, spec.scenario.label, spec.snr_db[point], t.frames, t.bits,
            t.errors, t.errors / t.bits if t.bits else 0.0, lo, hi, t.stats.acs_ops,
        ))
    return rows


def run_sweep(spec: SweepSpec, jobs: int = 1) -> list[SweepRow]:
    """SUM BER per (SNR point, decoder), ordered by SNR then decoder list.

    Every frame's randomness is seeded from (seed, code family, point, frame),
    so results do not depend on ``jobs``, and decoders of the same family see
    identical frames.
    """
    tasks = [(spec, i) for i in range(len(spec.snr_db))]
    if jobs <= 1 or len(tasks) == 1:
        parts = [_run_point(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            parts = list(ex.map(_run_point, tasks))
    return [row for part in parts for row in part]


def format_sweep_csv(rows: Sequence[SweepRow], header: Sequence[str] = ()) -> str:
    buf = io.StringIO()
    for line in header:
        buf.write(f"# {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in rows:
        w.writerow([
            r.decoder, r.users, r.phase_scenario, repr(r.snr_db), r.frames, r.sum_bits,
            r.sum_errors, f"{r.sum_ber:.9g}", f"{r.ci_lo:.9g}", f"{r.ci_hi:.9g}", r.acs_ops,
        ])
    return buf.getvalue()
