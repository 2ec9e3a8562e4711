"""Desk-scale federated averaging over digital and analog over-the-air aggregation.

The learning task is softmax regression on synthetic Gaussian clusters.  Each
round the server picks ``P`` of ``Q`` devices, every device runs ``tau``
minibatch SGD steps from the global model and uploads its weight delta, and
the server applies the (possibly corrupted) average delta.

Channel modes
-------------
``error-free``        exact SUM of the quantized deltas.
``trace``             i.i.d. SUM-symbol errors at a fixed rate (or a rate looked
                      up from an SNR table); a wrong symbol becomes a uniformly
                      drawn different value in ``{0..M}``.
``full-phy``          LDPC encode, superimpose over the air, joint BP decode.
``analog-aligned-cfo``/``analog-random-cfo``
                      uncoded analog superposition with residual CFO rotation.

Every random stream is derived from ``(seed, round, purpose)`` so runs are
reproducible and the channel mode never perturbs device selection or local
training.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .aggregate import QuantizerConfig, flip_bits, pack_bits, quantize_stochastic, sum_to_average
from .ldpc import DEFAULT_ITERATIONS, ldpc_encode, ldpc_jt_decode, resolve_matrix
from .phy import MAX_CFO_HZ, FrameConfig, soft_joint_likelihoods, superimpose
from .scenarios import PhaseScenario

log = logging.getLogger(__name__)

MODES = ("error-free", "trace", "full-phy", "analog-aligned-cfo", "analog-random-cfo")
ANALOG_MODES = MODES[3:]
FL_CSV_COLUMNS = ("round", "mode", "snr_db", "sum_ber_observed", "train_loss", "test_acc")

# stream tags for per-round generators
_SELECT, _TRAIN, _QUANT, _CHANNEL = range(4)


@dataclass(frozen=True)
class DataConfig:
    samples: int = 50_000
    test_samples: int = 10_000
    dim: int = 64
    classes: int = 10
    separation: float = 0.25  # scale of the class means relative to unit noise
    sorted_fraction: float = 0.2

    def __post_init__(self):
        if self.samples < 1 or self.test_samples < 1 or self.dim < 1 or self.classes < 2:
            raise ValueError("dataset sizes must be positive and classes >= 2")
        if not 0.0 <= self.sorted_fraction <= 1.0:
            raise ValueError("sorted_fraction must lie in [0, 1]")


@dataclass(frozen=True)
class FLConfig:
    devices: int = 40  # Q
    selected: int = 4  # P
    users: int = 4  # M, simultaneous transmitters per digital transmission
    local_steps: int = 5  # tau
    batch_size: int = 32
    lr: float = 0.1
    lr_decay: float = 0.0  # eta(t) = lr / (1 + lr_decay * t)
    rounds: int = 100
    mode: str = "error-free"
    snr_db: float = 20.0
    sum_ber: float | None = None  # trace mode rate; overrides the table
    trace_table: tuple[tuple[float, float], ...] = ()  # (snr_db, sum_ber) pairs
    trace_level: str = "sum"  # "sum" corrupts SUM symbols, "bit" flips pre-sum bits
    quant_bits: int | None = 8  # None sends raw deltas (no quantization)
    quant_range: float | str = 0.4  # shared symmetric range; "auto" uses max |delta| per round
    matrix: str = "wifi-1296-r12"
    ldpc_iterations: int = DEFAULT_ITERATIONS
    scenario: PhaseScenario = field(default_factory=lambda: PhaseScenario("synthetic-realistic"))
    frame: FrameConfig = field(default_factory=FrameConfig)
    analog_repeats: int = 16
    max_cfo_hz: float = MAX_CFO_HZ
    data: DataConfig = field(default_factory=DataConfig)
    seed: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown channel mode {self.mode!r}; choose from {MODES}")
        if not 1 <= self.selected <= self.devices:
            raise ValueError("need 1 <= P <= Q")
        if not 1 <= self.users <= self.selected:
            raise ValueError("need 1 <= M <= P")
        if self.local_steps < 1 or self.rounds < 0 or self.batch_size < 1:
            raise ValueError("local_steps and batch_size must be >= 1, rounds >= 0")
        if self.lr < 0 or self.lr_decay < 0:
            raise ValueError("learning rate parameters must be nonnegative")
        if self.trace_level not in ("sum", "bit"):
            raise ValueError("trace_level must be 'sum' or 'bit'")
        if self.mode == "trace" and self.sum_ber is None and not self.trace_table:
            raise ValueError("trace mode needs sum_ber or trace_table")
        if self.sum_ber is not None and not 0.0 <= self.sum_ber <= 1.0:
            raise ValueError("sum_ber must lie in [0, 1]")
        if self.quant_bits is None and self.mode not in ("error-free",) + ANALOG_MODES:
            raise ValueError("digital channel modes need quantization")
        if self.quant_bits is not None:
            QuantizerConfig(self.quant_bits)
        if self.quant_range != "auto" and not float(self.quant_range) > 0:
            raise ValueError("quant_range must be 'auto' or positive")
        if self.analog_repeats < 1:
            raise ValueError("analog_repeats must be >= 1")
        if self.devices * 1 > self.data.samples:
            raise ValueError("more devices than samples")

    def eta(self, t: int) -> float:
        return self.lr / (1.0 + self.lr_decay * t)

    @property
    def transmissions(self) -> int:
        """Digital transmissions per round, ceil(P/M)."""
        return -(-self.selected // self.users)


# --------------------------------------------------------------------------- data


@dataclass(frozen=True)
class Dataset:
    x: np.ndarray  # (n, d)
    y: np.ndarray  # (n,) int labels

    def __post_init__(self):
        if len(self.x) != len(self.y):
            raise ValueError("features and labels disagree in length")

    def __len__(self) -> int:
        return len(self.y)

    def subset(self, idx) -> "Dataset":
        return Dataset(self.x[idx], self.y[idx])


def make_gaussian_clusters(cfg: DataConfig, rng) -> tuple[Dataset, Dataset]:
    """Train and test sets drawn from one isotropic Gaussian per class."""
    rng = np.random.default_rng(rng)
    means = cfg.separation * rng.standard_normal((cfg.classes, cfg.dim))

    def draw(n):
        y = rng.integers(0, cfg.classes, n)
        return Dataset(means[y] + rng.standard_normal((n, cfg.dim)), y)

    return draw(cfg.samples), draw(cfg.test_samples)


def split_noniid(data: Dataset, devices: int, sorted_fraction: float = 0.2, rng=None) -> list[np.ndarray]:
    """Index shards: a shuffled equal share plus a label-sorted equal share.

    The first ``1 - sorted_fraction`` of a random permutation is dealt out
    equally in random order; the rest is sorted by label and cut into equal
    consecutive slices, so each device's sorted part covers few labels.
    Leftover samples from uneven division go round-robin to the first devices.
    """
    n = len(data)
    if n == 0:
        raise ValueError("dataset is empty")
    if devices < 1:
        raise ValueError("need at least one device")
    if devices == 1:
        return [np.arange(n)]
    rng = np.random.default_rng(rng)
    perm = rng.permutation(n)
    n_sorted = int(round(sorted_fraction * n))
    shuffled, rest = perm[: n - n_sorted], perm[n - n_sorted :]
    rest = rest[np.argsort(data.y[rest], kind="stable")]
    shards = [[] for _ in range(devices)]
    for part in (shuffled, rest):
        share = len(part) // devices
        for q in range(devices):
            shards[q].append(part[q * share : (q + 1) * share])
        for j, idx in enumerate(part[devices * share :]):
            shards[j % devices].append(np.array([idx]))
    return [np.concatenate(s) for s in shards]


# --------------------------------------------------------------------------- model


@dataclass(frozen=True)
class ToyModel:
    """Softmax regression; parameters are the flattened (classes, dim+1) matrix."""

    dim: int = 64
    classes: int = 10

    @property
    def size(self) -> int:
        return self.classes * (self.dim + 1)

    def init(self) -> np.ndarray:
        return np.zeros(self.size)

    def _logits(self, w, x):
        m = w.reshape(self.classes, self.dim + 1)
        return x @ m[:, :-1].T + m[:, -1]

    def loss(self, w, data: Dataset) -> float:
        z = self._logits(w, data.x)
        z = z - z.max(axis=1, keepdims=True)
        lse = np.log(np.exp(z).sum(axis=1))
        return float(np.mean(lse - z[np.arange(len(z)), data.y]))

    def grad(self, w, data: Dataset) -> np.ndarray:
        z = self._logits(w, data.x)
        z -= z.max(axis=1, keepdims=True)
        p = np.exp(z)
        p /= p.sum(axis=1, keepdims=True)
        p[np.arange(len(p)), data.y] -= 1.0
        p /= len(p)
        g = np.empty((self.classes, self.dim + 1))
        g[:, :-1] = p.T @ data.x
        g[:, -1] = p.sum(axis=0)
        return g.reshape(-1)

    def accuracy(self, w, data: Dataset) -> float:
        return float(np.mean(np.argmax(self._logits(w, data.x), axis=1) == data.y))


def local_train(
    model: ToyModel, w, shard: Dataset, steps: int, lr: float, batch_size: int = 32, rng=None
) -> np.ndarray:
    """``steps`` minibatch SGD steps from ``w``; returns the weight delta."""
    if steps < 1:
        raise ValueError("local steps must be >= 1")
    rng = np.random.default_rng(rng)
    w0 = np.asarray(w, dtype=np.float64)
    cur = w0.copy()
    b = min(batch_size, len(shard))
    for _ in range(steps):
        idx = rng.choice(len(shard), b, replace=False)
        cur -= lr * model.grad(cur, shard.subset(idx))
    return cur - w0


# --------------------------------------------------------------------------- digital channels


@dataclass
class ChannelTally:
    errors: int = 0
    symbols: int = 0
    failures: int = 0
    erasures: int = 0

    @property
    def sum_ber(self) -> float:
        return self.errors / self.symbols if self.symbols else 0.0


def trace_rate(table: Sequence[tuple[float, float]], snr_db: float) -> float:
    """SUM BER at ``snr_db`` by log-linear interpolation of an SNR table.

    Outside the table the nearest end value is used; zero rates interpolate
    linearly.
    """
    if not table:
        raise ValueError("empty trace table")
    pts = sorted((float(s), float(b)) for s, b in table)
    snr = np.array([p[0] for p in pts])
    ber = np.array([p[1] for p in pts])
    if np.any((ber < 0) | (ber > 1)):
        raise ValueError("table rates must lie in [0, 1]")
    if np.all(ber > 0):
        return float(10 ** np.interp(snr_db, snr, np.log10(ber)))
    return float(np.interp(snr_db, snr, ber))


def corrupt_sum_symbols(sums, m_users: int, rate: float, rng) -> np.ndarray:
    """Each symbol independently wrong with probability ``rate``; a wrong symbol
    takes a uniformly drawn different value in ``{0..M}``."""
    s = np.asarray(sums, dtype=np.int64)
    if rate <= 0.0:
        return s.copy()
    hit = rng.random(s.shape) < rate
    shift = rng.integers(1, m_users + 1, s.shape)
    out = s.copy()
    out[hit] = (s[hit] + shift[hit]) % (m_users + 1)
    return out


class DigitalLink:
    """Maps per-user bit rows (m, n) to a decoded SUM word, or None on failure."""

    def __init__(self, cfg: FLConfig):
        self.cfg = cfg
        self.rate = 0.0
        if cfg.mode == "trace":
            self.rate = cfg.sum_ber if cfg.sum_ber is not None else trace_rate(cfg.trace_table, cfg.snr_db)
        self.h = resolve_matrix(cfg.matrix) if cfg.mode == "full-phy" else None

    def send(self, bits: np.ndarray, rng: np.random.Generator) -> np.ndarray | None:
        m = bits.shape[0]
        if self.cfg.mode == "error-free":
            return bits.sum(axis=0, dtype=np.int64)
        if self.cfg.mode == "trace":
            if self.cfg.trace_level == "bit":
                return flip_bits(bits, self.rate, rng).sum(axis=0, dtype=np.int64)
            return corrupt_sum_symbols(bits.sum(axis=0, dtype=np.int64), m, self.rate, rng)
        return self._phy(bits, rng)

    def _phy(self, bits, rng):
        h, cfg = self.h, self.cfg
        m, n = bits.shape
        k = h.k
        blocks = -(-n // k)
        msg = np.zeros((m, blocks * k), np.uint8)
        msg[:, :n] = bits
        msg[:, n:] = rng.integers(0, 2, (m, blocks * k - n))
        coded = ldpc_encode(msg.reshape(-1, k), h).reshape(m, blocks, h.n)
        per_frame = cfg.frame.positions // h.n
        out = []
        for start in range(0, blocks, per_frame):
            cw = coded[:, start : start + per_frame].reshape(m, -1)
            used = cw.shape[1]
            pad = rng.integers(0, 2, (m, cfg.frame.positions - used), dtype=np.uint8)
            grid = cfg.scenario.grid(m, cfg.frame, rng)
            frame, grid = superimpose(np.concatenate([cw, pad], axis=1), grid, cfg.frame, cfg.snr_db, rng)
            lh = soft_joint_likelihoods(frame, grid)[:used]
            try:
                dec = ldpc_jt_decode(lh, h, m, cfg.ldpc_iterations, allow_failure=True)
            except ValueError as exc:
                log.info("frame demodulation failed: %s", exc)
                return None
            if np.any(dec < 0):
                return None
            out.append(dec)
        return np.concatenate(out)[:n]


# --------------------------------------------------------------------------- rounds


@dataclass
class RoundResult:
    w: np.ndarray
    tally: ChannelTally


def _quant_cfg(cfg: FLConfig, deltas: np.ndarray) -> QuantizerConfig | None:
    if cfg.quant_bits is None:
        return None
    if cfg.quant_range == "auto":
        c = float(np.max(np.abs(deltas))) if deltas.size else 0.0
        c = c if c > 0 else 1.0
    else:
        c = float(cfg.quant_range)
    return QuantizerConfig(cfg.quant_bits, c)


def round_digital(
    w, deltas, cfg: FLConfig, link: DigitalLink, quant_rng, channel_rng
) -> RoundResult:
    """Quantize, send in ceil(P/M) groups of at most M users, apply the average.

    A failed group is retransmitted once and then dropped (erasure); the
    average is taken over the users of the surviving groups.
    """
    deltas = np.atleast_2d(np.asarray(deltas, dtype=np.float64))
    p = deltas.shape[0]
    tally = ChannelTally()
    qcfg = _quant_cfg(cfg, deltas)
    if qcfg is None:
        if cfg.mode != "error-free":
            raise ValueError("unquantized rounds need the error-free channel")
        return RoundResult(np.asarray(w, dtype=np.float64) + deltas.mean(axis=0), tally)
    quant = [quantize_stochastic(d, qcfg, quant_rng) for d in deltas]
    total = np.zeros(deltas.shape[1])
    counted = 0
    for start in range(0, p, cfg.users):
        group = quant[start : start + cfg.users]
        m = len(group)
        bits = np.stack([pack_bits(b) for b in group])
        truth = bits.sum(axis=0, dtype=np.int64)
        sums = None
        for _attempt in range(2):
            sums = link.send(bits, channel_rng)
            if sums is not None:
                break
            tally.failures += 1
        if sums is None:
            tally.erasures += 1
            continue
        tally.errors += int(np.count_nonzero(sums != truth))
        tally.symbols += truth.size
        avg, _ = sum_to_average(np.clip(sums, 0, m), m, qcfg)
        total += m * avg
        counted += m
    w = np.asarray(w, dtype=np.float64)
    if counted == 0:
        return RoundResult(w.copy(), tally)
    return RoundResult(w + total / counted, tally)


@dataclass(frozen=True)
class AnalogDevice:
    cfo_hz: float
    phases: np.ndarray  # (subcarriers,) initial phase per subcarrier


def analog_devices(cfg: FLConfig, variant: str, rng) -> list[AnalogDevice]:
    """Per-device residual CFO and initial subcarrier phases for one run."""
    rng = np.random.default_rng(rng)
    out = []
    for _ in range(cfg.devices):
        cfo = float(rng.uniform(-cfg.max_cfo_hz, cfg.max_cfo_hz))
        if variant == "analog-random-cfo":
            ph = 2 * np.pi * rng.random(cfg.frame.data_subcarriers)
        else:
            ph = np.zeros(cfg.frame.data_subcarriers)
        out.append(AnalogDevice(cfo, ph))
    return out


def analog_slots(n_params: int, frame: FrameConfig) -> tuple[np.ndarray, np.ndarray]:
    """(symbol, subcarrier) of each complex slot; two parameters per slot (I and Q).

    Slots are spread evenly over the whole frame so the transmission spans the
    same duration as a digital frame.
    """
    n_slots = -(-n_params // 2)
    if n_slots > frame.positions:
        raise ValueError("model does not fit in one analog frame")
    s = np.arange(n_slots)
    return s * frame.data_symbols // n_slots, s % frame.data_subcarriers


def analog_phases(devices: Sequence[AnalogDevice], sym, sc, frame: FrameConfig, start_symbol: int = 0) -> np.ndarray:
    """Phase of every device at every slot, shape (users, slots)."""
    t_sym = frame.symbol_samples / frame.bandwidth_hz
    cfo = np.array([d.cfo_hz for d in devices])
    init = np.stack([d.phases[sc] for d in devices])
    return init + 2 * np.pi * cfo[:, None] * (start_symbol + sym)[None, :] * t_sym


def analog_superpose(deltas, phases, snr_db: float, rng) -> np.ndarray:
    """Average delta estimated from one analog superposition.

    Parameters are RMS-normalized with a common scale (perfect power
    alignment), loaded in I/Q pairs, rotated by ``phases`` and summed; AWGN is
    calibrated to the noiseless superposition power.
    """
    d = np.atleast_2d(np.asarray(deltas, dtype=np.float64))
    p, n = d.shape
    if n % 2:
        d = np.concatenate([d, np.zeros((p, 1))], axis=1)
    x = d[:, 0::2] + 1j * d[:, 1::2]
    scale = float(np.sqrt(np.mean(np.abs(x) ** 2)))
    if scale == 0.0:
        return np.zeros(n)
    y = np.sum((x / scale) * np.exp(1j * phases), axis=0)
    power = float(np.mean(np.abs(y) ** 2))
    if np.isfinite(snr_db) and power > 0:
        nv = power / 10 ** (snr_db / 10)
        y = y + np.sqrt(nv / 2) * (rng.standard_normal(y.shape) + 1j * rng.standard_normal(y.shape))
    est = np.empty(2 * y.size)
    est[0::2] = y.real
    est[1::2] = y.imag
    return est[:n] * scale / p


def round_analog(
    w, deltas, devices: Sequence[AnalogDevice], cfg: FLConfig, rng, repeats: int | None = None
) -> RoundResult:
    """Repeat the analog transmission and keep the estimate closest to the true mean.

    Repeat ``r`` starts ``r`` frames later, so the CFO rotation keeps
    accumulating across repeats.  The ground-truth selection reproduces the
    generous baseline and is not realizable in a deployment.
    """
    deltas = np.atleast_2d(np.asarray(deltas, dtype=np.float64))
    repeats = cfg.analog_repeats if repeats is None else repeats
    truth = deltas.mean(axis=0)
    sym, sc = analog_slots(deltas.shape[1], cfg.frame)
    best, best_mse = None, math.inf
    for r in range(repeats):
        ph = analog_phases(devices, sym, sc, cfg.frame, r * cfg.frame.data_symbols)
        est = analog_superpose(deltas, ph, cfg.snr_db, rng)
        mse = float(np.mean((est - truth) ** 2))
        if mse < best_mse:
            best, best_mse = est, mse
    return RoundResult(np.asarray(w, dtype=np.float64) + best, ChannelTally())


# --------------------------------------------------------------------------- driver


@dataclass(frozen=True)
class RoundRecord:
    round: int
    mode: str
    snr_db: float
    sum_ber_observed: float
    train_loss: float
    test_acc: float

    def as_list(self) -> list:
        return [self.round, self.mode, self.snr_db, self.sum_ber_observed, self.train_loss, self.test_acc]


def _rng(seed: int, rnd: int, tag: int, extra: int = 0) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, rnd, tag, extra]))


def run_fl(cfg: FLConfig) -> list[RoundRecord]:
    """Full training run; row 0 is the initial model, then one row per round."""
    root = np.random.SeedSequence([cfg.seed, 0xDA7A])
    data_rng, split_rng, analog_rng = (np.random.default_rng(s) for s in root.spawn(3))
    train, test = make_gaussian_clusters(cfg.data, data_rng)
    shards = [train.subset(i) for i in split_noniid(train, cfg.devices, cfg.data.sorted_fraction, split_rng)]
    model = ToyModel(cfg.data.dim, cfg.data.classes)
    analog = analog_devices(cfg, cfg.mode, analog_rng) if cfg.mode in ANALOG_MODES else None
    link = None if analog else DigitalLink(cfg)

    w = model.init()
    snr = cfg.snr_db if cfg.mode in ("full-phy", "trace") + ANALOG_MODES else float("inf")
    rows = [RoundRecord(0, cfg.mode, snr, 0.0, model.loss(w, train), model.accuracy(w, test))]
    for t in range(1, cfg.rounds + 1):
        chosen = np.sort(_rng(cfg.seed, t, _SELECT).choice(cfg.devices, cfg.selected, replace=False))
        eta = cfg.eta(t - 1)
        deltas = np.stack([
            local_train(model, w, shards[q], cfg.local_steps, eta, cfg.batch_size, _rng(cfg.seed, t, _TRAIN, int(q)))
            for q in chosen
        ])
        if analog:
            res = round_analog(w, deltas, [analog[q] for q in chosen], cfg, _rng(cfg.seed, t, _CHANNEL))
        else:
            res = round_digital(w, deltas, cfg, link, _rng(cfg.seed, t, _QUANT), _rng(cfg.seed, t, _CHANNEL))
        w = res.w
        if not np.all(np.isfinite(w)):
            raise FloatingPointError(f"model diverged at round {t}")
        rows.append(RoundRecord(t, cfg.mode, snr, res.tally.sum_ber, model.loss(w, train), model.accuracy(w, test)))
    return rows


def format_fl_csv(rows: Sequence[RoundRecord], header: Sequence[str] = ()) -> str:
    buf = io.StringIO()
    for line in header:
        buf.write(f"# {line}\n")
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(FL_CSV_COLUMNS)
    for r in rows:
        wr.writerow([r.round, r.mode, repr(float(r.snr_db)), repr(r.sum_ber_observed), repr(r.train_loss), repr(r.test_acc)])
    return buf.getvalue()
