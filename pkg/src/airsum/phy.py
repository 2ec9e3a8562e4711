"""Frequency-domain multi-user OFDM channel and soft joint demodulation.

Every user's BPSK symbols reach the receiver through an effective
per-(symbol, subcarrier) coefficient that combines multipath fading, the
user's time offset (linear phase across subcarriers) and its carrier
frequency offset (phase accumulating across symbols).  The superimposed
samples plus AWGN are turned into a likelihood grid over all 2^M user-bit
combinations, which is what every joint decoder consumes.

Array conventions
-----------------
* coded bits of one user: 1-D ``uint8`` array, mapped row-major over
  (symbol, data subcarrier).
* effective channel grid: complex array of shape ``(M, symbols, subcarriers)``.
* likelihood grid: float array of shape ``(positions, 2**M)``; entry ``b``
  belongs to the combination whose bit ``u`` is user ``u``'s coded bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

MAX_CFO_HZ = 350.0
NORMALIZATIONS = ("none", "global-min", "per-position-min")


@dataclass(frozen=True)
class FrameConfig:
    fft_size: int = 64
    cp_size: int = 16
    data_subcarriers: int = 48
    data_symbols: int = 500
    bandwidth_hz: float = 10e6
    carrier_hz: float = 5.85e9

    def __post_init__(self):
        for name in ("fft_size", "cp_size", "data_subcarriers", "data_symbols"):
            if int(getattr(self, name)) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.data_subcarriers > self.fft_size - 1:
            raise ValueError("data_subcarriers must leave room for the DC bin")
        if self.bandwidth_hz <= 0 or self.carrier_hz <= 0:
            raise ValueError("bandwidth_hz and carrier_hz must be positive")

    @property
    def positions(self) -> int:
        return self.data_symbols * self.data_subcarriers

    @property
    def symbol_samples(self) -> int:
        return self.fft_size + self.cp_size

    def subcarrier_indices(self) -> np.ndarray:
        """Signed data subcarrier indices, DC excluded: -h..-1, 1..(n-h)."""
        n = self.data_subcarriers
        h = n // 2
        return np.concatenate([np.arange(-h, 0), np.arange(1, n - h + 1)])


@dataclass(frozen=True)
class UserChannel:
    """Multipath taps ``(gain, delay_samples)``, time offset and CFO of one user."""

    taps: tuple[tuple[complex, int], ...] = ((1.0 + 0.0j, 0),)
    time_offset: int = 0
    cfo_hz: float = 0.0

    def __post_init__(self):
        object.__setattr__(
            self, "taps", tuple((complex(g), int(d)) for g, d in self.taps)
        )
        if not self.taps:
            raise ValueError("a channel needs at least one tap")
        if any(d < 0 for _, d in self.taps):
            raise ValueError("tap delays must be nonnegative")

    def validate(self, cfg: FrameConfig, max_cfo_hz: float = MAX_CFO_HZ) -> None:
        if any(d >= cfg.cp_size for _, d in self.taps):
            raise ValueError("tap delays must be shorter than the cyclic prefix")
        if abs(self.cfo_hz) > max_cfo_hz:
            raise ValueError(f"|cfo_hz|={abs(self.cfo_hz)} exceeds {max_cfo_hz}")

    @classmethod
    def flat(cls, gain: complex = 1.0, time_offset: int = 0, cfo_hz: float = 0.0):
        return cls(((gain, 0),), time_offset, cfo_hz)


def subcarrier_channel(ch: UserChannel, k, cfg: FrameConfig):
    """A[k]: multipath frequency response times the time-offset phase ramp."""
    k = np.asarray(k)
    n = cfg.fft_size
    resp = sum(g * np.exp(2j * np.pi * d * k / n) for g, d in ch.taps)
    out = resp * np.exp(2j * np.pi * ch.time_offset * k / n)
    return complex(out) if out.ndim == 0 else out


def effective_channel(ch: UserChannel, i, k, cfg: FrameConfig):
    """A[k] rotated by the CFO phase accumulated up to symbol ``i``."""
    cfo_norm = ch.cfo_hz / cfg.bandwidth_hz
    rot = np.exp(2j * np.pi * cfo_norm * np.asarray(i) * cfg.symbol_samples)
    out = subcarrier_channel(ch, k, cfg) * rot
    return complex(out) if np.ndim(out) == 0 else out


def channel_grid(channels: Sequence[UserChannel], cfg: FrameConfig) -> np.ndarray:
    """Effective channel for every user, symbol and data subcarrier."""
    ks = cfg.subcarrier_indices()
    syms = np.arange(cfg.data_symbols)[:, None]
    return np.stack([effective_channel(ch, syms, ks[None, :], cfg) for ch in channels])


def stale_csi(grid: np.ndarray) -> np.ndarray:
    """Receiver view without CFO tracking: symbol 0's channel for every symbol."""
    return np.broadcast_to(grid[:, :1, :], grid.shape).copy()


def modulate_bpsk(bits) -> np.ndarray:
    """1 -> +1, 0 -> -1."""
    return 2.0 * np.asarray(bits, dtype=np.float64) - 1.0


@dataclass
class SuperimposedFrame:
    samples: np.ndarray  # (symbols, subcarriers) complex
    noise_var: float  # E|n|^2, i.e. 2*sigma^2
    signal_power: float = field(default=float("nan"))

    @property
    def sigma2(self) -> float:
        return self.noise_var / 2.0


def noise_variance(signal_power: float, snr_db: float) -> float:
    if np.isinf(snr_db) and snr_db > 0:
        return 0.0
    return float(signal_power / 10.0 ** (snr_db / 10.0))


def superimpose(
    coded_bits_per_user,
    channels: Sequence[UserChannel] | np.ndarray,
    cfg: FrameConfig,
    snr_db: float,
    rng: np.random.Generator | int | None = None,
) -> tuple[SuperimposedFrame, np.ndarray]:
    """Sum all users' channel-weighted BPSK symbols and add calibrated AWGN.

    ``channels`` is either a list of :class:`UserChannel` or a precomputed
    effective channel grid.  The noise variance is set from the measured
    power of the noiseless superposition so that the frame SNR equals
    ``snr_db``; ``snr_db=inf`` gives a noiseless frame.  Returns the frame and
    the exact grid used (genie CSI).
    """
    bits = np.asarray(coded_bits_per_user)
    if bits.ndim != 2:
        raise ValueError("coded bits must be shaped (users, positions)")
    m = bits.shape[0]
    if m < 1:
        raise ValueError("need at least one user")
    if bits.shape[1] != cfg.positions:
        raise ValueError(
            f"dimension error: {bits.shape[1]} bits per user, frame holds {cfg.positions}"
        )
    if isinstance(channels, np.ndarray):
        grid = channels
    else:
        if len(channels) != m:
            raise ValueError("one channel per user required")
        grid = channel_grid(channels, cfg)
    if grid.shape != (m, cfg.data_symbols, cfg.data_subcarriers):
        raise ValueError(f"dimension error: channel grid shape {grid.shape}")

    x = modulate_bpsk(bits).reshape(m, cfg.data_symbols, cfg.data_subcarriers)
    clean = np.sum(grid * x, axis=0)
    power = float(np.mean(np.abs(clean) ** 2))
    nv = noise_variance(power, snr_db)
    if nv > 0:
        rng = np.random.default_rng(rng)
        noise = rng.standard_normal(clean.shape) + 1j * rng.standard_normal(clean.shape)
        samples = clean + np.sqrt(nv / 2.0) * noise
    else:
        samples = clean
    return SuperimposedFrame(samples, nv, power), grid


def combination_table(m: int) -> np.ndarray:
    """BPSK symbols of every user for every combination index, shape (2**m, m)."""
    b = np.arange(1 << m)[:, None]
    return 2.0 * ((b >> np.arange(m)[None, :]) & 1) - 1.0


def constellation(grid: np.ndarray) -> np.ndarray:
    """Noiseless received point of every combination, shape (positions, 2**M)."""
    m = grid.shape[0]
    g = grid.reshape(m, -1).T  # (positions, M)
    return g @ combination_table(m).T


def squared_distances(samples: np.ndarray, grid: np.ndarray) -> np.ndarray:
    y = np.asarray(samples).reshape(-1)
    return np.abs(y[:, None] - constellation(grid)) ** 2


def soft_joint_likelihoods(
    frame: SuperimposedFrame,
    grid: np.ndarray,
    normalization: str = "none",
    floor: float = 1e-12,
) -> np.ndarray:
    """Per-position likelihoods of all 2^M user-bit combinations.

    entry = exp(-D/(2 sigma^2)) with D the squared distance divided by a
    normalization factor: ``none`` (1), ``global-min`` (smallest squared
    distance over the whole frame) or ``per-position-min``; the factor is
    floored at ``floor``.  The default ``none`` is the exact AWGN likelihood;
    the min-based factors sharpen the grid towards hard decisions and can
    drive every admissible path to zero probability.  Rows are scaled so their largest entry is 1, which
    no decoder is sensitive to.  A noiseless frame yields a hard indicator of
    the nearest combination(s).
    """
    if normalization not in NORMALIZATIONS:
        raise ValueError(f"unknown normalization {normalization!r}")
    if frame.samples.shape != grid.shape[1:]:
        raise ValueError("frame and channel grid dimensions disagree")
    d2 = squared_distances(frame.samples, grid)

    if frame.noise_var == 0:
        dmin = d2.min(axis=1, keepdims=True)
        scale = np.maximum(np.abs(constellation(grid)).max(axis=1, keepdims=True), 1.0)
        return (d2 <= dmin + 1e-9 * scale**2).astype(np.float64)

    if normalization == "global-min":
        alpha = max(float(d2.min()), floor)
    elif normalization == "per-position-min":
        alpha = np.maximum(d2.min(axis=1, keepdims=True), floor)
    else:
        alpha = 1.0
    ll = -(d2 / alpha) / frame.noise_var
    ll -= ll.max(axis=1, keepdims=True)
    return np.exp(ll)


def marginal_likelihoods(lh: np.ndarray, user: int) -> np.ndarray:
    """Per-user likelihoods (positions, 2) obtained by summing out the others."""
    q = lh.shape[1]
    bit = (np.arange(q) >> user) & 1
    return np.stack([lh[:, bit == 0].sum(axis=1), lh[:, bit == 1].sum(axis=1)], axis=1)
