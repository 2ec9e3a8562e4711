"""Stochastic quantization, bit packing and SUM-word reconstruction.

All users share one symmetric range ``[-c, c]`` split into ``2**B - 1``
intervals, so the per-bit SUM symbols can be recombined into the sum of the
users' integer levels and from there into the average parameter value.

Binary block layout (``encode_block``): magic ``b"AQB1"``, little-endian
uint32 parameter count, uint8 bit width, float64 ``c``, then the packed bits
(little-endian within each parameter, parameters concatenated, zero-padded to
a whole byte).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

_MAGIC = b"AQB1"
_HEADER = struct.Struct("<4sIBd")


@dataclass(frozen=True)
class QuantizerConfig:
    bits: int = 8
    c: float = 1.0  # symmetric range bound

    def __post_init__(self):
        if int(self.bits) < 1 or int(self.bits) > 62:
            raise ValueError("bits must lie in [1, 62]")
        if not self.c > 0:
            raise ValueError("range bound c must be positive")

    @property
    def levels(self) -> int:
        """Largest integer level, 2^B - 1."""
        return (1 << self.bits) - 1

    @property
    def step(self) -> float:
        return 2.0 * self.c / self.levels


@dataclass(frozen=True)
class QuantizedBlock:
    q: np.ndarray  # integer levels in [0, 2^B - 1]
    cfg: QuantizerConfig

    def __post_init__(self):
        q = np.asarray(self.q, dtype=np.int64)
        if q.size and (q.min() < 0 or q.max() > self.cfg.levels):
            raise ValueError("quantized level out of range")
        object.__setattr__(self, "q", q)


def quantize_stochastic(values, cfg: QuantizerConfig, rng=None) -> QuantizedBlock:
    """Unbiased randomized rounding of clipped values to the level grid."""
    v = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise ValueError("values must be finite")
    rng = np.random.default_rng(rng)
    x = (np.clip(v, -cfg.c, cfg.c) + cfg.c) / cfg.step
    x = np.clip(x, 0.0, cfg.levels)
    lo = np.floor(x)
    up = rng.random(v.shape) < (x - lo)
    q = np.minimum(lo + up, cfg.levels)
    return QuantizedBlock(q.astype(np.int64), cfg)


def dequantize(block: QuantizedBlock) -> np.ndarray:
    return -block.cfg.c + block.cfg.step * block.q.astype(np.float64)


def pack_bits(block: QuantizedBlock) -> np.ndarray:
    """Bit k of each parameter is the coefficient of 2^k; parameters concatenated."""
    q = block.q.reshape(-1)
    shifts = np.arange(block.cfg.bits, dtype=np.int64)
    return ((q[:, None] >> shifts) & 1).astype(np.uint8).reshape(-1)


def unpack_bits(bits, cfg: QuantizerConfig) -> QuantizedBlock:
    b = np.asarray(bits, dtype=np.int64).reshape(-1)
    if b.size % cfg.bits:
        raise ValueError("bit count not divisible by the bit width")
    weights = np.int64(1) << np.arange(cfg.bits, dtype=np.int64)
    return QuantizedBlock(b.reshape(-1, cfg.bits) @ weights, cfg)


def sum_to_average(sum_bits, m_users: int, cfg: QuantizerConfig) -> tuple[np.ndarray, np.ndarray]:
    """Average parameter values from per-bit SUM symbols.

    Returns the averages and a boolean mask of parameters whose reconstructed
    level sum exceeded ``M * (2^B - 1)`` and was clamped (only possible when
    SUM symbols are wrong).
    """
    s = np.asarray(sum_bits, dtype=np.int64).reshape(-1)
    if s.size % cfg.bits:
        raise ValueError("SUM word length not divisible by the bit width")
    if s.size and (s.min() < 0 or s.max() > m_users):
        raise ValueError(f"SUM symbols must lie in [0, {m_users}]")
    weights = np.int64(1) << np.arange(cfg.bits, dtype=np.int64)
    total = s.reshape(-1, cfg.bits) @ weights
    cap = m_users * cfg.levels
    overflow = total > cap
    total = np.minimum(total, cap)
    return -cfg.c + cfg.step * total / m_users, overflow


def flip_bits(bits, alpha: float, rng=None) -> np.ndarray:
    """Independent bit flips with probability ``alpha``."""
    b = np.asarray(bits, dtype=np.uint8)
    rng = np.random.default_rng(rng)
    return b ^ (rng.random(b.shape) < alpha).astype(np.uint8)


def lemma1_error_terms(cfg: QuantizerConfig, d: int, alpha: float, range_span: float) -> tuple[float, float]:
    """Quantization term J^2 and bit-error term K of the distortion bound.

    delta^2 = d/4 * span^2, J^2 = delta^2 / (2^B-1)^2 and
    K = alpha * (4 delta^2 / (d (2^B-1)^2))^2 * (4^(B^2) - 1) / 3.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    if d < 1 or range_span < 0:
        raise ValueError("need d >= 1 and a nonnegative span")
    lv = float(cfg.levels)
    delta2 = d / 4.0 * range_span**2
    j2 = delta2 / lv**2
    if alpha == 0.0:
        return j2, 0.0
    b2 = cfg.bits**2
    geo = (4.0**b2 - 1.0) / 3.0 if b2 < 512 else float("inf")
    return j2, alpha * (4.0 * delta2 / (d * lv**2)) ** 2 * geo


def encode_block(block: QuantizedBlock) -> bytes:
    header = _HEADER.pack(_MAGIC, block.q.size, block.cfg.bits, block.cfg.c)
    return header + np.packbits(pack_bits(block), bitorder="little").tobytes()


def decode_block(data: bytes) -> QuantizedBlock:
    magic, count, bits, c = _HEADER.unpack_from(data)
    if magic != _MAGIC:
        raise ValueError("not a quantized parameter block")
    cfg = QuantizerConfig(bits, c)
    raw = np.frombuffer(data, dtype=np.uint8, offset=_HEADER.size)
    b = np.unpackbits(raw, bitorder="little")[: count * bits]
    if b.size != count * bits:
        raise ValueError("truncated parameter block")
    return unpack_bits(b, cfg)
