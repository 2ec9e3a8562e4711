"""Phase scenarios that produce per-frame effective channel grids."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .phy import FrameConfig, UserChannel, channel_grid

KINDS = ("aligned", "fixed", "random-per-subcarrier", "synthetic-realistic", "channels")
REALISTIC_MAX_CFO_HZ = 2000.0
REALISTIC_MAX_TO = 2
REALISTIC_TAPS = 3


@dataclass(frozen=True)
class PhaseScenario:
    """How users' phases relate.

    ``fixed`` rotates user ``u`` by ``u * theta``; ``random-per-subcarrier``
    draws an independent uniform phase per user and subcarrier for every
    frame; ``synthetic-realistic`` draws multipath taps, a time offset and a
    CFO per user and frame; ``channels`` uses the fixed per-user channels
    given in ``channels`` (typically loaded from a channel file).
    """

    kind: str = "aligned"
    theta: float = 0.0
    channels: tuple[UserChannel, ...] = ()
    name: str = ""

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown phase scenario {self.kind!r}; choose from {KINDS}")
        object.__setattr__(self, "channels", tuple(self.channels))
        if self.kind == "channels" and not self.channels:
            raise ValueError("the channels scenario needs at least one user channel")

    @property
    def label(self) -> str:
        if self.kind == "fixed":
            return f"fixed-{self.theta:.6f}"
        if self.kind == "channels" and self.name:
            return f"channels-{self.name}"
        return self.kind

    def grid(
        self, m_users: int, cfg: FrameConfig, rng: np.random.Generator, gains=None
    ) -> np.ndarray:
        shape = (m_users, cfg.data_symbols, cfg.data_subcarriers)
        if self.kind == "aligned":
            g = np.ones(shape, complex)
        elif self.kind == "fixed":
            ph = np.exp(1j * self.theta * np.arange(m_users))
            g = np.broadcast_to(ph[:, None, None], shape).astype(complex)
        elif self.kind == "random-per-subcarrier":
            ph = np.exp(2j * np.pi * rng.random((m_users, 1, cfg.data_subcarriers)))
            g = np.broadcast_to(ph, shape).astype(complex)
        elif self.kind == "channels":
            if len(self.channels) != m_users:
                raise ValueError(f"{len(self.channels)} channels given for {m_users} users")
            g = channel_grid(self.channels, cfg)
        else:
            g = channel_grid(realistic_channels(m_users, cfg, rng), cfg)
        if gains is not None:
            g = g * np.asarray(gains, dtype=float)[:, None, None]
        return g


def realistic_channels(m_users: int, cfg: FrameConfig, rng: np.random.Generator) -> list[UserChannel]:
    """Random multipath (unit total power), TO in [0, 2] samples, CFO within +-2 kHz."""
    out = []
    for _ in range(m_users):
        delays = np.concatenate([[0], np.sort(rng.choice(np.arange(1, cfg.cp_size // 2), REALISTIC_TAPS - 1, replace=False))])
        pdp = np.exp(-delays / 2.0)
        gains = (rng.standard_normal(REALISTIC_TAPS) + 1j * rng.standard_normal(REALISTIC_TAPS)) * np.sqrt(pdp / 2)
        gains /= np.sqrt(np.sum(np.abs(gains) ** 2))
        ch = UserChannel(
            tuple(zip(gains, delays)),
            int(rng.integers(0, REALISTIC_MAX_TO + 1)),
            float(rng.uniform(-REALISTIC_MAX_CFO_HZ, REALISTIC_MAX_CFO_HZ)),
        )
        ch.validate(cfg, max_cfo_hz=REALISTIC_MAX_CFO_HZ)
        out.append(ch)
    return out
