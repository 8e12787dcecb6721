"""Simulated QKD key supply.

Each link produces a stream of shared secret bits at ``key_rate`` bits per
simulated second. The bits are pseudorandom (SHAKE-256 in counter mode over
the link seed), so runs are reproducible; the unconditional secrecy of real
QKD output is modelled, not realised. Photonics, QBER and error correction
are not simulated: bits arrive ideal and identical at both ends.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .keypool import KeyPool

_BLOCK_BYTES = 512
_BLOCK_BITS = _BLOCK_BYTES * 8


class ClockError(ValueError):
    """Generation requested for a time earlier than the previous request."""


@dataclass(frozen=True)
class LinkConfig:
    """One unordered link of the mesh.

    ``classical`` marks links whose keys would come from a classical source in
    a physical deployment; they are simulated identically. ``metadata`` holds
    inert hardware descriptors (encoding, length, loss, QBER).
    """

    link_id: tuple
    key_rate: float
    rng_seed: int
    classical: bool = False
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.key_rate > 0:
            raise ValueError(f"key_rate must be > 0, got {self.key_rate}")
        if len(self.link_id) != 2 or self.link_id[0] == self.link_id[1]:
            raise ValueError(f"link_id must name two distinct nodes, got {self.link_id}")
        if not 0 <= self.rng_seed < 2**64:
            raise ValueError("rng_seed must fit in 64 bits")


def _exact(x) -> Fraction:
    return x if isinstance(x, Fraction) else Fraction(str(x))


def keystream_bits(seed: int, start: int, count: int) -> np.ndarray:
    """Bits ``[start, start + count)`` of the keystream for ``seed``."""
    if count <= 0:
        return np.zeros(0, dtype=np.uint8)
    first, last = start // _BLOCK_BITS, (start + count - 1) // _BLOCK_BITS
    prefix = seed.to_bytes(8, "big")
    blocks = [
        hashlib.shake_256(prefix + j.to_bytes(8, "big")).digest(_BLOCK_BYTES)
        for j in range(first, last + 1)
    ]
    bits = np.unpackbits(np.frombuffer(b"".join(blocks), dtype=np.uint8))
    off = start - first * _BLOCK_BITS
    return bits[off:off + count]


class QKDLink:
    """Stateful generator for one link.

    Fractional bits carry over between calls: after any sequence of calls
    the total delivered is ``floor(key_rate * elapsed)``.
    """

    def __init__(self, config: LinkConfig, start_time: float = 0.0):
        self.config = config
        self._rate = _exact(config.key_rate)
        self._t0 = _exact(start_time)
        self._last = self._t0
        self.delivered = 0

    @property
    def last_time(self) -> Fraction:
        return self._last

    def generate_until(self, sim_time) -> np.ndarray:
        t = _exact(sim_time)
        if t < self._last:
            raise ClockError(f"time went backwards: {float(t)} < {float(self._last)}")
        self._last = t
        target = math.floor(self._rate * (t - self._t0))
        bits = keystream_bits(self.config.rng_seed, self.delivered, target - self.delivered)
        self.delivered = target
        return bits

    def deliver_until(self, sim_time, forward: list[KeyPool], reverse: list[KeyPool]) -> int:
        """Generate up to ``sim_time`` and refill the direction pools.

        Stream bit ``k`` goes to the ``forward`` direction (low id to high id)
        when ``k`` is even and to ``reverse`` when odd, so each direction
        receives half the link rate. Every pool in a list gets identical bits.
        Returns the number of bits generated.
        """
        start = self.delivered
        bits = self.generate_until(sim_time)
        if bits.size:
            parity = (start + np.arange(bits.size)) & 1
            for pools, sel in ((forward, parity == 0), (reverse, parity == 1)):
                part = bits[sel]
                if part.size:
                    for pool in pools:
                        pool.refill(part)
        return int(bits.size)


def generate_until(link: QKDLink, sim_time) -> np.ndarray:
    return link.generate_until(sim_time)
