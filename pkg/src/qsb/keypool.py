"""Per-direction shared-secret pools.

Each direction ``a -> b`` of a link has two mirrored :class:`KeyPool` copies,
one held by each endpoint. Both copies are seeded with the same pre-shared
bits and refilled with the same QKD output, and both endpoints draw in the
same order, so draws return identical bits on either side.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .bits import as_bits


class KeyExhausted(Exception):
    """Raised by :meth:`KeyPool.draw` when the buffer is too shallow.

    The caller is expected to defer the send and retry after a refill.
    """

    def __init__(self, link_id, requested: int, available: int):
        self.link_id = link_id
        self.requested = requested
        self.available = available
        self.shortfall = requested - available
        super().__init__(
            f"pool {link_id}: requested {requested} bits, {available} available "
            f"(short {self.shortfall})"
        )


@dataclass(frozen=True)
class ConsumptionReport:
    link_id: tuple
    consumed_total: int
    refilled_total: int
    seed_bits: int
    seed_remaining: int
    pinned_bits: int
    depth: int
    window_s: float
    rate_bps: float
    exhaustions: int

    def to_dict(self) -> dict:
        return {
            "link": list(self.link_id),
            "consumed_total": self.consumed_total,
            "refilled_total": self.refilled_total,
            "seed_bits": self.seed_bits,
            "seed_remaining": self.seed_remaining,
            "pinned_bits": self.pinned_bits,
            "depth": self.depth,
            "window_s": self.window_s,
            "rate_bps": self.rate_bps,
            "exhaustions": self.exhaustions,
        }


class KeyPool:
    """FIFO buffer of secret bits for one link direction.

    ``seed`` is the pre-shared material available before the first QKD
    session. :meth:`pin` removes a prefix permanently (used for the Toeplitz
    generator ``S``); pinned bits are tracked apart from ``consumed_total``,
    which counts one-time pad draws only. The accounting identity is::

        consumed_total + pinned_bits + depth == refilled_total + seed_bits
    """

    def __init__(self, link_id, seed=None):
        self.link_id = tuple(link_id)
        self._chunks: deque[np.ndarray] = deque()
        self._head = 0  # offset into _chunks[0]
        self.depth = 0
        self.consumed_total = 0
        self.refilled_total = 0
        self.pinned_bits = 0
        self.exhaustions = 0
        seed_bits = as_bits(seed) if seed is not None else np.zeros(0, np.uint8)
        self.seed_bits = int(seed_bits.size)
        self._seed_left = self.seed_bits
        if seed_bits.size:
            self._push(seed_bits.copy())

    @property
    def seed_remaining(self) -> int:
        return self._seed_left

    @property
    def available(self) -> int:
        return self.depth

    def _push(self, bits: np.ndarray) -> None:
        self._chunks.append(bits)
        self.depth += bits.size

    def _pop(self, n: int) -> np.ndarray:
        out = np.empty(n, dtype=np.uint8)
        filled = 0
        while filled < n:
            chunk = self._chunks[0]
            take = min(n - filled, chunk.size - self._head)
            out[filled:filled + take] = chunk[self._head:self._head + take]
            filled += take
            self._head += take
            if self._head == chunk.size:
                self._chunks.popleft()
                self._head = 0
        self.depth -= n
        self._seed_left = max(0, self._seed_left - n)
        return out

    def draw(self, n_bits: int) -> np.ndarray:
        """Remove and return ``n_bits`` from the head of the buffer.

        Raises :class:`KeyExhausted` (leaving the pool untouched) if fewer
        than ``n_bits`` are available.
        """
        if n_bits < 1:
            raise ValueError("n_bits must be >= 1")
        if n_bits > self.depth:
            self.exhaustions += 1
            raise KeyExhausted(self.link_id, n_bits, self.depth)
        self.consumed_total += n_bits
        return self._pop(n_bits)

    def pin(self, n_bits: int) -> np.ndarray:
        """Permanently take ``n_bits`` for a reusable key such as ``S``."""
        if n_bits > self.depth:
            raise KeyExhausted(self.link_id, n_bits, self.depth)
        self.pinned_bits += n_bits
        return self._pop(n_bits)

    def refill(self, bits) -> "KeyPool":
        bits = as_bits(bits)
        if bits.size == 0:
            raise ValueError("refill requires at least one bit")
        self._push(bits.copy())
        self.refilled_total += int(bits.size)
        return self

    def consumption_report(self, window_s: float = 0.0) -> ConsumptionReport:
        """Snapshot of the counters; ``rate_bps`` is consumed bits per second of ``window_s``."""
        rate = self.consumed_total / window_s if window_s > 0 else 0.0
        return ConsumptionReport(
            link_id=self.link_id,
            consumed_total=self.consumed_total,
            refilled_total=self.refilled_total,
            seed_bits=self.seed_bits,
            seed_remaining=self.seed_remaining,
            pinned_bits=self.pinned_bits,
            depth=self.depth,
            window_s=float(window_s),
            rate_bps=rate,
            exhaustions=self.exhaustions,
        )

    def check_conservation(self) -> bool:
        return (
            self.consumed_total + self.pinned_bits + self.depth
            == self.refilled_total + self.seed_bits
        )

    def __repr__(self):
        return (
            f"KeyPool({self.link_id}, depth={self.depth}, consumed={self.consumed_total}, "
            f"refilled={self.refilled_total})"
        )


def default_seed_bits(l_h: int, l_M: int) -> int:
    return 10 * (l_h + l_M - 1)


def draw(pool: KeyPool, n_bits: int) -> np.ndarray:
    return pool.draw(n_bits)


def refill(pool: KeyPool, bits) -> KeyPool:
    return pool.refill(bits)


def consumption_report(pool: KeyPool, window_s: float = 0.0) -> ConsumptionReport:
    return pool.consumption_report(window_s)
