"""Authenticated pairwise classical channel.

Wire layout of an :class:`AuthFrame` (all integers big-endian)::

    sender      u16
    receiver    u16
    seq         u64
    payload_len u32
    payload     payload_len bytes
    tag         ceil(l_h / 8) bytes, tag bits MSB-first, zero padded

The tag covers ``header || payload`` (the first 16 + payload_len bytes) as a
bit string. Each frame consumes ``l_h`` fresh bits from the sender's pool for
its direction; the receiver draws the mirrored bits once per sequence number.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .auth import OversizeError, Tag, ToeplitzParams, make_tag, verify_tag
from .bits import bits_to_bytes, bytes_to_bits
from .keypool import KeyExhausted, KeyPool

HEADER = struct.Struct(">HHQI")
HEADER_BITS = HEADER.size * 8
DEFAULT_REPLAY_WINDOW = 64


class FrameRejected(Exception):
    """Frame dropped by the receiver; never delivered to the node layer."""


class AuthenticationError(FrameRejected):
    pass


class ReplayError(FrameRejected):
    pass


class FrameFormatError(ValueError):
    pass


@dataclass(frozen=True)
class AuthFrame:
    sender: int
    receiver: int
    seq: int
    payload: bytes
    tag: Tag

    @property
    def payload_len(self) -> int:
        return len(self.payload)

    @property
    def header(self) -> bytes:
        return HEADER.pack(self.sender, self.receiver, self.seq, len(self.payload))

    def authenticated_bits(self) -> np.ndarray:
        return bytes_to_bits(self.header + self.payload)

    def to_bytes(self) -> bytes:
        return self.header + self.payload + bits_to_bytes(self.tag.bits)

    @classmethod
    def from_bytes(cls, data: bytes, l_h: int) -> "AuthFrame":
        tag_len = (l_h + 7) // 8
        if len(data) < HEADER.size + tag_len:
            raise FrameFormatError("frame shorter than header plus tag")
        sender, receiver, seq, plen = HEADER.unpack_from(data)
        if len(data) != HEADER.size + plen + tag_len:
            raise FrameFormatError(
                f"payload_len {plen} inconsistent with frame size {len(data)}"
            )
        payload = data[HEADER.size:HEADER.size + plen]
        tag_bits = bytes_to_bits(data[HEADER.size + plen:])
        if tag_bits[l_h:].any():
            raise FrameFormatError("nonzero tag padding")
        return cls(sender, receiver, seq, payload, Tag(tag_bits[:l_h]))

    def __len__(self):
        return HEADER.size + len(self.payload) + (self.tag.bits.size + 7) // 8


def max_payload_bytes(params: ToeplitzParams) -> int:
    return max(0, (params.l_M - HEADER_BITS) // 8)


class ChannelSender:
    """Sending half of one direction, held by ``owner``."""

    def __init__(self, owner: int, peer: int, pool: KeyPool, S: np.ndarray, params: ToeplitzParams):
        self.owner = owner
        self.peer = peer
        self.pool = pool
        self.S = S
        self.params = params
        self.next_seq = 0
        self.frames_sent = 0
        self.bytes_sent = 0

    def send(self, payload: bytes) -> AuthFrame:
        """Frame and tag ``payload``.

        Raises :class:`~qsb.keypool.KeyExhausted` if the pool holds fewer than
        ``l_h`` bits (nothing is consumed; retry after a refill) and
        :class:`~qsb.auth.OversizeError` if the framed message exceeds ``l_M``.
        """
        payload = bytes(payload)
        if HEADER_BITS + 8 * len(payload) > self.params.l_M:
            raise OversizeError(
                f"{len(payload)}-byte payload exceeds l_M = {self.params.l_M} bits after framing"
            )
        r = self.pool.draw(self.params.l_h)
        unsigned = AuthFrame(self.owner, self.peer, self.next_seq, payload, Tag(np.zeros(self.params.l_h, np.uint8)))
        tag = make_tag(self.S, r, unsigned.authenticated_bits(), self.params)
        frame = AuthFrame(self.owner, self.peer, self.next_seq, payload, tag)
        self.next_seq += 1
        self.frames_sent += 1
        self.bytes_sent += len(frame)
        return frame


class ChannelReceiver:
    """Receiving half of one direction, held by ``owner``.

    The one-time pad for a sequence number is drawn the first time a frame
    with that number arrives and cached until a frame with that number
    verifies, so a forged frame cannot desynchronise the mirrored pools or
    burn the sequence number of the genuine frame. Sequence numbers at or
    beyond ``next undrawn + window`` are rejected without drawing.
    """

    def __init__(self, owner: int, peer: int, pool: KeyPool, S: np.ndarray, params: ToeplitzParams,
                 window: int = DEFAULT_REPLAY_WINDOW):
        self.owner = owner
        self.peer = peer
        self.pool = pool
        self.S = S
        self.params = params
        self.window = window
        self._undrawn = 0
        self._pads: dict[int, np.ndarray] = {}
        self.accepted = 0
        self.auth_failures = 0
        self.replays = 0

    def _pad_for(self, seq: int) -> np.ndarray | None:
        if seq in self._pads:
            return self._pads[seq]
        if seq < self._undrawn or seq >= self._undrawn + self.window:
            return None
        while self._undrawn <= seq:
            try:
                self._pads[self._undrawn] = self.pool.draw(self.params.l_h)
            except KeyExhausted:
                return None
            self._undrawn += 1
        for stale in [s for s in self._pads if s < self._undrawn - self.window]:
            del self._pads[stale]
        return self._pads[seq]

    def receive(self, frame: AuthFrame) -> bytes:
        if frame.sender != self.peer or frame.receiver != self.owner:
            self.auth_failures += 1
            raise AuthenticationError(
                f"frame {frame.sender}->{frame.receiver} arrived on {self.peer}->{self.owner}"
            )
        if HEADER_BITS + 8 * len(frame.payload) > self.params.l_M:
            self.auth_failures += 1
            raise AuthenticationError("frame exceeds l_M")
        r = self._pad_for(frame.seq)
        if r is None:
            self.replays += 1
            raise ReplayError(f"seq {frame.seq} is stale or outside the window on {self.peer}->{self.owner}")
        if not verify_tag(self.S, r, frame.authenticated_bits(), frame.tag, self.params):
            self.auth_failures += 1
            raise AuthenticationError(f"tag mismatch for seq {frame.seq} on {self.peer}->{self.owner}")
        del self._pads[frame.seq]
        self.accepted += 1
        return frame.payload


class Channel:
    """Both directions of a link between nodes ``a`` and ``b``.

    ``seeds`` maps each ordered pair ``(src, dst)`` to that direction's
    pre-shared seed bits. With ``s_mode="per-direction"`` each direction pins
    its own Toeplitz generator from its seed; with ``"per-link"`` the
    generator is pinned once from the ``(min, max)`` direction and shared.
    Each direction keeps two mirrored pools, one per endpoint.
    """

    def __init__(self, a: int, b: int, params: ToeplitzParams, seeds: dict, s_mode: str = "per-direction",
                 window: int = DEFAULT_REPLAY_WINDOW):
        if s_mode not in ("per-direction", "per-link"):
            raise ValueError(f"unknown s_mode {s_mode!r}")
        self.a, self.b = a, b
        self.params = params
        self.s_mode = s_mode
        self.senders: dict[tuple, ChannelSender] = {}
        self.receivers: dict[tuple, ChannelReceiver] = {}
        lo, hi = min(a, b), max(a, b)
        shared_S = None
        for src, dst in ((lo, hi), (hi, lo)):
            tx_pool = KeyPool((src, dst), seeds[(src, dst)])
            rx_pool = KeyPool((src, dst), seeds[(src, dst)])
            if s_mode == "per-direction" or shared_S is None:
                S = tx_pool.pin(params.generator_bits)
                S_rx = rx_pool.pin(params.generator_bits)
                assert np.array_equal(S, S_rx)
                shared_S = S
            else:
                S = shared_S
            self.senders[(src, dst)] = ChannelSender(src, dst, tx_pool, S, params)
            self.receivers[(src, dst)] = ChannelReceiver(dst, src, rx_pool, S, params, window)

    def pools(self, direction) -> tuple[KeyPool, KeyPool]:
        """(sender copy, receiver copy) for ``direction = (src, dst)``."""
        return self.senders[direction].pool, self.receivers[direction].pool

    def send(self, src: int, payload: bytes) -> AuthFrame:
        dst = self.b if src == self.a else self.a
        return self.senders[(src, dst)].send(payload)

    def receive(self, dst: int, frame: AuthFrame) -> bytes:
        src = self.b if dst == self.a else self.a
        return self.receivers[(src, dst)].receive(frame)


def send(link: Channel, sender: int, payload: bytes) -> AuthFrame:
    return link.send(sender, payload)


def receive(link: Channel, receiver: int, frame: AuthFrame) -> bytes:
    return link.receive(receiver, frame)
