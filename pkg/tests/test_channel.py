import struct

import numpy as np
import pytest
from hypothesis import given, strategies as st

from qsb.auth import OversizeError, Tag, ToeplitzParams, make_tag
from qsb.bits import bits_to_bytes, bytes_to_bits
from qsb.channel import (
    AuthenticationError,
    AuthFrame,
    Channel,
    FrameFormatError,
    ReplayError,
    max_payload_bytes,
    receive,
    send,
)
from qsb.keypool import KeyExhausted

P = ToeplitzParams(40, 1024)


def make_channel(extra=400, params=P, s_mode="per-direction", seed=0):
    rng = np.random.default_rng(seed)
    n = params.generator_bits + extra
    seeds = {(0, 1): rng.integers(0, 2, n, dtype=np.uint8), (1, 0): rng.integers(0, 2, n, dtype=np.uint8)}
    return Channel(0, 1, params, seeds, s_mode), seeds


def test_wire_layout_oracle():
    ch, seeds = make_channel()
    frame = send(ch, 0, b"hello")
    raw = frame.to_bytes()
    header = struct.pack(">HHQI", 0, 1, 0, 5)
    assert raw[:16] == header and raw[16:21] == b"hello" and len(raw) == 16 + 5 + 5 == len(frame)
    # independent recomputation of the tag from the seed
    S = seeds[(0, 1)][: P.generator_bits]
    r = seeds[(0, 1)][P.generator_bits: P.generator_bits + 40]
    expected = make_tag(S, r, bytes_to_bits(header + b"hello"), P)
    assert raw[21:] == bits_to_bytes(expected.bits)
    assert AuthFrame.from_bytes(raw, 40) == frame


def test_tag_padding_for_odd_lengths():
    p = ToeplitzParams(12, 512)
    ch, _ = make_channel(params=p)
    frame = ch.send(1, b"x")
    raw = frame.to_bytes()
    assert len(raw) == 16 + 1 + 2
    assert raw[-1] & 0x0F == 0
    bad = raw[:-1] + bytes([raw[-1] | 1])
    with pytest.raises(FrameFormatError):
        AuthFrame.from_bytes(bad, 12)


def test_from_bytes_rejects_bad_lengths():
    ch, _ = make_channel()
    raw = ch.send(0, b"abc").to_bytes()
    with pytest.raises(FrameFormatError):
        AuthFrame.from_bytes(raw[:-1], 40)
    with pytest.raises(FrameFormatError):
        AuthFrame.from_bytes(raw[:10], 40)


def test_delivery_and_accounting():
    ch, _ = make_channel()
    for k in range(5):
        assert receive(ch, 1, send(ch, 0, bytes([k]) * 10)) == bytes([k]) * 10
    tx, rx = ch.pools((0, 1))
    assert tx.consumed_total == rx.consumed_total == 200
    assert ch.senders[(0, 1)].frames_sent == 5
    assert ch.receivers[(0, 1)].accepted == 5


@given(st.integers(0, (16 + 8 + 5) * 8 - 1))
def test_any_bit_flip_is_rejected(bit):
    ch, _ = make_channel()
    raw = bytearray(ch.send(0, b"payload!").to_bytes())
    raw[bit // 8] ^= 0x80 >> (bit % 8)
    try:
        frame = AuthFrame.from_bytes(bytes(raw), 40)
    except FrameFormatError:
        return
    with pytest.raises((AuthenticationError, ReplayError)):
        ch.receive(1, frame)


def test_replay_and_reordering():
    ch, _ = make_channel()
    f0, f1, f2 = (ch.send(0, bytes([i])) for i in range(3))
    assert ch.receive(1, f2) == b"\x02"
    assert ch.receive(1, f0) == b"\x00"
    with pytest.raises(ReplayError):
        ch.receive(1, f0)
    assert ch.receive(1, f1) == b"\x01"


def test_forgery_does_not_desync_or_burn_sequence():
    ch, _ = make_channel()
    genuine = ch.send(0, b"real")
    forged = AuthFrame(0, 1, genuine.seq, b"fake", Tag(np.zeros(40, np.uint8)))
    with pytest.raises(AuthenticationError):
        ch.receive(1, forged)
    assert ch.receive(1, genuine) == b"real"
    nxt = ch.send(0, b"next")
    assert ch.receive(1, nxt) == b"next"
    assert ch.receivers[(0, 1)].auth_failures == 1


def test_far_future_sequence_draws_nothing():
    ch, _ = make_channel()
    rx = ch.pools((0, 1))[1]
    before = rx.consumed_total
    with pytest.raises(ReplayError):
        ch.receive(1, AuthFrame(0, 1, 10_000, b"", Tag(np.zeros(40, np.uint8))))
    assert rx.consumed_total == before


def test_misrouted_frame_rejected():
    ch, _ = make_channel()
    frame = ch.send(1, b"to zero")
    with pytest.raises(AuthenticationError):
        ch.receivers[(0, 1)].receive(frame)


def test_exhaustion_blocks_without_consuming():
    ch, _ = make_channel(extra=60)
    ch.send(0, b"one")
    tx = ch.pools((0, 1))[0]
    with pytest.raises(KeyExhausted):
        ch.send(0, b"two")
    assert tx.consumed_total == 40 and ch.senders[(0, 1)].next_seq == 1


def test_oversize():
    ch, _ = make_channel()
    limit = max_payload_bytes(P)
    assert limit == (1024 - 128) // 8
    ch.send(0, bytes(limit))
    with pytest.raises(OversizeError):
        ch.send(0, bytes(limit + 1))


def test_per_link_generator_mode():
    ch, seeds = make_channel(s_mode="per-link")
    assert ch.senders[(0, 1)].S is ch.senders[(1, 0)].S
    assert ch.receive(0, ch.send(1, b"back")) == b"back"
    # the (1, 0) seed still pins nothing in per-link mode
    assert ch.pools((1, 0))[0].pinned_bits == 0
    with pytest.raises(ValueError):
        make_channel(s_mode="sideways")
