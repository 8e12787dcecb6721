import hashlib
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from qsb.keypool import KeyPool
from qsb.qkdsim import ClockError, LinkConfig, QKDLink, generate_until, keystream_bits


def oracle_stream(seed, nbits):
    out = b""
    j = 0
    while len(out) * 8 < nbits:
        out += hashlib.shake_256(seed.to_bytes(8, "big") + j.to_bytes(8, "big")).digest(512)
        j += 1
    return np.unpackbits(np.frombuffer(out, np.uint8))[:nbits]


def test_keystream_matches_oracle_and_slices():
    full = oracle_stream(99, 10_000)
    assert np.array_equal(keystream_bits(99, 0, 10_000), full)
    assert np.array_equal(keystream_bits(99, 4090, 20), full[4090:4110])
    assert keystream_bits(99, 5, 0).size == 0
    assert not np.array_equal(keystream_bits(98, 0, 64), full[:64])


@given(st.lists(st.fractions(min_value=0, max_value=5, max_denominator=1000), max_size=20),
       st.sampled_from([0.02, 20, 100, 33.3]))
def test_total_is_floor_of_rate_times_time(times, rate):
    link = QKDLink(LinkConfig((0, 1), rate, 7))
    t_now = Fraction(0)
    chunks = []
    for t in sorted(times):
        chunks.append(link.generate_until(t))
        t_now = t
    got = np.concatenate(chunks) if chunks else np.zeros(0, np.uint8)
    expected = int(Fraction(str(rate)) * t_now // 1)
    assert got.size == expected == link.delivered
    assert np.array_equal(got, keystream_bits(7, 0, expected))


def test_clock_cannot_go_backwards():
    link = QKDLink(LinkConfig((0, 1), 10, 1))
    generate_until(link, 2)
    with pytest.raises(ClockError):
        link.generate_until(1)


def test_parity_split_mirrors_pools():
    link = QKDLink(LinkConfig((0, 1), 100, 3))
    fwd = [KeyPool((0, 1)), KeyPool((0, 1))]
    rev = [KeyPool((1, 0)), KeyPool((1, 0))]
    n = link.deliver_until(Fraction(1, 2), fwd, rev) + link.deliver_until(Fraction(13, 10), fwd, rev)
    assert n == 130
    stream = keystream_bits(3, 0, 130)
    assert np.array_equal(fwd[0].draw(65), stream[0::2])
    assert np.array_equal(fwd[1].draw(65), stream[0::2])
    assert np.array_equal(rev[0].draw(65), stream[1::2])
    assert np.array_equal(rev[1].draw(65), stream[1::2])


def test_slow_link_rate():
    # 0.02 kbit/s
    link = QKDLink(LinkConfig((0, 1), 20, 5))
    assert link.generate_until(Fraction(3, 2)).size == 30


@pytest.mark.parametrize("kwargs", [
    dict(link_id=(0, 1), key_rate=0, rng_seed=1),
    dict(link_id=(1, 1), key_rate=5, rng_seed=1),
    dict(link_id=(0, 1), key_rate=5, rng_seed=-1),
])
def test_link_config_validation(kwargs):
    with pytest.raises(ValueError):
        LinkConfig(**kwargs)


def test_table_rates():
    link = QKDLink(LinkConfig((0, 1), 100, 8))
    assert link.generate_until(10).size == 1000
    assert link.generate_until(10).size == 0
    pool = KeyPool((0, 1))
    pool.refill(QKDLink(LinkConfig((0, 1), 100, 8)).generate_until(10))
    assert pool.refilled_total == 1000


def test_deterministic_across_instances():
    a = QKDLink(LinkConfig((0, 1), 20, 77)).generate_until(Fraction(37, 10))
    b = QKDLink(LinkConfig((0, 1), 20, 77)).generate_until(Fraction(37, 10))
    assert np.array_equal(a, b)


@given(st.sampled_from([0.02, 20, 100]), st.fractions(min_value=0, max_value=50, max_denominator=100),
       st.integers(1, 20))
def test_rate_fidelity_over_long_windows(rate, start, scale):
    link = QKDLink(LinkConfig((0, 1), rate, 9))
    link.generate_until(start)
    window = Fraction(100 * scale) / Fraction(str(rate))
    got = link.generate_until(start + window).size
    assert 0.99 * float(window) * rate <= got <= float(window) * rate + 1e-9
