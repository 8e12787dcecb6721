import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from qsb.auth import (
    OversizeError,
    ParameterError,
    Tag,
    ToeplitzParams,
    make_tag,
    toeplitz_matvec,
    verify_tag,
)
from qsb.bits import str_to_bits


def dense_toeplitz(S, l_h, l_M):
    # straight from the definition T[i][j] = S[i - j + l_M - 1]
    T = np.zeros((l_h, l_M), dtype=np.int64)
    for i in range(l_h):
        for j in range(l_M):
            T[i, j] = S[i - j + l_M - 1]
    return T


def oracle_hash(S, M, l_h, l_M):
    padded = np.zeros(l_M, dtype=np.int64)
    padded[: len(M)] = M
    return (dense_toeplitz(S, l_h, l_M) @ padded) % 2


@st.composite
def problems(draw, max_h=16, max_m=96):
    l_h = draw(st.integers(1, max_h))
    l_M = draw(st.integers(1, max_m))
    S = draw(st.lists(st.integers(0, 1), min_size=l_h + l_M - 1, max_size=l_h + l_M - 1))
    M = draw(st.lists(st.integers(0, 1), min_size=0, max_size=l_M))
    return ToeplitzParams(l_h, l_M), np.array(S, np.uint8), np.array(M, np.uint8)


def test_known_answer():
    p = ToeplitzParams(3, 3)
    S = str_to_bits("10110")
    # rows: [1,0,1], [1,1,0], [0,1,1]
    assert dense_toeplitz(S, 3, 3).tolist() == [[1, 0, 1], [1, 1, 0], [0, 1, 1]]
    assert toeplitz_matvec(S, str_to_bits("110"), p).tolist() == [1, 0, 1]
    assert make_tag(S, str_to_bits("001"), str_to_bits("110"), p) == Tag(str_to_bits("100"))


@given(problems())
def test_matches_dense_oracle(problem):
    p, S, M = problem
    assert toeplitz_matvec(S, M, p).tolist() == oracle_hash(S, M, p.l_h, p.l_M).tolist()


def test_exhaustive_small_parameters():
    for l_h, l_M in [(1, 1), (1, 2), (2, 2), (2, 3), (3, 3), (1, 5), (4, 4)]:
        p = ToeplitzParams(l_h, l_M)
        for S in itertools.product((0, 1), repeat=l_h + l_M - 1):
            S = np.array(S, np.uint8)
            for M in itertools.product((0, 1), repeat=l_M):
                M = np.array(M, np.uint8)
                assert np.array_equal(toeplitz_matvec(S, M, p), oracle_hash(S, M, l_h, l_M))


def test_large_message_chunked_path():
    rng = np.random.default_rng(5)
    p = ToeplitzParams(40, 4096)
    S = rng.integers(0, 2, p.generator_bits, dtype=np.uint8)
    M = rng.integers(0, 2, p.l_M, dtype=np.uint8)
    assert np.array_equal(toeplitz_matvec(S, M, p), oracle_hash(S, M, 40, 4096))


@given(problems(max_m=48), st.data())
def test_linearity(problem, data):
    p, S, M1 = problem
    M2 = np.array(data.draw(st.lists(st.integers(0, 1), min_size=p.l_M, max_size=p.l_M)), np.uint8)
    M1 = np.pad(M1, (0, p.l_M - M1.size))
    lhs = toeplitz_matvec(S, M1 ^ M2, p)
    rhs = toeplitz_matvec(S, M1, p) ^ toeplitz_matvec(S, M2, p)
    assert np.array_equal(lhs, rhs)


@given(problems(max_m=48))
def test_zero_padding_is_implicit(problem):
    p, S, M = problem
    padded = np.pad(M, (0, p.l_M - M.size))
    assert np.array_equal(toeplitz_matvec(S, M, p), toeplitz_matvec(S, padded, p))


@given(problems(max_m=48), st.data())
def test_tag_roundtrip_and_bitflip(problem, data):
    p, S, M = problem
    r = np.array(data.draw(st.lists(st.integers(0, 1), min_size=p.l_h, max_size=p.l_h)), np.uint8)
    tag = make_tag(S, r, M, p)
    assert verify_tag(S, r, M, tag, p)
    k = data.draw(st.integers(0, p.l_h - 1))
    flipped = tag.bits.copy()
    flipped[k] ^= 1
    assert not verify_tag(S, r, M, Tag(flipped), p)


def test_parameter_errors():
    p = ToeplitzParams(4, 8)
    with pytest.raises(ParameterError):
        toeplitz_matvec(np.zeros(5, np.uint8), np.zeros(8, np.uint8), p)
    with pytest.raises(OversizeError):
        toeplitz_matvec(np.zeros(11, np.uint8), np.zeros(9, np.uint8), p)
    with pytest.raises(ParameterError):
        make_tag(np.zeros(11, np.uint8), np.zeros(3, np.uint8), np.zeros(8, np.uint8), p)
    with pytest.raises(ParameterError):
        ToeplitzParams(0, 8)
    assert not verify_tag(np.zeros(11, np.uint8), np.zeros(4, np.uint8), np.zeros(8, np.uint8),
                          Tag(np.zeros(3, np.uint8)), p)


def test_defaults():
    p = ToeplitzParams()
    assert (p.l_h, p.l_M) == (40, 2**22)
    assert p.generator_bits == 40 + 2**22 - 1
    assert p.tag_bytes == 5


def test_random_tag_forgery_rate():
    # guessing the tag for a fresh pad succeeds with probability 2^-l_h
    rng = np.random.default_rng(11)
    p = ToeplitzParams(4, 32)
    S = rng.integers(0, 2, p.generator_bits, dtype=np.uint8)
    M = rng.integers(0, 2, p.l_M, dtype=np.uint8)
    trials, hits = 20_000, 0
    for _ in range(trials):
        r = rng.integers(0, 2, p.l_h, dtype=np.uint8)
        guess = Tag(rng.integers(0, 2, p.l_h, dtype=np.uint8))
        hits += verify_tag(S, r, M, guess, p)
    q = 2.0**-p.l_h
    assert abs(hits / trials - q) <= 3 * np.sqrt(q * (1 - q) / trials)


@pytest.mark.parametrize("l_h", [4, 8])
def test_substitution_forgery_bound(l_h):
    # the forger sees (M, tag) under fresh uniform S and r and submits (M', tag ^ delta)
    trials = 100_000
    rng = np.random.default_rng(l_h)
    p = ToeplitzParams(l_h, 16)
    M = rng.integers(0, 2, p.l_M, dtype=np.uint8)
    forged = M.copy()
    forged[5] ^= 1
    delta = rng.integers(0, 2, l_h, dtype=np.uint8)
    keys = rng.integers(0, 2, (trials, p.generator_bits), dtype=np.uint8)
    pads = rng.integers(0, 2, (trials, l_h), dtype=np.uint8)
    hits = 0
    for S, r in zip(keys, pads):
        tag = make_tag(S, r, M, p)
        hits += verify_tag(S, r, forged, Tag(tag.bits ^ delta), p)
    q = 2.0**-l_h
    assert abs(hits / trials - q) <= 3 * np.sqrt(q * (1 - q) / trials)
