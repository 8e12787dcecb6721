"""Toeplitz-hash message authentication over GF(2).

A tag for message ``M`` is ``T_S @ M xor r`` where ``T_S`` is the
``l_h x l_M`` Toeplitz matrix generated by the key string ``S`` and ``r`` is
``l_h`` bits of one-time key. Matrix entries follow

    T[i][j] = S[i - j + (l_M - 1)]

so row ``i`` is the reversed window ``S[i : i + l_M]``. Messages shorter
than ``l_M`` are right-padded with zeros. The one-time pad ``r`` must never
be reused; ``S`` may be.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bits import as_bits, bits_to_str

DEFAULT_TAG_BITS = 40
DEFAULT_MESSAGE_BITS = 2**22

# bounds the (rows x nonzero message bits) gather in toeplitz_matvec
_GATHER_CHUNK = 1 << 20


class ParameterError(ValueError):
    """Key material or parameters with the wrong shape."""


class OversizeError(ValueError):
    """Message longer than the configured ``l_M``."""


@dataclass(frozen=True)
class ToeplitzParams:
    l_h: int = DEFAULT_TAG_BITS
    l_M: int = DEFAULT_MESSAGE_BITS

    def __post_init__(self):
        if self.l_h < 1 or self.l_M < 1:
            raise ParameterError(f"l_h and l_M must be >= 1, got {self.l_h}, {self.l_M}")

    @property
    def generator_bits(self) -> int:
        return self.l_h + self.l_M - 1

    @property
    def tag_bytes(self) -> int:
        return (self.l_h + 7) // 8


@dataclass(frozen=True, eq=False)
class Tag:
    bits: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "bits", as_bits(self.bits))

    def __eq__(self, other):
        if not isinstance(other, Tag):
            return NotImplemented
        return np.array_equal(self.bits, other.bits)

    def __hash__(self):
        return hash(self.bits.tobytes())

    def __len__(self):
        return self.bits.size

    def __repr__(self):
        return f"Tag({bits_to_str(self.bits)})"


def _check_generator(S: np.ndarray, params: ToeplitzParams) -> np.ndarray:
    S = as_bits(S)
    if S.size != params.generator_bits:
        raise ParameterError(
            f"generator must be l_h + l_M - 1 = {params.generator_bits} bits, got {S.size}"
        )
    return S


def toeplitz_matvec(S, M, params: ToeplitzParams) -> np.ndarray:
    """Return ``T_S @ M`` over GF(2) as an ``l_h``-bit array.

    Parameters
    ----------
    S : array_like of {0, 1}
        Generator string of exactly ``l_h + l_M - 1`` bits.
    M : array_like of {0, 1}
        Message of at most ``l_M`` bits; implicitly zero-padded on the right.
    params : ToeplitzParams

    Raises
    ------
    ParameterError
        If ``S`` has the wrong length.
    OversizeError
        If ``M`` is longer than ``l_M``.
    """
    S = _check_generator(S, params)
    M = as_bits(M)
    if M.size > params.l_M:
        raise OversizeError(f"message of {M.size} bits exceeds l_M = {params.l_M}")

    # Only columns with M[j] = 1 contribute; entry (i, j) sits at S[i + l_M - 1 - j].
    cols = np.flatnonzero(M)
    base = (params.l_M - 1) - cols
    rows = np.arange(params.l_h)
    acc = np.zeros(params.l_h, dtype=np.int64)
    step = max(1, _GATHER_CHUNK // params.l_h)
    for start in range(0, base.size, step):
        chunk = base[start:start + step]
        acc += S[rows[:, None] + chunk[None, :]].sum(axis=1, dtype=np.int64)
    return (acc & 1).astype(np.uint8)


def make_tag(S, r, M, params: ToeplitzParams) -> Tag:
    r = as_bits(r)
    if r.size != params.l_h:
        raise ParameterError(f"one-time pad must be l_h = {params.l_h} bits, got {r.size}")
    return Tag(toeplitz_matvec(S, M, params) ^ r)


def verify_tag(S, r, M, tag: Tag, params: ToeplitzParams) -> bool:
    expected = make_tag(S, r, M, params)
    if len(tag) != params.l_h:
        return False
    return expected == tag
