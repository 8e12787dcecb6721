"""Bit-string helpers.

Bit strings are 1-D ``numpy.uint8`` arrays holding 0/1 values. Bytes map to
bits most-significant-bit first, so ``b"\\x80"`` is ``[1, 0, 0, 0, 0, 0, 0, 0]``.
"""

from __future__ import annotations

import numpy as np


def as_bits(value) -> np.ndarray:
    """Coerce a sequence of 0/1 values to a contiguous uint8 bit array."""
    arr = np.ascontiguousarray(value, dtype=np.uint8).reshape(-1)
    if arr.size and arr.max() > 1:
        raise ValueError("bit strings may only contain 0 and 1")
    return arr


def bytes_to_bits(data: bytes) -> np.ndarray:
    return np.unpackbits(np.frombuffer(data, dtype=np.uint8))


def bits_to_bytes(bits: np.ndarray) -> bytes:
    """Pack bits MSB-first, zero-padding the final byte."""
    return np.packbits(as_bits(bits)).tobytes()


def bits_to_str(bits: np.ndarray) -> str:
    return "".join("1" if b else "0" for b in as_bits(bits))


def str_to_bits(text: str) -> np.ndarray:
    return as_bits([int(c) for c in text])
