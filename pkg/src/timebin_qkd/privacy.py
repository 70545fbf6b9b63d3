"""Privacy amplification: Toeplitz universal hashing with an explicit
entropy-minus-leakage output-length budget.

The hash seed is public randomness and is not counted as secret.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .util import ParameterError


@dataclass(frozen=True)
class AmplificationBudget:
    """Output-length accounting for a reconciled key.

    output_length = max(0, floor(reconciled_length * entropy_per_bit)
                           - leaked_bits - security_margin)
    """

    reconciled_length: int
    entropy_per_bit: float
    leaked_bits: int
    security_margin: int = 64

    def __post_init__(self):
        if self.reconciled_length < 0 or self.leaked_bits < 0 or self.security_margin < 0:
            raise ParameterError("budget fields must be nonnegative")
        if not (0.0 <= self.entropy_per_bit <= 1.0):
            raise ParameterError(
                f"entropy_per_bit must be in [0,1], got {self.entropy_per_bit}")


def key_length_budget(b: AmplificationBudget) -> int:
    """Final key length in bits; 0 when the budget is nonpositive."""
    value = int(b.reconciled_length * b.entropy_per_bit) - b.leaked_bits - b.security_margin
    return max(0, value)


def toeplitz_hash(key: np.ndarray, seed_bits: np.ndarray, out_len: int) -> np.ndarray:
    """Hash an L-bit key to out_len bits with a seeded binary Toeplitz matrix.

    The seed (length L + out_len - 1) fills the matrix along diagonals:
    T[i][j] = seed_bits[out_len - 1 + j - i], i.e. the first row reads
    seed_bits[out_len-1:] and the first column holds seed_bits[0:out_len)
    bottom-up. Output bit i is the GF(2) inner product of row i with the key.
    """
    key = np.asarray(key, dtype=np.uint8)
    seed_bits = np.asarray(seed_bits, dtype=np.uint8)
    length = len(key)
    if out_len < 0 or out_len > length:
        raise ParameterError(f"out_len must be in [0, {length}], got {out_len}")
    if len(seed_bits) != length + out_len - 1:
        raise ParameterError(
            f"seed must have length {length + out_len - 1}, got {len(seed_bits)}")
    if out_len == 0:
        return np.empty(0, dtype=np.uint8)
    if length * out_len <= 1 << 16:
        # Window k of the seed is row (out_len - 1 - k) of T.
        windows = sliding_window_view(seed_bits, length)
        products = windows[::-1].astype(np.int64) @ key.astype(np.int64)
        return (products & 1).astype(np.uint8)
    # Large keys: the banded product is a convolution; FFT keeps it
    # O(n log n). Counts stay far below the float64 rounding threshold.
    size = length + len(seed_bits) - 1
    nfft = 1 << max(size - 1, 1).bit_length()
    spec = np.fft.rfft(key.astype(np.float64), nfft) \
        * np.fft.rfft(seed_bits[::-1].astype(np.float64), nfft)
    conv = np.fft.irfft(spec, nfft)
    counts = np.rint(conv[length - 1: length - 1 + out_len]).astype(np.int64)
    return (counts & 1).astype(np.uint8)
