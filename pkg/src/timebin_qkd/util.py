"""Shared plumbing: parameter errors, seed handling, bit vectors, checksums."""

from __future__ import annotations

import numpy as np

Seed = "int | np.random.SeedSequence"


class ParameterError(ValueError):
    """An operation received an invalid parameter."""


class AlignmentError(ValueError):
    """Two per-frame sequences do not cover the same frame range."""


def seed_sequence(seed) -> np.random.SeedSequence:
    """Normalize an int (or an existing SeedSequence) into a SeedSequence."""
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(seed)


def spawn_rngs(seed, count: int) -> list[np.random.Generator]:
    """Derive `count` independent generators from one seed.

    Sub-streams are spawned, not split by offset, so draws on one stream
    never perturb the others.
    """
    return [np.random.default_rng(child) for child in seed_sequence(seed).spawn(count)]


def bits_from_string(s: str) -> np.ndarray:
    """'0110' -> uint8 array. Raises on characters outside {0,1}."""
    arr = np.frombuffer(s.encode("ascii"), dtype=np.uint8) - ord("0")
    if arr.size and arr.max() > 1:
        raise ParameterError(f"bit string contains characters outside 0/1: {s[:16]!r}...")
    return arr.astype(np.uint8)


def bits_to_string(bits: np.ndarray) -> str:
    return "".join("1" if b else "0" for b in np.asarray(bits, dtype=np.uint8))


def pack_bits(bits: np.ndarray) -> bytes:
    """Pack a bit vector MSB-first into bytes, zero-padding the tail."""
    return np.packbits(np.asarray(bits, dtype=np.uint8)).tobytes()


def bits_to_hex(bits: np.ndarray) -> str:
    """Lowercase hex of the MSB-first packed bit vector ('' for empty)."""
    if len(bits) == 0:
        return ""
    return pack_bits(bits).hex()


# CRC-64/ECMA-182: x^64 + x^62 + ... (poly 0x42F0E1EBA9EA3693), MSB-first,
# init 0, no reflection. Used as the public verification tag in reconciliation.
_CRC64_POLY = 0x42F0E1EBA9EA3693
_CRC64_TABLE: list[int] | None = None


def _crc64_table() -> list[int]:
    global _CRC64_TABLE
    if _CRC64_TABLE is None:
        table = []
        for byte in range(256):
            crc = byte << 56
            for _ in range(8):
                if crc & (1 << 63):
                    crc = ((crc << 1) ^ _CRC64_POLY) & 0xFFFFFFFFFFFFFFFF
                else:
                    crc = (crc << 1) & 0xFFFFFFFFFFFFFFFF
            table.append(crc)
        _CRC64_TABLE = table
    return _CRC64_TABLE


def crc64(data: bytes) -> int:
    table = _crc64_table()
    crc = 0
    for byte in data:
        crc = (table[((crc >> 56) ^ byte) & 0xFF] ^ (crc << 8)) & 0xFFFFFFFFFFFFFFFF
    return crc


def crc64_bits(bits: np.ndarray) -> int:
    """Checksum of a bit vector; length is mixed in so '0' and '00' differ."""
    return crc64(len(bits).to_bytes(8, "big") + pack_bits(bits))
