"""Time-bin framing, PPM sifting, and bin-index-to-bit mapping.

Frames tile the timeline starting at t=0; bins are half-open intervals
[k*T_f/n, (k+1)*T_f/n), so a tag exactly on a boundary belongs to the
later bin. A frame is retained only when exactly one of its bins is
occupied; surviving bin indices map to log2(n)-bit words.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .source_detector import TimeTagStream
from .util import AlignmentError, ParameterError

RETAINED = "retained"
EMPTY = "empty"
MULTI = "multi"

DISCARD_REASONS = ("alice_empty", "bob_empty", "alice_multi", "bob_multi", "both_invalid")


@dataclass(frozen=True)
class FrameConfig:
    """Frame of duration `frame_duration` split into `bins_per_frame` bins."""

    frame_duration: float
    bins_per_frame: int
    mapping: str = "gray"

    def __post_init__(self):
        if not (self.frame_duration > 0):
            raise ParameterError(f"frame_duration must be > 0, got {self.frame_duration}")
        n = self.bins_per_frame
        if n < 1 or (n & (n - 1)) != 0:
            raise ParameterError(f"bins_per_frame must be a power of two >= 1, got {n}")
        if self.mapping not in ("natural", "gray"):
            raise ParameterError(f"mapping must be 'natural' or 'gray', got {self.mapping!r}")

    @property
    def bin_width(self) -> float:
        return self.frame_duration / self.bins_per_frame

    @property
    def bits_per_frame(self) -> int:
        return self.bins_per_frame.bit_length() - 1


@dataclass
class FrameObservation:
    """Occupancy pattern of one frame plus its sift verdict."""

    frame_index: int
    occupied_bins: frozenset
    verdict: str
    bin_index: int | None = None  # set iff verdict == RETAINED

    @classmethod
    def from_bins(cls, frame_index: int, occupied: frozenset) -> "FrameObservation":
        if len(occupied) == 0:
            return cls(frame_index, occupied, EMPTY)
        if len(occupied) == 1:
            (only,) = occupied
            return cls(frame_index, occupied, RETAINED, bin_index=int(only))
        return cls(frame_index, occupied, MULTI)


@dataclass
class SiftedPairs:
    """Frames retained by both parties, with discard bookkeeping.

    `frame_indices`, `alice_bins`, `bob_bins` are parallel arrays sorted by
    frame index. `discards` counts dropped frames by reason.
    """

    frame_indices: np.ndarray
    alice_bins: np.ndarray
    bob_bins: np.ndarray
    discards: dict

    @property
    def count(self) -> int:
        return len(self.frame_indices)

    def slice(self, start: int, stop: int) -> "SiftedPairs":
        """Sub-range of pairs (discard counters are not split)."""
        return SiftedPairs(self.frame_indices[start:stop], self.alice_bins[start:stop],
                           self.bob_bins[start:stop], dict(self.discards))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write("frame_index,alice_bin,bob_bin\n")
            for f, a, b in zip(self.frame_indices, self.alice_bins, self.bob_bins):
                fh.write(f"{int(f)},{int(a)},{int(b)}\n")


def frame_and_bin(stream: TimeTagStream, cfg: FrameConfig) -> list[FrameObservation]:
    """Discretize a tag stream into per-frame bin-occupancy observations.

    Covers frames 0 .. floor(duration/T_f)-1; frames with no tags appear
    with verdict 'empty'. Tags in a trailing partial frame are ignored.
    """
    num_frames = int(math.floor(stream.duration / cfg.frame_duration))
    n = cfg.bins_per_frame
    t = stream.times
    frame_idx = np.floor(t / cfg.frame_duration).astype(np.int64)
    frac = t - frame_idx * cfg.frame_duration
    bin_idx = np.floor(frac * n / cfg.frame_duration).astype(np.int64)
    np.clip(bin_idx, 0, n - 1, out=bin_idx)
    in_range = frame_idx < num_frames
    frame_idx, bin_idx = frame_idx[in_range], bin_idx[in_range]

    occupied: dict[int, set] = {}
    for f, b in zip(frame_idx.tolist(), bin_idx.tolist()):
        occupied.setdefault(f, set()).add(b)
    return [
        FrameObservation.from_bins(i, frozenset(occupied.get(i, ())))
        for i in range(num_frames)
    ]


def ppm_sift(alice: list[FrameObservation], bob: list[FrameObservation]) -> SiftedPairs:
    """Keep frames retained by *both* parties; count the rest by discard reason.

    Models the public frame-validity exchange: a frame invalid for either
    party is discarded by both.
    """
    if len(alice) != len(bob) or any(
        a.frame_index != b.frame_index for a, b in zip(alice, bob)
    ):
        raise AlignmentError(
            f"frame ranges differ: alice has {len(alice)} frames, bob has {len(bob)}"
        )
    frames, abins, bbins = [], [], []
    discards = {reason: 0 for reason in DISCARD_REASONS}
    for a, b in zip(alice, bob):
        a_ok = a.verdict == RETAINED
        b_ok = b.verdict == RETAINED
        if a_ok and b_ok:
            frames.append(a.frame_index)
            abins.append(a.bin_index)
            bbins.append(b.bin_index)
        elif not a_ok and not b_ok:
            discards["both_invalid"] += 1
        elif not a_ok:
            discards["alice_empty" if a.verdict == EMPTY else "alice_multi"] += 1
        else:
            discards["bob_empty" if b.verdict == EMPTY else "bob_multi"] += 1
    return SiftedPairs(
        np.asarray(frames, dtype=np.int64),
        np.asarray(abins, dtype=np.int64),
        np.asarray(bbins, dtype=np.int64),
        discards,
    )


def _gray(values):
    return values ^ (values >> 1)


def encode_symbol(bin_index: int, cfg: FrameConfig) -> str:
    """Map a bin index to its log2(n)-bit word (big-endian).

    'natural' is the plain binary expansion; 'gray' is the reflected
    binary Gray code, so adjacent bins differ in exactly one bit.
    """
    n = cfg.bins_per_frame
    if not (0 <= bin_index < n):
        raise ParameterError(f"bin_index {bin_index} out of range for n={n}")
    value = _gray(bin_index) if cfg.mapping == "gray" else bin_index
    return format(value, f"0{cfg.bits_per_frame}b") if n > 1 else ""


def decode_symbol(bits: str, cfg: FrameConfig) -> int:
    """Inverse of encode_symbol."""
    if len(bits) != cfg.bits_per_frame:
        raise ParameterError(f"expected {cfg.bits_per_frame} bits, got {len(bits)}")
    value = int(bits, 2) if bits else 0
    if cfg.mapping == "natural":
        return value
    # Gray inverse: prefix XOR.
    out = 0
    while value:
        out ^= value
        value >>= 1
    return out


def bit_layers(bin_indices: np.ndarray, cfg: FrameConfig) -> np.ndarray:
    """Encoded bits of each bin index as a (frames, bits_per_frame) matrix.

    Column 0 is the most significant bit. Vectorized equivalent of
    encode_symbol applied per frame.
    """
    values = np.asarray(bin_indices, dtype=np.int64)
    if values.size and (values.min() < 0 or values.max() >= cfg.bins_per_frame):
        raise ParameterError("bin index out of range")
    if cfg.mapping == "gray":
        values = _gray(values)
    width = cfg.bits_per_frame
    shifts = np.arange(width - 1, -1, -1, dtype=np.int64)
    return ((values[:, None] >> shifts[None, :]) & 1).astype(np.uint8)


def symbols_to_bitstring(pairs: SiftedPairs, cfg: FrameConfig) -> tuple[str, str]:
    """Concatenate per-frame encodings, frame order, for both parties."""
    alice = bit_layers(pairs.alice_bins, cfg).reshape(-1)
    bob = bit_layers(pairs.bob_bins, cfg).reshape(-1)
    to_str = lambda bits: "".join("1" if b else "0" for b in bits)
    return to_str(alice), to_str(bob)
