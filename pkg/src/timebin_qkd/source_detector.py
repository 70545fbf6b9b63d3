"""Entangled-pair emission and single-photon detector impairment simulation.

The source emits pairs as a homogeneous Poisson process (exponential
inter-generation times). Each party's detector then applies, in order:
efficiency loss, Gaussian timing jitter, dark counts, optional 50:50
routing onto two detectors, and non-paralyzable dead time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .util import ParameterError, seed_sequence, spawn_rngs

# Tag origin codes. Ground truth for diagnostics/tests only; the key
# pipeline never branches on them.
SIGNAL = 0
DARK = 1

_ORIGIN_NAMES = {SIGNAL: "signal", DARK: "dark"}


@dataclass(frozen=True)
class SourceParams:
    """Entangled-pair source: Poisson emissions at `pair_rate` over `duration`."""

    pair_rate: float
    coherence_time: float
    duration: float

    def __post_init__(self):
        if not (self.pair_rate > 0):
            raise ParameterError(f"pair_rate must be > 0, got {self.pair_rate}")
        if not (self.coherence_time > 0):
            raise ParameterError(f"coherence_time must be > 0, got {self.coherence_time}")
        # duration == 0 is the allowed degenerate empty interval
        if not (self.duration >= 0):
            raise ParameterError(f"duration must be >= 0, got {self.duration}")


@dataclass(frozen=True)
class DetectorParams:
    """Per-party detector impairments.

    `num_detectors=2` models a 50:50 beam splitter feeding two detectors,
    which halves the effective dead-time loss.
    """

    jitter_sigma: float = 0.0
    dead_time: float = 0.0
    dark_rate: float = 0.0
    efficiency: float = 1.0
    num_detectors: int = 1

    def __post_init__(self):
        if not (0.0 <= self.efficiency <= 1.0):
            raise ParameterError(f"efficiency must be in [0,1], got {self.efficiency}")
        for name in ("jitter_sigma", "dead_time", "dark_rate"):
            if not (getattr(self, name) >= 0):
                raise ParameterError(f"{name} must be >= 0, got {getattr(self, name)}")
        if self.num_detectors not in (1, 2):
            raise ParameterError(f"num_detectors must be 1 or 2, got {self.num_detectors}")


@dataclass
class TimeTagStream:
    """Ordered detector time tags with ground-truth origin annotation.

    `times` is sorted; within each detector_id consecutive accepted tags
    differ by more than the dead time. `origins` (signal/dark) exists for
    diagnostics and tests only.
    """

    times: np.ndarray
    origins: np.ndarray
    detector_ids: np.ndarray
    party: str
    duration: float

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64)
        self.origins = np.asarray(self.origins, dtype=np.uint8)
        self.detector_ids = np.asarray(self.detector_ids, dtype=np.uint8)
        if not (len(self.times) == len(self.origins) == len(self.detector_ids)):
            raise ParameterError("times/origins/detector_ids must have equal length")

    def __len__(self) -> int:
        return len(self.times)

    @property
    def signal_count(self) -> int:
        return int(np.count_nonzero(self.origins == SIGNAL))

    @property
    def dark_count(self) -> int:
        return int(np.count_nonzero(self.origins == DARK))

    def to_csv(self, path) -> None:
        """Dump as `timestamp_s,origin,detector_id` with 12 significant digits."""
        with open(path, "w", newline="") as fh:
            fh.write("timestamp_s,origin,detector_id\n")
            for t, o, d in zip(self.times, self.origins, self.detector_ids):
                fh.write(f"{t:.12g},{_ORIGIN_NAMES[int(o)]},{int(d)}\n")


def generate_pair_arrivals(src: SourceParams, seed) -> np.ndarray:
    """Sample entangled-pair emission times on [0, duration).

    Inter-generation gaps are i.i.d. exponential with mean 1/pair_rate.
    Identical seed gives byte-identical output.
    """
    rng = np.random.default_rng(seed_sequence(seed))
    if src.duration == 0:
        return np.empty(0, dtype=np.float64)
    mean_count = src.pair_rate * src.duration
    chunk = max(int(mean_count + 4 * math.sqrt(mean_count)) + 16, 1024)
    pieces = []
    t_last = 0.0
    while True:
        gaps = rng.exponential(1.0 / src.pair_rate, size=chunk)
        times = t_last + np.cumsum(gaps)
        pieces.append(times)
        t_last = times[-1]
        if t_last >= src.duration:
            break
    all_times = np.concatenate(pieces)
    return all_times[all_times < src.duration]


def _apply_dead_time(times: np.ndarray, detector_ids: np.ndarray,
                     dead_time: float) -> np.ndarray:
    """Accept mask for non-paralyzable dead time, tracked per detector.

    A tag is dropped if it lies within `dead_time` of the last *accepted*
    tag on the same detector; dropped tags do not extend the window.
    """
    keep = np.ones(len(times), dtype=bool)
    if dead_time <= 0 or len(times) == 0:
        return keep
    last = [-math.inf, -math.inf]
    ids = detector_ids.tolist()
    ts = times.tolist()
    for i in range(len(ts)):
        d = ids[i]
        if ts[i] - last[d] > dead_time:
            last[d] = ts[i]
        else:
            keep[i] = False
    return keep


def detect(emissions: np.ndarray, det: DetectorParams, duration: float,
           seed, party: str = "alice") -> TimeTagStream:
    """Transform emission times into a detector time-tag stream.

    Pipeline order: loss -> jitter -> dark-count merge -> sort ->
    beam-splitter routing -> per-detector dead time. Jittered tags that
    land outside [0, duration) are dropped. Loss, jitter, dark and routing
    draws come from independent sub-streams of `seed`, so toggling one
    impairment does not perturb the others' draws.
    """
    if duration < 0:
        raise ParameterError(f"duration must be >= 0, got {duration}")
    emissions = np.asarray(emissions, dtype=np.float64)
    rng_loss, rng_jitter, rng_dark, rng_route = spawn_rngs(seed, 4)

    # Loss and jitter draws are indexed per emission (not per survivor) so
    # that changing the efficiency does not reshuffle jitter values.
    keep = rng_loss.random(len(emissions)) < det.efficiency
    jitter = rng_jitter.normal(0.0, det.jitter_sigma, len(emissions)) \
        if det.jitter_sigma > 0 else np.zeros(len(emissions))
    sig_times = emissions[keep] + jitter[keep]
    sig_times = sig_times[(sig_times >= 0.0) & (sig_times < duration)]

    n_dark = rng_dark.poisson(det.dark_rate * duration) if det.dark_rate > 0 else 0
    dark_times = rng_dark.uniform(0.0, duration, n_dark)

    times = np.concatenate([sig_times, dark_times])
    origins = np.concatenate([
        np.full(len(sig_times), SIGNAL, dtype=np.uint8),
        np.full(len(dark_times), DARK, dtype=np.uint8),
    ])
    order = np.argsort(times, kind="stable")
    times, origins = times[order], origins[order]

    if det.num_detectors == 2:
        detector_ids = rng_route.integers(0, 2, len(times)).astype(np.uint8)
    else:
        detector_ids = np.zeros(len(times), dtype=np.uint8)

    accept = _apply_dead_time(times, detector_ids, det.dead_time)
    return TimeTagStream(times[accept], origins[accept], detector_ids[accept],
                         party=party, duration=duration)


def run_two_party(src: SourceParams, det_alice: DetectorParams,
                  det_bob: DetectorParams, seed) -> tuple[TimeTagStream, TimeTagStream]:
    """Generate one shared emission list and detect it independently per party."""
    ss_src, ss_alice, ss_bob = seed_sequence(seed).spawn(3)
    emissions = generate_pair_arrivals(src, ss_src)
    alice = detect(emissions, det_alice, src.duration, ss_alice, party="alice")
    bob = detect(emissions, det_bob, src.duration, ss_bob, party="bob")
    return alice, bob
