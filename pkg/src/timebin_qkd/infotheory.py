"""Rate analysis: empirical mutual information, the uniform-offset
jitter rate-loss curve, and Markov-chain entropy-rate bounds for
detector downtime.

All logarithms are base 2; rates are in bits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import binning, source_detector
from .util import ParameterError, seed_sequence

# Exact enumeration of downtime chains is capped here; larger systems
# must use the simulation path.
MAX_CHAIN_BINS = 16


@dataclass
class JointHistogram:
    """Empirical counts over (alice_bin, bob_bin) pairs."""

    n: int
    counts: np.ndarray

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.shape != (self.n, self.n):
            raise ParameterError(f"counts must be {self.n}x{self.n}, got {self.counts.shape}")
        if self.counts.min(initial=0) < 0:
            raise ParameterError("histogram counts must be nonnegative")

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def alice_marginal(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    def bob_marginal(self) -> np.ndarray:
        return self.counts.sum(axis=0)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write("alice_bin,bob_bin,count\n")
            for a in range(self.n):
                for b in range(self.n):
                    fh.write(f"{a},{b},{int(self.counts[a, b])}\n")

    @classmethod
    def from_csv(cls, path) -> "JointHistogram":
        rows = np.loadtxt(path, delimiter=",", skiprows=1, dtype=np.int64, ndmin=2)
        n = int(rows[:, 0].max()) + 1 if len(rows) else 0
        counts = np.zeros((n, n), dtype=np.int64)
        counts[rows[:, 0], rows[:, 1]] = rows[:, 2]
        return cls(n, counts)


def joint_histogram(pairs: binning.SiftedPairs, n: int) -> JointHistogram:
    """Count retained frames per (alice_bin, bob_bin) cell."""
    a, b = pairs.alice_bins, pairs.bob_bins
    if len(a) and (a.min() < 0 or a.max() >= n or b.min() < 0 or b.max() >= n):
        raise ParameterError(f"bin index out of range for n={n}")
    counts = np.zeros((n, n), dtype=np.int64)
    np.add.at(counts, (a, b), 1)
    return JointHistogram(n, counts)


def _mi_terms(joint: np.ndarray) -> tuple[float, float]:
    """Plug-in MI and its delta-method variance from a joint probability matrix."""
    pa = joint.sum(axis=1)
    pb = joint.sum(axis=0)
    mask = joint > 0
    ratio = joint[mask] / (np.outer(pa, pb)[mask])
    g = np.log2(ratio)
    mi = float(np.sum(joint[mask] * g))
    var = float(np.sum(joint[mask] * g * g) - mi * mi)
    return mi, max(var, 0.0)


def mutual_information(h: JointHistogram) -> float:
    """Plug-in estimate of I(alice_bin; bob_bin) in bits per frame."""
    total = h.total
    if total <= 0:
        raise ParameterError("mutual information of an empty histogram is undefined")
    mi, _ = _mi_terms(h.counts / total)
    return mi


def mutual_information_stderr(h: JointHistogram) -> tuple[float, float]:
    """Plug-in MI plus its asymptotic (delta-method) standard error."""
    total = h.total
    if total <= 0:
        raise ParameterError("mutual information of an empty histogram is undefined")
    mi, var = _mi_terms(h.counts / total)
    return mi, math.sqrt(var / total)


def analytic_rate_uniform_jitter(n: int, frame_duration: float, offset_span: float) -> float:
    """Secret-key rate of the idealized uniform-offset channel, bits/frame.

    One party bins the true arrival; the other sees it displaced by a
    uniform offset over [0, offset_span). The rate grows as log2(n) until
    n exceeds frame_duration/offset_span, then plateaus at
    log2(frame_duration/offset_span).
    """
    if n < 1:
        raise ParameterError(f"n must be >= 1, got {n}")
    if not (frame_duration > 0) or not (offset_span > 0):
        raise ParameterError("frame_duration and offset_span must be positive")
    return min(math.log2(n), math.log2(frame_duration / offset_span))


def uniform_offset_joint(n: int, frame_duration: float, offset_span: float) -> np.ndarray:
    """Exact joint law of (X, Y) under the uniform-offset channel.

    X is uniform over bins; the arrival sits at the start of bin X and the
    offset photon lands offset_span*U later (U uniform). Frames are
    treated circularly so the idealized analysis applies without edge
    effects. Returns an (n, n) probability matrix.
    """
    if n < 1 or not (frame_duration > 0) or not (offset_span > 0):
        raise ParameterError("invalid uniform-offset channel parameters")
    bw = frame_duration / n
    max_shift = int(math.ceil(offset_span / bw))
    joint = np.zeros((n, n))
    for k in range(max_shift):
        overlap = (min((k + 1) * bw, offset_span) - k * bw) / offset_span
        if overlap <= 0:
            continue
        for x in range(n):
            joint[x, (x + k) % n] += overlap / n
    return joint


def sample_uniform_offset_pairs(n: int, frame_duration: float, offset_span: float,
                                frames: int, seed) -> JointHistogram:
    """Monte-Carlo draw of `frames` sifted (X, Y) pairs from the channel."""
    rng = np.random.default_rng(seed_sequence(seed))
    bw = frame_duration / n
    x = rng.integers(0, n, frames)
    offset = rng.uniform(0.0, offset_span, frames)
    y = (x + np.floor(offset / bw).astype(np.int64)) % n
    counts = np.zeros((n, n), dtype=np.int64)
    np.add.at(counts, (x, y), 1)
    return JointHistogram(n, counts)


# ---------------------------------------------------------------------------
# Downtime Markov chains


@dataclass(frozen=True)
class ChainState:
    """One frame-occupancy pattern plus the downtime it carries forward."""

    pattern: int  # bitmask, leftmost bin = MSB
    residual: int  # blocked bins at the start of the next frame
    n: int

    @property
    def label(self) -> str:
        return format(self.pattern, f"0{self.n}b")


@dataclass
class MarkovChain:
    """Frame-pattern chain with a row-stochastic transition matrix.

    The stationary distribution is computed lazily (compute-once) by
    `stationary_distribution`.
    """

    states: list[ChainState]
    transition: np.ndarray
    _stationary: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.transition = np.asarray(self.transition, dtype=np.float64)
        k = len(self.states)
        if self.transition.shape != (k, k):
            raise ParameterError("transition matrix shape does not match state count")
        rowsums = self.transition.sum(axis=1)
        if np.any(np.abs(rowsums - 1.0) > 1e-12):
            raise ParameterError("transition rows must sum to 1 within 1e-12")

    @property
    def num_states(self) -> int:
        return len(self.states)

    def labels(self) -> list[str]:
        return [s.label for s in self.states]

    def to_adjacency_csv(self, path) -> None:
        """Text listing `state_label,next_state_label,probability` of nonzero edges."""
        with open(path, "w", newline="") as fh:
            fh.write("state_label,next_state_label,probability\n")
            for i, s in enumerate(self.states):
                for j, t in enumerate(self.states):
                    p = self.transition[i, j]
                    if p > 0:
                        fh.write(f"{s.label},{t.label},{p:.12g}\n")


def _enumerate_frame(n: int, d: int, p: float, r_in: int):
    """All one-frame outcomes (pattern, residual_out, prob) given incoming residual.

    Scans bins left to right: a blocked bin stays empty; a free bin is
    occupied with probability p, and an occupancy blocks the next d bins.
    """
    out = []

    def rec(idx, residual, pattern, prob):
        if idx == n:
            out.append((pattern, residual, prob))
            return
        if residual > 0:
            rec(idx + 1, residual - 1, pattern, prob)
        else:
            rec(idx + 1, 0, pattern, prob * (1.0 - p))
            rec(idx + 1, d, pattern | (1 << (n - 1 - idx)), prob * p)

    rec(0, r_in, 0, 1.0)
    return out


def build_downtime_chain(n: int, d: int, p: float) -> MarkovChain:
    """Enumerate the frame-pattern Markov chain for downtime of d bins.

    State = (occupancy pattern, residual downtime carried across the frame
    boundary). Transition probabilities come from exact enumeration of the
    bin-level outcomes, so patterns violating the downtime constraint
    never appear.
    """
    if not (1 <= n <= MAX_CHAIN_BINS):
        raise ParameterError(f"n must be in [1, {MAX_CHAIN_BINS}], got {n}")
    if not (0 <= d <= n):
        raise ParameterError(f"d must be in [0, n], got {d}")
    if not (0.0 < p < 1.0):
        raise ParameterError(f"p must be in (0,1), got {p}")

    rows_by_residual = {
        r: _enumerate_frame(n, d, p, r) for r in range(d + 1)
    }
    # Breadth-first closure starting from an idle detector (residual 0).
    index: dict[tuple[int, int], int] = {}
    states: list[ChainState] = []
    frontier = []
    for pattern, r_out, _ in rows_by_residual[0]:
        key = (pattern, r_out)
        if key not in index:
            index[key] = len(states)
            states.append(ChainState(pattern, r_out, n))
            frontier.append(key)
    while frontier:
        pattern, r_out = frontier.pop()
        for nxt_pattern, nxt_r, _ in rows_by_residual[r_out]:
            key = (nxt_pattern, nxt_r)
            if key not in index:
                index[key] = len(states)
                states.append(ChainState(nxt_pattern, nxt_r, n))
                frontier.append(key)

    k = len(states)
    transition = np.zeros((k, k))
    for i, s in enumerate(states):
        for pattern, r_out, prob in rows_by_residual[s.residual]:
            transition[i, index[(pattern, r_out)]] += prob
    return MarkovChain(states, transition)


class ReducibleChainError(ValueError):
    """The chain is not irreducible; carries the offending state labels."""


def _reachability(adj: np.ndarray, start: int) -> np.ndarray:
    seen = np.zeros(adj.shape[0], dtype=bool)
    stack = [start]
    seen[start] = True
    while stack:
        i = stack.pop()
        for j in np.nonzero(adj[i])[0]:
            if not seen[j]:
                seen[j] = True
                stack.append(int(j))
    return seen


def stationary_distribution(mc: MarkovChain) -> np.ndarray:
    """Stationary probability vector pi with pi P = pi, sum(pi) = 1.

    Dense linear solve up to 1000 states, power iteration beyond. Raises
    ReducibleChainError naming unreachable states if the chain is not
    irreducible. The result is cached on the chain.
    """
    if mc._stationary is not None:
        return mc._stationary
    P = mc.transition
    k = mc.num_states
    edges = P > 0
    fwd = _reachability(edges, 0)
    bwd = _reachability(edges.T, 0)
    strong = fwd & bwd
    if not strong.all():
        bad = [mc.states[i].label for i in np.nonzero(~strong)[0]]
        raise ReducibleChainError(f"chain is reducible; states outside the recurrent "
                                  f"class of {mc.states[0].label}: {bad}")
    if k <= 1000:
        M = P.T - np.eye(k)
        M[-1, :] = 1.0
        b = np.zeros(k)
        b[-1] = 1.0
        pi = np.linalg.solve(M, b)
    else:
        pi = np.full(k, 1.0 / k)
        for _ in range(100_000):
            nxt = pi @ P
            if np.max(np.abs(nxt - pi)) < 1e-14:
                pi = nxt
                break
            pi = nxt
    pi = np.clip(pi, 0.0, None)
    pi /= pi.sum()
    residual = np.max(np.abs(pi @ P - pi))
    if residual > 1e-10:
        raise ArithmeticError(f"stationary solve failed: residual {residual:g}")
    mc._stationary = pi
    return pi


def entropy_rate(mc: MarkovChain) -> float:
    """H = -sum_i pi_i sum_j P_ij log2 P_ij, bits per frame."""
    pi = stationary_distribution(mc)
    P = mc.transition
    mask = P > 0
    row_entropy = -np.sum(np.where(mask, P * np.log2(np.where(mask, P, 1.0)), 0.0), axis=1)
    return float(pi @ row_entropy)


# ---------------------------------------------------------------------------
# Bin-count optimization

METRICS = ("bits_per_frame", "bits_per_second", "bits_per_photon")


@dataclass
class ChannelSample:
    """One Monte-Carlo evaluation of a channel at a fixed bin count."""

    histogram: JointHistogram
    pairs_emitted: int
    duration: float


@dataclass
class SweepEntry:
    n: int
    metric: str
    value: float
    stderr: float


def uniform_offset_channel(frame_duration: float, offset_span: float, frames: int):
    """Channel callable sampling the uniform-offset model (`frames` sifted pairs)."""

    def simulate(n: int, seed) -> ChannelSample:
        hist = sample_uniform_offset_pairs(n, frame_duration, offset_span, frames, seed)
        return ChannelSample(hist, pairs_emitted=frames, duration=frames * frame_duration)

    return simulate


def exact_uniform_offset_channel(frame_duration: float, offset_span: float,
                                 frames: int = 1):
    """Noise-free channel callable returning the exact joint law as counts.

    Counts are the exact probabilities scaled to integers, so sweep values
    tie exactly on the rate plateau.
    """

    def simulate(n: int, seed) -> ChannelSample:
        joint = uniform_offset_joint(n, frame_duration, offset_span)
        bw = frame_duration / n
        scale = n * max(int(math.ceil(offset_span / bw)), 1)
        counts = np.rint(joint * scale).astype(np.int64)
        return ChannelSample(JointHistogram(n, counts), pairs_emitted=frames,
                             duration=frames * frame_duration)

    return simulate


def detector_channel(src: source_detector.SourceParams,
                     det_alice: source_detector.DetectorParams,
                     det_bob: source_detector.DetectorParams,
                     frame_duration: float, mapping: str = "gray"):
    """Channel callable running the full two-party detector simulation."""

    def simulate(n: int, seed) -> ChannelSample:
        cfg = binning.FrameConfig(frame_duration, n, mapping)
        ss = seed_sequence(seed)
        alice, bob = source_detector.run_two_party(src, det_alice, det_bob, ss)
        pairs = binning.ppm_sift(binning.frame_and_bin(alice, cfg),
                                 binning.frame_and_bin(bob, cfg))
        hist = joint_histogram(pairs, n)
        emitted = int(round(src.pair_rate * src.duration))
        return ChannelSample(hist, pairs_emitted=emitted, duration=src.duration)

    return simulate


def optimize_bins(candidates, channel, metric: str = "bits_per_frame",
                  seed=0) -> tuple[int, list[SweepEntry]]:
    """Sweep bins-per-frame candidates and return (best n, metric table).

    Each candidate runs the channel with its own derived seed; ties break
    toward smaller n. `channel` is a callable (n, seed) -> ChannelSample.
    """
    candidates = list(candidates)
    if not candidates:
        raise ParameterError("candidate list is empty")
    for n in candidates:
        if n < 1 or (n & (n - 1)) != 0:
            raise ParameterError(f"candidates must be powers of two, got {n}")
    if metric not in METRICS:
        raise ParameterError(f"metric must be one of {METRICS}, got {metric!r}")

    seeds = seed_sequence(seed).spawn(len(candidates))
    table: list[SweepEntry] = []
    best_n, best_value = None, -math.inf
    for n, child in zip(candidates, seeds):
        sample = channel(n, child)
        hist = sample.histogram
        if hist.total > 0:
            mi, se = mutual_information_stderr(hist)
        else:
            mi, se = 0.0, 0.0
        retained = hist.total
        if metric == "bits_per_frame":
            value, stderr = mi, se
        elif metric == "bits_per_second":
            scale = retained / sample.duration if sample.duration > 0 else 0.0
            value, stderr = mi * scale, se * scale
        else:  # bits_per_photon
            scale = retained / sample.pairs_emitted if sample.pairs_emitted > 0 else 0.0
            value, stderr = mi * scale, se * scale
        table.append(SweepEntry(n, metric, value, stderr))
        if value > best_value:
            best_n, best_value = n, value
    return best_n, table


def sweep_table_to_csv(table: list[SweepEntry], path) -> None:
    """CSV emission: `n,metric_name,value,stderr`."""
    with open(path, "w", newline="") as fh:
        fh.write("n,metric_name,value,stderr\n")
        for row in table:
            fh.write(f"{row.n},{row.metric},{row.value:.12g},{row.stderr:.12g}\n")
