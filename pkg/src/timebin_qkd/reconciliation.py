"""One-way syndrome-based information reconciliation.

Alice transmits syndromes of her bit layers under sparse parity-check
codes; Bob runs sum-product belief propagation seeded with side-information
LLRs from his own bin observations. Multi-bit symbols decode layer by
layer (most significant first), each layer conditioning on the previously
decoded ones.
"""

from __future__ import annotations

import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from . import binning
from .util import ParameterError, crc64_bits, seed_sequence

logger = logging.getLogger(__name__)

# Messages and channel LLRs are clamped here (natural-log units).
LLR_MAX = 30.0
VERIFICATION_TAG_BITS = 64

# Code ladder: syndrome rate m/n -> (column_weight, row_weight) of the
# regular construction. Layer selection picks the smallest syndrome rate
# covering the layer's conditional entropy times the efficiency margin.
# Rungs keep column weight low: high-weight regulars (e.g. the exact-0.7
# (7,10)) have BP thresholds below their own coverage.
LADDER_CODES = {0.5: (3, 6), 0.75: (3, 4), 0.8: (4, 5), 0.9: (9, 10)}
DEFAULT_LADDER = (0.5, 0.75, 0.8, 0.9)
DEFAULT_EFFICIENCY_MARGIN = 1.15


class ConstructionError(RuntimeError):
    """Random code construction failed to satisfy its constraints."""


@dataclass
class LinearCode:
    """Sparse binary parity-check code given as per-check position lists."""

    n_code: int
    m_code: int
    checks: list

    _edge_cache: tuple | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.n_code < 1 or self.m_code < 1:
            raise ParameterError("code dimensions must be positive")
        if len(self.checks) != self.m_code:
            raise ParameterError("number of check rows must equal m_code")
        covered = np.zeros(self.n_code, dtype=bool)
        normalized = []
        for j, row in enumerate(self.checks):
            arr = np.asarray(row, dtype=np.int64)
            if arr.size == 0:
                raise ParameterError(f"check {j} is empty")
            if arr.min() < 0 or arr.max() >= self.n_code:
                raise ParameterError(f"check {j} has out-of-range positions")
            if len(np.unique(arr)) != len(arr):
                raise ParameterError(f"check {j} repeats a position")
            covered[arr] = True
            normalized.append(arr)
        if not covered.all():
            missing = np.nonzero(~covered)[0]
            raise ParameterError(f"unprotected bit positions: {missing[:8].tolist()}")
        self.checks = normalized

    @property
    def design_rate(self) -> float:
        return 1.0 - self.m_code / self.n_code

    @property
    def syndrome_rate(self) -> float:
        return self.m_code / self.n_code

    def edges(self) -> tuple[np.ndarray, np.ndarray]:
        """Flattened Tanner-graph edges: (variable index, check index) arrays."""
        if self._edge_cache is None:
            ev = np.concatenate(self.checks)
            ec = np.repeat(np.arange(self.m_code, dtype=np.int64),
                           [len(r) for r in self.checks])
            self._edge_cache = (ev, ec)
        return self._edge_cache


@dataclass
class Syndrome:
    bits: np.ndarray
    code: LinearCode

    def __post_init__(self):
        self.bits = np.asarray(self.bits, dtype=np.uint8)
        if len(self.bits) != self.code.m_code:
            raise ParameterError("syndrome length does not match m_code")


@dataclass
class ReconciliationResult:
    """Outcome of one decoding pass (or an aggregated multilevel run)."""

    decoded: np.ndarray
    converged: bool
    iterations_used: int
    leaked_bits: int
    verified: bool


def make_regular_ldpc(n_code: int, column_weight: int, row_weight: int, seed,
                      remove_four_cycles: bool = True,
                      max_passes: int = 30) -> LinearCode:
    """Random regular code via the permutation-of-sockets construction.

    Double edges are always repaired by socket swaps; 4-cycles are reduced
    by bounded resampling passes when `remove_four_cycles` is set (any
    residual count is logged and available via count_four_cycles).
    """
    if column_weight < 2:
        raise ParameterError(f"column_weight must be >= 2, got {column_weight}")
    if row_weight < 2 or row_weight > n_code:
        raise ParameterError(f"row_weight must be in [2, n_code], got {row_weight}")
    total_edges = n_code * column_weight
    if total_edges % row_weight != 0:
        raise ParameterError(
            f"infeasible degrees: {n_code}*{column_weight} not divisible by {row_weight}")
    m_code = total_edges // row_weight
    rng = np.random.default_rng(seed_sequence(seed))

    edge_var = np.repeat(np.arange(n_code, dtype=np.int64), column_weight)
    rng.shuffle(edge_var)
    rows = edge_var.reshape(m_code, row_weight)
    _fix_duplicates(rows, rng)

    if remove_four_cycles:
        for _ in range(max_passes):
            if not _break_one_four_cycle_pass(rows, rng):
                break
        residual = _count_four_cycles_rows(rows)
        if residual:
            logger.info("regular LDPC n=%d: %d residual 4-cycles after %d passes",
                        n_code, residual, max_passes)
    return LinearCode(n_code, m_code, [np.sort(r) for r in rows])


def _swap_out(rows: np.ndarray, r: int, c: int, rng, max_tries: int) -> bool:
    """Exchange edge (r, c) with a random edge without creating row duplicates."""
    m_code, row_weight = rows.shape
    for _ in range(max_tries):
        r2 = int(rng.integers(m_code))
        c2 = int(rng.integers(row_weight))
        if r2 == r:
            continue
        v1, v2 = rows[r, c], rows[r2, c2]
        if v1 == v2 or v2 in rows[r] or v1 in rows[r2]:
            continue
        rows[r, c], rows[r2, c2] = v2, v1
        return True
    return False


def _fix_duplicates(rows: np.ndarray, rng, max_tries: int = 200_000) -> None:
    """Swap socket endpoints until no check row repeats a variable."""
    budget = max_tries
    while True:
        srt = np.sort(rows, axis=1)
        dup_rows = np.nonzero((srt[:, 1:] == srt[:, :-1]).any(axis=1))[0]
        if len(dup_rows) == 0:
            return
        for r in dup_rows:
            row = rows[r]
            seen = set()
            for c in range(len(row)):
                v = int(row[c])
                if v in seen:
                    if not _swap_out(rows, int(r), c, rng, 200):
                        raise ConstructionError("could not remove duplicate edges")
                    break
                seen.add(v)
        budget -= len(dup_rows)
        if budget <= 0:
            raise ConstructionError("could not remove duplicate edges")


def _pair_table(rows: np.ndarray) -> np.ndarray:
    """Packed (lo*span + hi) keys of every within-row variable pair."""
    row_weight = rows.shape[1]
    ii, jj = np.triu_indices(row_weight, k=1)
    a, b = rows[:, ii], rows[:, jj]
    lo, hi = np.minimum(a, b), np.maximum(a, b)
    span = int(rows.max()) + 1
    return lo.astype(np.int64) * span + hi


def _count_four_cycles_rows(rows) -> int:
    rows = np.asarray(rows)
    if rows.ndim == 1:  # ragged check lists from read_alist
        pairs = defaultdict(int)
        total = 0
        for row in rows:
            vs = sorted(int(v) for v in row)
            for i in range(len(vs)):
                for j in range(i + 1, len(vs)):
                    total += pairs[(vs[i], vs[j])]
                    pairs[(vs[i], vs[j])] += 1
        return total
    keys = _pair_table(rows)
    _, counts = np.unique(keys.ravel(), return_counts=True)
    return int((counts * (counts - 1) // 2).sum())


def count_four_cycles(code: LinearCode) -> int:
    """Number of length-4 cycles in the Tanner graph (pairwise row overlaps)."""
    try:
        rows = np.asarray(code.checks, dtype=np.int64)
    except ValueError:
        rows = np.asarray(code.checks, dtype=object)
    return _count_four_cycles_rows(rows)


def _break_one_four_cycle_pass(rows: np.ndarray, rng, swap_tries: int = 50) -> bool:
    """Attempt to break every current 4-cycle once; True if any were seen."""
    keys = _pair_table(rows)
    npairs = keys.shape[1]
    flat = keys.ravel()
    order = np.argsort(flat, kind="stable")
    sorted_keys = flat[order]
    later = order[1:][sorted_keys[1:] == sorted_keys[:-1]]
    span = int(rows.max()) + 1
    found = False
    for pos in later.tolist():
        r, pcol = divmod(pos, npairs)
        key = flat[pos]
        lo, hi = divmod(int(key), span)
        # Earlier swaps in this pass may have dissolved the pair already.
        if lo not in rows[r] or hi not in rows[r]:
            continue
        found = True
        # Move one endpoint of the cycle out of the later offending row.
        c = int(np.nonzero(rows[r] == hi)[0][0])
        _swap_out(rows, r, c, rng, swap_tries)
    return found


def compute_syndrome(code: LinearCode, x: np.ndarray) -> Syndrome:
    """Per-check XOR of x: bit j = parity of x over check row j."""
    x = np.asarray(x, dtype=np.uint8)
    if len(x) != code.n_code:
        raise ParameterError(f"expected {code.n_code} bits, got {len(x)}")
    ev, ec = code.edges()
    sums = np.zeros(code.m_code, dtype=np.int64)
    np.add.at(sums, ec, x[ev].astype(np.int64))
    return Syndrome((sums & 1).astype(np.uint8), code)


def channel_llrs(bob_bins: np.ndarray, layer: int, prior_layers: np.ndarray,
                 model, cfg: binning.FrameConfig, alpha: float = 0.5,
                 llr_max: float = LLR_MAX) -> np.ndarray:
    """Per-frame LLRs of Alice's layer bit given Bob's bin and decoded prefixes.

    Natural-log ratio ln P(bit=0)/P(bit=1) of summed joint-histogram mass
    over Alice symbols consistent with the already-decoded higher layers.
    Counts are add-alpha smoothed (alpha=0 reproduces the unsmoothed Bayes
    ratio with +/-llr_max standing in for certainty).
    """
    n = cfg.bins_per_frame
    width = cfg.bits_per_frame
    if not (0 <= layer < width):
        raise ParameterError(f"layer {layer} out of range for n={n}")
    if model.n != n:
        raise ParameterError("model histogram size does not match frame config")
    bob_bins = np.asarray(bob_bins, dtype=np.int64)
    frames = len(bob_bins)
    prior = np.asarray(prior_layers, dtype=np.uint8).reshape(frames, layer)

    bits = binning.bit_layers(np.arange(n), cfg)
    smoothed = model.counts.astype(np.float64) + alpha
    if layer > 0:
        powers = 1 << np.arange(layer - 1, -1, -1, dtype=np.int64)
        prefix_of_symbol = bits[:, :layer].astype(np.int64) @ powers
        prefix_ids = prior.astype(np.int64) @ powers
    else:
        prefix_of_symbol = np.zeros(n, dtype=np.int64)
        prefix_ids = np.zeros(frames, dtype=np.int64)
    layer_bit = bits[:, layer]

    num = np.zeros((2, 1 << layer, n))
    for a in range(n):
        num[layer_bit[a], prefix_of_symbol[a]] += smoothed[a, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        table = np.log(num[0]) - np.log(num[1])
    table = np.nan_to_num(table, nan=0.0, posinf=llr_max, neginf=-llr_max)
    np.clip(table, -llr_max, llr_max, out=table)
    return table[prefix_ids, bob_bins]


def _phi(x: np.ndarray) -> np.ndarray:
    """phi(x) = -ln tanh(x/2), self-inverse on (0, inf)."""
    return -np.log(np.tanh(0.5 * x))


def bp_decode_syndrome(code: LinearCode, s: Syndrome, llrs: np.ndarray,
                       max_iters: int = 100, damping: float = 1.0) -> ReconciliationResult:
    """Sum-product decoding of Alice's sequence from its syndrome.

    Flooding schedule; check-node outputs are sign-modulated by the
    corresponding syndrome bit. Terminates as soon as the hard decision's
    syndrome matches (checked before the first update as well);
    non-convergence after max_iters is a result state, not an error.
    """
    llrs = np.asarray(llrs, dtype=np.float64)
    if len(llrs) != code.n_code:
        raise ParameterError(f"expected {code.n_code} LLRs, got {len(llrs)}")
    if s.code is not code and len(s.bits) != code.m_code:
        raise ParameterError("syndrome does not match code")
    if not (0.0 < damping <= 1.0):
        raise ParameterError(f"damping must be in (0, 1], got {damping}")
    ev, ec = code.edges()
    syn = s.bits.astype(np.int64)
    syn_sign = (1 - 2 * syn).astype(np.float64)

    def hard_decision(totals):
        return (totals < 0).astype(np.uint8)

    def syndrome_matches(hard):
        sums = np.zeros(code.m_code, dtype=np.int64)
        np.add.at(sums, ec, hard[ev].astype(np.int64))
        return bool(np.array_equal(sums & 1, syn))

    channel = np.clip(llrs, -LLR_MAX, LLR_MAX)
    hard = hard_decision(channel)
    if syndrome_matches(hard):
        return ReconciliationResult(hard, True, 0, code.m_code, False)

    msg_vc = channel[ev]
    msg_cv = np.zeros_like(msg_vc)
    tiny = 1e-12
    for iteration in range(1, max_iters + 1):
        # Check-node update in the phi domain.
        mag = np.clip(np.abs(msg_vc), tiny, LLR_MAX)
        phi_e = _phi(mag)
        phi_sum = np.zeros(code.m_code)
        np.add.at(phi_sum, ec, phi_e)
        neg = (msg_vc < 0).astype(np.int64)
        neg_count = np.zeros(code.m_code, dtype=np.int64)
        np.add.at(neg_count, ec, neg)
        sign_excl = (1 - 2 * ((neg_count[ec] - neg) & 1)).astype(np.float64)
        new_cv = sign_excl * syn_sign[ec] * _phi(np.maximum(phi_sum[ec] - phi_e, tiny))
        np.clip(new_cv, -LLR_MAX, LLR_MAX, out=new_cv)
        msg_cv = damping * new_cv + (1.0 - damping) * msg_cv

        # Variable-node update.
        totals = channel.copy()
        np.add.at(totals, ev, msg_cv)
        msg_vc = np.clip(totals[ev] - msg_cv, -LLR_MAX, LLR_MAX)

        hard = hard_decision(totals)
        if syndrome_matches(hard):
            return ReconciliationResult(hard, True, iteration, code.m_code, False)
    return ReconciliationResult(hard, False, max_iters, code.m_code, False)


def reconcile_multilevel(alice_bits: np.ndarray, bob_bins: np.ndarray,
                         codes: list[LinearCode], model, cfg: binning.FrameConfig,
                         max_iters: int = 100, damping: float = 1.0,
                         alpha: float = 0.5) -> ReconciliationResult:
    """Layered decoding of log2(n)-bit symbols, most significant layer first.

    Each layer's LLRs condition on the layers already decoded; a layer that
    fails to converge still contributes its hard decisions as best-effort
    priors. The aggregate leaks every syndrome bit plus a public 64-bit
    verification tag, compared against Alice's to set `verified`.
    """
    width = cfg.bits_per_frame
    bob_bins = np.asarray(bob_bins, dtype=np.int64)
    frames = len(bob_bins)
    alice_bits = np.asarray(alice_bits, dtype=np.uint8)
    if frames == 0:
        return ReconciliationResult(np.empty(0, dtype=np.uint8), True, 0,
                                    VERIFICATION_TAG_BITS, True)
    if len(alice_bits) != frames * width:
        raise ParameterError("alice_bits length must be frames * bits_per_frame")
    if len(codes) != width:
        raise ParameterError(f"need one code per layer ({width}), got {len(codes)}")
    for code in codes:
        if code.n_code != frames:
            raise ParameterError("per-layer code length must equal frame count")

    alice_layers = alice_bits.reshape(frames, width)
    decoded_layers = np.zeros((frames, width), dtype=np.uint8)
    converged = True
    iterations = 0
    leaked = 0
    for layer in range(width):
        syndrome = compute_syndrome(codes[layer], alice_layers[:, layer])
        llrs = channel_llrs(bob_bins, layer, decoded_layers[:, :layer], model, cfg,
                            alpha=alpha)
        result = bp_decode_syndrome(codes[layer], syndrome, llrs, max_iters, damping)
        decoded_layers[:, layer] = result.decoded
        converged &= result.converged
        iterations += result.iterations_used
        leaked += codes[layer].m_code

    decoded = decoded_layers.reshape(-1)
    leaked += VERIFICATION_TAG_BITS
    verified = crc64_bits(decoded) == crc64_bits(alice_bits)
    return ReconciliationResult(decoded, converged, iterations, leaked, verified)


def layer_conditional_entropies(model, cfg: binning.FrameConfig,
                                alpha: float = 0.5) -> np.ndarray:
    """H(X_layer | Y, higher layers of X) per layer, bits, from the model."""
    n = cfg.bins_per_frame
    width = cfg.bits_per_frame
    if model.n != n:
        raise ParameterError("model histogram size does not match frame config")
    joint = model.counts.astype(np.float64) + alpha
    joint /= joint.sum()
    bits = binning.bit_layers(np.arange(n), cfg)
    entropies = np.zeros(width)
    for layer in range(width):
        if layer > 0:
            powers = 1 << np.arange(layer - 1, -1, -1, dtype=np.int64)
            prefix = bits[:, :layer].astype(np.int64) @ powers
        else:
            prefix = np.zeros(n, dtype=np.int64)
        mass = np.zeros((2, 1 << layer, n))
        for a in range(n):
            mass[bits[a, layer], prefix[a]] += joint[a, :]
        both = mass[0] + mass[1]
        with np.errstate(divide="ignore", invalid="ignore"):
            p0 = np.where(both > 0, mass[0] / np.where(both > 0, both, 1.0), 0.0)
            h = -(p0 * np.log2(np.where(p0 > 0, p0, 1.0))
                  + (1 - p0) * np.log2(np.where(p0 < 1, 1 - p0, 1.0)))
        entropies[layer] = float(np.sum(both * h))
    return entropies


def select_layer_rates(model, cfg: binning.FrameConfig,
                       ladder=DEFAULT_LADDER,
                       efficiency_margin: float = DEFAULT_EFFICIENCY_MARGIN,
                       alpha: float = 0.5) -> list[float]:
    """Pick a ladder syndrome rate per layer covering margin * H(X_l | Y, X_<l).

    Falls back to the largest ladder rate when even that is insufficient
    (decoding is then expected to fail, which verification will catch).
    """
    rates = []
    ladder = sorted(ladder)
    for h in layer_conditional_entropies(model, cfg, alpha=alpha):
        target = efficiency_margin * h
        chosen = next((r for r in ladder if r >= target), ladder[-1])
        rates.append(chosen)
    return rates


# ---------------------------------------------------------------------------
# alist interchange (standard sparse-graph text format)


def write_alist(code: LinearCode, path) -> None:
    """Serialize as alist: dimensions, max degrees, degree lists, adjacency."""
    var_rows: list[list[int]] = [[] for _ in range(code.n_code)]
    for j, row in enumerate(code.checks):
        for v in row:
            var_rows[int(v)].append(j)
    col_degs = [len(r) for r in var_rows]
    row_degs = [len(r) for r in code.checks]
    with open(path, "w", newline="") as fh:
        fh.write(f"{code.n_code} {code.m_code}\n")
        fh.write(f"{max(col_degs)} {max(row_degs)}\n")
        fh.write(" ".join(map(str, col_degs)) + "\n")
        fh.write(" ".join(map(str, row_degs)) + "\n")
        for r in var_rows:
            fh.write(" ".join(str(j + 1) for j in r) + "\n")
        for row in code.checks:
            fh.write(" ".join(str(int(v) + 1) for v in row) + "\n")


def read_alist(path) -> LinearCode:
    with open(path) as fh:
        tokens_per_line = [line.split() for line in fh if line.strip()]
    n_code, m_code = int(tokens_per_line[0][0]), int(tokens_per_line[0][1])
    check_lines = tokens_per_line[4 + n_code: 4 + n_code + m_code]
    checks = []
    for line in check_lines:
        row = [int(t) - 1 for t in line if int(t) > 0]  # 0 entries are padding
        checks.append(np.asarray(row, dtype=np.int64))
    return LinearCode(n_code, m_code, checks)
