"""End-to-end pipeline: configuration, orchestration, sweeps, reporting.

One run executes source -> two-party detection -> framing -> PPM sift ->
model training split -> multilevel reconciliation -> privacy amplification,
and fills a RunReport. Everything is deterministic given (config, seed).
"""

from __future__ import annotations

import dataclasses
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import binning, infotheory, privacy, reconciliation, source_detector
from .util import ParameterError, bits_to_hex, seed_sequence

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib


@dataclass(frozen=True)
class ReconcilerConfig:
    max_iters: int = 100
    damping: float = 1.0
    efficiency_margin: float = reconciliation.DEFAULT_EFFICIENCY_MARGIN
    training_fraction: float = 0.10
    ladder: tuple = reconciliation.DEFAULT_LADDER
    smoothing_alpha: float = 0.5

    def __post_init__(self):
        if not (0.0 < self.training_fraction < 1.0):
            raise ParameterError("training_fraction must be in (0,1)")
        if self.max_iters < 1:
            raise ParameterError("max_iters must be >= 1")
        for rate in self.ladder:
            if rate not in reconciliation.LADDER_CODES:
                raise ParameterError(f"no code construction for ladder rate {rate}")


@dataclass(frozen=True)
class PrivacyConfig:
    security_margin: int = 64

    def __post_init__(self):
        if self.security_margin < 0:
            raise ParameterError("security_margin must be >= 0")


@dataclass(frozen=True)
class SweepSpec:
    candidates: tuple
    metric: str = "bits_per_frame"

    def __post_init__(self):
        if not self.candidates:
            raise ParameterError("sweep candidates must be nonempty")
        for n in self.candidates:
            if n < 1 or (n & (n - 1)) != 0:
                raise ParameterError(f"sweep candidates must be powers of two, got {n}")
        if self.metric not in infotheory.METRICS:
            raise ParameterError(f"unknown sweep metric {self.metric!r}")


@dataclass(frozen=True)
class ExperimentConfig:
    source: source_detector.SourceParams
    detector_alice: source_detector.DetectorParams
    detector_bob: source_detector.DetectorParams
    frame: binning.FrameConfig
    reconciler: ReconcilerConfig = ReconcilerConfig()
    privacy: PrivacyConfig = PrivacyConfig()
    seed: int = 0
    sweep: SweepSpec | None = None


def default_config(seed: int = 0) -> ExperimentConfig:
    """Baseline: n=8 Gray-mapped frames over the pump coherence time,
    Gaussian jitter of a quarter bin width, ideal loss/dark/dead values."""
    coherence = 1e-6
    frame = binning.FrameConfig(frame_duration=coherence, bins_per_frame=8, mapping="gray")
    det = source_detector.DetectorParams(jitter_sigma=frame.bin_width / 4)
    return ExperimentConfig(
        source=source_detector.SourceParams(pair_rate=1e6, coherence_time=coherence,
                                            duration=0.02),
        detector_alice=det,
        detector_bob=det,
        frame=frame,
        seed=seed,
    )


def _take(table: dict, allowed: dict, context: str) -> dict:
    unknown = set(table) - set(allowed)
    if unknown:
        raise ParameterError(f"unknown key(s) in [{context}]: {sorted(unknown)}")
    return {k: allowed[k](v) for k, v in table.items()}


def config_from_dict(raw: dict) -> ExperimentConfig:
    """Build a config from nested tables; every field has a default."""
    base = default_config()
    top_allowed = {"seed", "source", "detector", "frame", "reconciliation",
                   "privacy", "sweep"}
    unknown = set(raw) - top_allowed
    if unknown:
        raise ParameterError(f"unknown top-level config key(s): {sorted(unknown)}")

    src_kw = _take(raw.get("source", {}),
                   {"pair_rate": float, "coherence_time": float, "duration": float},
                   "source")
    source = dataclasses.replace(base.source, **src_kw)

    frame_allowed = {"frame_duration": float, "bins_per_frame": int, "mapping": str}
    frame_kw = _take(raw.get("frame", {}), frame_allowed, "frame")
    # The frame defaults to one pump coherence time.
    frame_kw.setdefault("frame_duration", source.coherence_time)
    frame = dataclasses.replace(base.frame, **frame_kw)

    det_tables = raw.get("detector", {})
    if not isinstance(det_tables, dict) or set(det_tables) - {"alice", "bob"}:
        raise ParameterError("detector config must contain only [detector.alice] "
                             "and [detector.bob]")
    det_allowed = {"jitter_sigma": float, "dead_time": float, "dark_rate": float,
                   "efficiency": float, "num_detectors": int}

    def build_det(table):
        kw = _take(table, det_allowed, "detector")
        kw.setdefault("jitter_sigma", frame.bin_width / 4)
        return source_detector.DetectorParams(**kw)

    det_alice = build_det(det_tables.get("alice", {}))
    det_bob = build_det(det_tables.get("bob", {}))

    rec_allowed = {"max_iters": int, "damping": float, "efficiency_margin": float,
                   "training_fraction": float, "ladder": lambda v: tuple(float(x) for x in v),
                   "smoothing_alpha": float}
    reconciler = ReconcilerConfig(**_take(raw.get("reconciliation", {}), rec_allowed,
                                          "reconciliation"))
    privacy_cfg = PrivacyConfig(**_take(raw.get("privacy", {}),
                                        {"security_margin": int}, "privacy"))
    sweep = None
    if "sweep" in raw:
        sw = _take(raw["sweep"],
                   {"candidates": lambda v: tuple(int(x) for x in v), "metric": str},
                   "sweep")
        sweep = SweepSpec(**sw)
    return ExperimentConfig(source, det_alice, det_bob, frame, reconciler,
                            privacy_cfg, int(raw.get("seed", 0)), sweep)


def config_from_toml(path) -> ExperimentConfig:
    with open(path, "rb") as fh:
        return config_from_dict(tomllib.load(fh))


@dataclass
class RunReport:
    """Headline metrics of one pipeline run plus exportable artifacts."""

    frames_total: int
    frames_retained: int
    discards: dict
    raw_bits: int
    symbol_error_rate: float
    mi_estimate: float
    mi_stderr: float
    entropy_rate_bits_per_frame: float | None
    training_frames: int
    payload_frames: int
    layer_syndrome_rates: list
    reconciliation_converged: bool
    reconciliation_iterations: int
    leaked_bits: int
    residual_bit_errors: int
    verified: bool
    reconciled_bits: int
    entropy_per_bit: float
    final_key_bits: int
    pairs_emitted: int
    detected_tags_alice: int
    detected_tags_bob: int
    raw_bits_per_retained_frame: float
    secret_bits_per_second: float
    secret_bits_per_emitted_pair: float
    secret_bits_per_detected_tag: float
    secret_bits_per_retained_frame: float
    final_key_hex: str
    bob_key_hex: str
    # Artifacts for the CSV bundle; not part of the scalar report row.
    histogram: infotheory.JointHistogram = field(repr=False, compare=False, default=None)
    sifted: binning.SiftedPairs = field(repr=False, compare=False, default=None)

    _SCALAR_FIELDS = [
        "frames_total", "frames_retained",
        "discard_alice_empty", "discard_bob_empty", "discard_alice_multi",
        "discard_bob_multi", "discard_both_invalid",
        "raw_bits", "symbol_error_rate", "mi_estimate", "mi_stderr",
        "entropy_rate_bits_per_frame", "training_frames", "payload_frames",
        "layer_syndrome_rates", "reconciliation_converged",
        "reconciliation_iterations", "leaked_bits", "residual_bit_errors",
        "verified", "reconciled_bits", "entropy_per_bit", "final_key_bits",
        "pairs_emitted", "detected_tags_alice", "detected_tags_bob",
        "raw_bits_per_retained_frame", "secret_bits_per_second",
        "secret_bits_per_emitted_pair", "secret_bits_per_detected_tag",
        "secret_bits_per_retained_frame", "final_key_hex", "bob_key_hex",
    ]

    def scalar_row(self) -> dict:
        """Flat name -> value mapping with a stable column order."""
        row = {}
        for name in self._SCALAR_FIELDS:
            if name.startswith("discard_"):
                row[name] = self.discards[name[len("discard_"):]]
            elif name == "layer_syndrome_rates":
                row[name] = ";".join(f"{r:g}" for r in self.layer_syndrome_rates)
            elif name == "entropy_rate_bits_per_frame":
                v = self.entropy_rate_bits_per_frame
                row[name] = "" if v is None else _fmt(v)
            else:
                v = getattr(self, name)
                row[name] = _fmt(v)
        return row


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return f"{value:.12g}"
    return str(value)


def _entropy_bits(counts: np.ndarray) -> float:
    total = counts.sum()
    if total <= 0:
        return 0.0
    p = counts[counts > 0] / total
    return float(-(p * np.log2(p)).sum())


def _downtime_entropy_rate(cfg: ExperimentConfig) -> float | None:
    """Entropy rate of the enumerated downtime chain for Alice's detector.

    None when no downtime applies or the frame exceeds the enumeration cap.
    """
    det = cfg.detector_alice
    bw = cfg.frame.bin_width
    d = int(round(det.dead_time / bw))
    n = cfg.frame.bins_per_frame
    if d < 1 or n > infotheory.MAX_CHAIN_BINS:
        return None
    d = min(d, n)
    rate = cfg.source.pair_rate * det.efficiency + det.dark_rate
    p = 1.0 - math.exp(-rate * bw)
    if not (0.0 < p < 1.0):
        return None
    chain = infotheory.build_downtime_chain(n, d, p)
    return infotheory.entropy_rate(chain)


# Payload lengths are trimmed to a multiple of this so every ladder code's
# edge count divides its row weight.
_PAYLOAD_QUANTUM = 20


def run_pipeline(cfg: ExperimentConfig, seed_override=None) -> RunReport:
    """Run the full Alice/Bob pipeline and fill every report field."""
    ss = seed_sequence(cfg.seed if seed_override is None else seed_override)
    ss_sim, ss_codes, ss_hash = ss.spawn(3)

    alice_stream, bob_stream = source_detector.run_two_party(
        cfg.source, cfg.detector_alice, cfg.detector_bob, ss_sim)
    frames_alice = binning.frame_and_bin(alice_stream, cfg.frame)
    frames_bob = binning.frame_and_bin(bob_stream, cfg.frame)
    pairs = binning.ppm_sift(frames_alice, frames_bob)

    n = cfg.frame.bins_per_frame
    width = cfg.frame.bits_per_frame
    histogram = infotheory.joint_histogram(pairs, n)
    retained = pairs.count
    if retained > 0:
        mi, mi_se = infotheory.mutual_information_stderr(histogram)
        symbol_error_rate = float(np.mean(pairs.alice_bins != pairs.bob_bins))
    else:
        mi, mi_se, symbol_error_rate = 0.0, 0.0, 0.0

    # Training/payload split: the leading fraction of retained frames fits
    # the channel model and is sacrificed publicly.
    rc = cfg.reconciler
    training_frames = int(round(retained * rc.training_fraction))
    payload_frames = retained - training_frames
    payload_frames -= payload_frames % _PAYLOAD_QUANTUM
    train = pairs.slice(0, training_frames)
    payload = pairs.slice(training_frames, training_frames + payload_frames)

    alice_bits = binning.bit_layers(payload.alice_bins, cfg.frame).reshape(-1)
    if payload_frames > 0 and width > 0:
        model = infotheory.joint_histogram(train, n)
        rates = reconciliation.select_layer_rates(
            model, cfg.frame, ladder=rc.ladder,
            efficiency_margin=rc.efficiency_margin, alpha=rc.smoothing_alpha)
        code_seeds = ss_codes.spawn(width)
        codes = []
        for rate, child in zip(rates, code_seeds):
            col_w, row_w = reconciliation.LADDER_CODES[rate]
            codes.append(reconciliation.make_regular_ldpc(
                payload_frames, col_w, row_w, child))
        recon = reconciliation.reconcile_multilevel(
            alice_bits, payload.bob_bins, codes, model, cfg.frame,
            max_iters=rc.max_iters, damping=rc.damping, alpha=rc.smoothing_alpha)
    else:
        rates = []
        recon = reconciliation.ReconciliationResult(
            np.empty(0, dtype=np.uint8), True, 0, 0, True)

    reconciled_bits = payload_frames * width
    leaked_bits = recon.leaked_bits + training_frames * width
    residual_bit_errors = int(np.count_nonzero(recon.decoded != alice_bits))

    if reconciled_bits > 0 and width > 0:
        marginal_entropy = _entropy_bits(
            np.bincount(payload.alice_bins, minlength=n))
        entropy_per_bit = min(1.0, marginal_entropy / width)
    else:
        entropy_per_bit = 0.0

    budget = privacy.AmplificationBudget(
        reconciled_length=reconciled_bits, entropy_per_bit=entropy_per_bit,
        leaked_bits=leaked_bits, security_margin=cfg.privacy.security_margin)
    final_key_bits = privacy.key_length_budget(budget)
    if final_key_bits > 0:
        hash_rng = np.random.default_rng(ss_hash)
        hash_seed = hash_rng.integers(
            0, 2, reconciled_bits + final_key_bits - 1).astype(np.uint8)
        alice_key = privacy.toeplitz_hash(alice_bits, hash_seed, final_key_bits)
        bob_key = privacy.toeplitz_hash(recon.decoded, hash_seed, final_key_bits)
    else:
        alice_key = np.empty(0, dtype=np.uint8)
        bob_key = np.empty(0, dtype=np.uint8)

    frames_total = len(frames_alice)
    pairs_emitted = int(round(cfg.source.pair_rate * cfg.source.duration))
    detected_total = len(alice_stream) + len(bob_stream)
    duration = cfg.source.duration

    return RunReport(
        frames_total=frames_total,
        frames_retained=retained,
        discards=dict(pairs.discards),
        raw_bits=retained * width,
        symbol_error_rate=symbol_error_rate,
        mi_estimate=mi,
        mi_stderr=mi_se,
        entropy_rate_bits_per_frame=_downtime_entropy_rate(cfg),
        training_frames=training_frames,
        payload_frames=payload_frames,
        layer_syndrome_rates=list(rates),
        reconciliation_converged=recon.converged,
        reconciliation_iterations=recon.iterations_used,
        leaked_bits=leaked_bits,
        residual_bit_errors=residual_bit_errors,
        verified=recon.verified,
        reconciled_bits=reconciled_bits,
        entropy_per_bit=entropy_per_bit,
        final_key_bits=final_key_bits,
        pairs_emitted=pairs_emitted,
        detected_tags_alice=len(alice_stream),
        detected_tags_bob=len(bob_stream),
        raw_bits_per_retained_frame=float(width) if retained else 0.0,
        secret_bits_per_second=final_key_bits / duration if duration > 0 else 0.0,
        secret_bits_per_emitted_pair=final_key_bits / pairs_emitted if pairs_emitted else 0.0,
        secret_bits_per_detected_tag=final_key_bits / detected_total if detected_total else 0.0,
        secret_bits_per_retained_frame=final_key_bits / retained if retained else 0.0,
        final_key_hex=bits_to_hex(alice_key),
        bob_key_hex=bits_to_hex(bob_key),
        histogram=histogram,
        sifted=pairs,
    )


@dataclass
class SweepResult:
    metric: str
    rows: list  # (n, value) plus per-candidate context columns
    best_n: int
    reports: dict


_METRIC_FIELD = {
    "bits_per_frame": "mi_estimate",
    "bits_per_second": "secret_bits_per_second",
    "bits_per_photon": "secret_bits_per_emitted_pair",
}


def run_sweep(cfg: ExperimentConfig) -> SweepResult:
    """Run the pipeline per sweep candidate; argmax with ties to smaller n."""
    if cfg.sweep is None:
        raise ParameterError("config has no sweep section")
    candidates = sorted(cfg.sweep.candidates)
    seeds = seed_sequence(cfg.seed).spawn(len(candidates))
    rows = []
    reports = {}
    best_n, best_value = None, -math.inf
    for n, child in zip(candidates, seeds):
        run_cfg = dataclasses.replace(
            cfg, frame=dataclasses.replace(cfg.frame, bins_per_frame=n), sweep=None)
        report = run_pipeline(run_cfg, seed_override=child)
        reports[n] = report
        value = getattr(report, _METRIC_FIELD[cfg.sweep.metric])
        rows.append({
            "n": n,
            "metric_name": cfg.sweep.metric,
            "value": value,
            "mi_estimate": report.mi_estimate,
            "entropy_rate_bits_per_frame": report.entropy_rate_bits_per_frame,
            "final_key_bits": report.final_key_bits,
            "verified": report.verified,
        })
        if value > best_value:
            best_n, best_value = n, value
    return SweepResult(cfg.sweep.metric, rows, best_n, reports)


def _write_csv(path: Path, header: list, rows: list) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(row[h]) if not isinstance(row[h], str) else row[h]
                              for h in header) + "\n")


def render_text_report(report: RunReport, sweep: SweepResult | None = None) -> str:
    """Human-readable run summary plus the machine sidecar line."""
    d = report.discards
    lines = [
        f"frames: total={report.frames_total} retained={report.frames_retained} "
        f"(alice_empty={d['alice_empty']} bob_empty={d['bob_empty']} "
        f"alice_multi={d['alice_multi']} bob_multi={d['bob_multi']} "
        f"both_invalid={d['both_invalid']})",
        f"raw key: {report.raw_bits} bits "
        f"({report.raw_bits_per_retained_frame:g} bits/retained frame), "
        f"symbol error rate {report.symbol_error_rate:.4g}",
        f"mutual information: {report.mi_estimate:.4f} +/- {report.mi_stderr:.4f} bits/frame",
    ]
    if report.entropy_rate_bits_per_frame is not None:
        lines.append(f"downtime entropy rate: "
                     f"{report.entropy_rate_bits_per_frame:.6f} bits/frame")
    lines += [
        f"reconciliation: converged={report.reconciliation_converged} "
        f"iterations={report.reconciliation_iterations} "
        f"syndrome_rates={report.layer_syndrome_rates} "
        f"verified={report.verified} residual_errors={report.residual_bit_errors}",
        f"throughput: {report.secret_bits_per_second:.6g} bits/s, "
        f"{report.secret_bits_per_emitted_pair:.6g} bits/emitted pair, "
        f"{report.secret_bits_per_detected_tag:.6g} bits/detected tag, "
        f"{report.secret_bits_per_retained_frame:.6g} bits/retained frame",
        "raw_bits,reconciled_bits,leaked_bits,entropy_per_bit,final_bits",
        f"{report.raw_bits},{report.reconciled_bits},{report.leaked_bits},"
        f"{report.entropy_per_bit:.12g},{report.final_key_bits}",
        f"final_key_hex={report.final_key_hex}",
    ]
    if sweep is not None:
        lines.append(f"sweep best n = {sweep.best_n} by {sweep.metric}")
        for row in sweep.rows:
            lines.append(f"  n={row['n']}: {row['value']:.6g} "
                         f"(final_key_bits={row['final_key_bits']})")
    return "\n".join(lines)


def emit_report(report: RunReport, fmt: str = "text", out_dir=None,
                sweep: SweepResult | None = None, quiet: bool = False) -> list:
    """Emit a run report as text (stdout) or a csv bundle in out_dir.

    The bundle holds report.csv, joint_histogram.csv, sifted_pairs.csv and,
    when a sweep is present, sweep.csv. Returns the written paths.
    """
    if fmt not in ("text", "csv-bundle"):
        raise ParameterError(f"unknown report format {fmt!r}")
    if fmt == "text":
        if not quiet:
            print(render_text_report(report, sweep))
        return []
    if out_dir is None:
        raise ParameterError("csv-bundle format requires an output directory")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        row = report.scalar_row()
        _write_csv(out / "report.csv", list(row), [row])
        report.histogram.to_csv(out / "joint_histogram.csv")
        report.sifted.to_csv(out / "sifted_pairs.csv")
        written = [out / "report.csv", out / "joint_histogram.csv",
                   out / "sifted_pairs.csv"]
        if sweep is not None:
            header = ["n", "metric_name", "value", "mi_estimate",
                      "entropy_rate_bits_per_frame", "final_key_bits", "verified"]
            rows = []
            for r in sweep.rows:
                r = dict(r)
                if r["entropy_rate_bits_per_frame"] is None:
                    r["entropy_rate_bits_per_frame"] = ""
                rows.append(r)
            _write_csv(out / "sweep.csv", header, rows)
            written.append(out / "sweep.csv")
    except OSError as exc:
        raise OSError(f"failed writing report bundle under {out}: {exc}") from exc
    if not quiet:
        print(render_text_report(report, sweep))
    return written
