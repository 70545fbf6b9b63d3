"""Time-bin entanglement QKD simulator and analysis toolkit."""

from .binning import (
    FrameConfig,
    FrameObservation,
    SiftedPairs,
    bit_layers,
    decode_symbol,
    encode_symbol,
    frame_and_bin,
    ppm_sift,
    symbols_to_bitstring,
)
from .infotheory import (
    JointHistogram,
    MarkovChain,
    analytic_rate_uniform_jitter,
    build_downtime_chain,
    entropy_rate,
    joint_histogram,
    mutual_information,
    optimize_bins,
    stationary_distribution,
)
from .pipeline import (
    ExperimentConfig,
    RunReport,
    config_from_toml,
    default_config,
    emit_report,
    run_pipeline,
    run_sweep,
)
from .privacy import AmplificationBudget, key_length_budget, toeplitz_hash
from .reconciliation import (
    LinearCode,
    ReconciliationResult,
    Syndrome,
    bp_decode_syndrome,
    channel_llrs,
    compute_syndrome,
    make_regular_ldpc,
    reconcile_multilevel,
)
from .source_detector import (
    DetectorParams,
    SourceParams,
    TimeTagStream,
    detect,
    generate_pair_arrivals,
    run_two_party,
)
from .util import ParameterError

__version__ = "0.1.0"
