"""Redundancy-controlled parallel unmasking for masked-diffusion decoding.

Public surface: the decoding state model, commit schedules, selection
policies (confidence, margin, entropy, redundancy-controlled), step-level
metrics, a seeded synthetic oracle, and the trace format for recording
and replaying runs.
"""

from .engine import (
    DecodingRun,
    EngineOptions,
    PolicyContractError,
    TruncatedRunError,
    run_decoding,
)
from .metrics import (
    OverheadReport,
    RunAggregate,
    StepMetrics,
    aggregate,
    position_change,
    remaining_entropy,
    pair_stage_times,
    selection_overhead,
    step_vri,
    time_pair_stage,
    vri,
)
from .oracle import OracleConfig, SyntheticOracle, init_run, peaked_entropy, peaked_margin
from .policies import (
    CandidateWindow,
    ConfidencePolicy,
    EntropyPolicy,
    MarginPolicy,
    MissingAttentionError,
    ScoredCandidate,
    SelectionPolicy,
    VrcdConfig,
    VrcdPolicy,
    attach_saliency,
    build_window,
    compute_redundancy_scores,
    make_policy,
    select_confidence,
    select_entropy,
    select_margin,
    select_vrcd,
)
from .saliency import (
    OverlapTable,
    SaliencyVector,
    bhattacharyya_overlap,
    extract_saliency,
    overlap_matrix,
    pairwise_overlaps,
    pct_rank_all,
)
from .schedule import InvalidScheduleError, Schedule, make_uniform_schedule
from .states import (
    CandidatePrediction,
    CommitRecord,
    DecodingState,
    SourceExhaustedError,
    StateError,
    StateSource,
)
from .trace_io import (
    ReplaySource,
    StepRecordWire,
    TraceError,
    TraceHeader,
    TraceParseError,
    TraceValidationReport,
    TraceVersionError,
    TraceWriteError,
    WireCandidate,
    read_trace,
    record_run,
    run_to_steps,
    validate_trace,
    write_trace,
)

__version__ = "0.1.0"

__all__ = [
    "CandidatePrediction",
    "CandidateWindow",
    "CommitRecord",
    "ConfidencePolicy",
    "DecodingRun",
    "DecodingState",
    "EngineOptions",
    "EntropyPolicy",
    "InvalidScheduleError",
    "MarginPolicy",
    "MissingAttentionError",
    "OracleConfig",
    "OverheadReport",
    "OverlapTable",
    "PolicyContractError",
    "ReplaySource",
    "RunAggregate",
    "SaliencyVector",
    "Schedule",
    "ScoredCandidate",
    "SelectionPolicy",
    "SourceExhaustedError",
    "StateError",
    "StateSource",
    "StepMetrics",
    "StepRecordWire",
    "SyntheticOracle",
    "TraceError",
    "TraceHeader",
    "TraceParseError",
    "TraceValidationReport",
    "TraceVersionError",
    "TraceWriteError",
    "TruncatedRunError",
    "VrcdConfig",
    "VrcdPolicy",
    "WireCandidate",
    "aggregate",
    "attach_saliency",
    "bhattacharyya_overlap",
    "build_window",
    "compute_redundancy_scores",
    "extract_saliency",
    "init_run",
    "make_policy",
    "make_uniform_schedule",
    "overlap_matrix",
    "pairwise_overlaps",
    "pct_rank_all",
    "peaked_entropy",
    "peaked_margin",
    "position_change",
    "read_trace",
    "record_run",
    "remaining_entropy",
    "run_decoding",
    "run_to_steps",
    "select_confidence",
    "select_entropy",
    "select_margin",
    "select_vrcd",
    "pair_stage_times",
    "selection_overhead",
    "step_vri",
    "time_pair_stage",
    "validate_trace",
    "vri",
    "write_trace",
]
