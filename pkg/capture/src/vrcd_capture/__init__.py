"""Trace capture for attention-exposing masked-token predictors."""

from .capture import (
    ATTENTION_SOURCE,
    CaptureConfig,
    CaptureConfigError,
    CaptureError,
    CaptureResult,
    base_commit_size,
    capture,
    commit_sizes,
)
from .model import MaskedPredictor, PredictionBatch, TinyMaskedPredictor
from .wire import (
    Candidate,
    Header,
    StepRecord,
    WireError,
    default_attention_window,
    fmt_float,
    read_trace,
    sparse_attention,
    write_trace,
)

__all__ = [
    "ATTENTION_SOURCE",
    "CaptureConfig",
    "CaptureConfigError",
    "CaptureError",
    "CaptureResult",
    "Candidate",
    "Header",
    "MaskedPredictor",
    "PredictionBatch",
    "StepRecord",
    "TinyMaskedPredictor",
    "WireError",
    "base_commit_size",
    "capture",
    "commit_sizes",
    "default_attention_window",
    "fmt_float",
    "read_trace",
    "sparse_attention",
    "write_trace",
]
