"""Capture loop: run a predictor to completion and record the trace.

The session always advances with confidence decoding (commit the K most
confident positions, ties to the lower index).  A single neutral
trajectory is the most reusable recording: any policy can later be
replayed against it, and the confidence policy reproduces the recorded
commits exactly.  Replays of other policies are exact until their first
divergence from this trajectory and approximate afterwards.

Selection runs on the wire-quantized confidences, not the raw model
floats, so a replay reading the file sees the identical ordering.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

from .wire import (
    Candidate,
    Header,
    StepRecord,
    default_attention_window,
    fmt_float,
    sparse_attention,
    write_trace,
)

WINDOW_SCALE_MAX = 2.5
ATTENTION_SOURCE = "final_layer_mean_heads"


class CaptureError(Exception):
    pass


class CaptureConfigError(CaptureError):
    pass


def base_commit_size(forward_ratio: float) -> int:
    return max(1, round(1.0 / forward_ratio))


def commit_sizes(length: int, forward_ratio: float) -> list[int]:
    """Uniform schedule: commit about 1/forward_ratio positions per step,
    remainder on the final step."""
    base = base_commit_size(forward_ratio)
    steps = math.ceil(length / base)
    sizes = [base] * (steps - 1)
    sizes.append(length - base * (steps - 1))
    return sizes


@dataclass(frozen=True)
class CaptureConfig:
    model: Any
    forward_ratio: float
    output_path: str | Path
    length: int | None = None
    attention_window: int | None = None
    attention_source: str = ATTENTION_SOURCE
    run_id: str = "capture"
    top_probs: int = 8
    conditioning_note: str = ""

    def __post_init__(self) -> None:
        if not 0.0 < self.forward_ratio <= 1.0:
            raise CaptureConfigError(
                f"forward_ratio must be in (0, 1], got {self.forward_ratio}"
            )
        for name in ("length", "num_image_tokens", "vocab_size"):
            if not hasattr(self.model, name):
                raise CaptureConfigError(f"model does not define {name}")
        if self.length is not None and self.length != self.model.length:
            raise CaptureConfigError(
                f"configured length {self.length} != model length {self.model.length}"
            )
        if self.attention_source != ATTENTION_SOURCE:
            raise CaptureConfigError(
                f"unsupported attention source {self.attention_source!r}; "
                f"this adapter records {ATTENTION_SOURCE!r}"
            )
        if self.top_probs < 1:
            raise CaptureConfigError("top_probs must be >= 1")
        k = base_commit_size(self.forward_ratio)
        if self.attention_window is not None and self.attention_window < k:
            raise CaptureConfigError(
                f"attention_window {self.attention_window} < commit size {k}: "
                "replay would be lossless for no policy"
            )

    @property
    def effective_length(self) -> int:
        return self.model.length if self.length is None else self.length

    @property
    def effective_window(self) -> int:
        if self.attention_window is not None:
            return self.attention_window
        return default_attention_window(
            base_commit_size(self.forward_ratio), WINDOW_SCALE_MAX
        )


@dataclass(frozen=True)
class CaptureResult:
    header: Header
    steps: list[StepRecord]
    commits: list[tuple[int, ...]]
    path: Path


def _entropy_norm(probs: np.ndarray, vocab_size: int) -> float:
    h = float(-(probs * np.log(probs)).sum() / math.log(vocab_size))
    return min(1.0, max(0.0, h))


def capture(config: CaptureConfig) -> CaptureResult:
    """Decode to completion under confidence selection, writing one wire
    record per forward pass.  No extra forward passes are spent on the
    recording itself."""
    model = config.model
    length = config.effective_length
    n = model.num_image_tokens
    vocab = model.vocab_size
    window = config.effective_window
    sizes = commit_sizes(length, config.forward_ratio)

    committed: dict[int, int] = {}
    steps: list[StepRecord] = []
    commits: list[tuple[int, ...]] = []
    for step_index, k in enumerate(sizes):
        batch = model.predict(committed)
        if batch.image_attention is None:
            raise CaptureError(
                "model does not expose attention: capture needs token-to-image "
                "attention for masked positions, and replay selection windows "
                "would be empty without it"
            )
        masked = sorted(batch.token_probs)

        by_position: dict[int, Candidate] = {}
        for p in masked:
            probs = np.asarray(batch.token_probs[p], dtype=float)
            if probs.shape != (vocab,):
                raise CaptureError(
                    f"position {p}: probability vector has shape {probs.shape}, "
                    f"expected ({vocab},)"
                )
            order = np.argsort(-probs, kind="stable")
            top = order[: config.top_probs]
            confidence = fmt_float(float(probs[order[0]]))
            runner_up = float(probs[order[1]]) if vocab > 1 else 0.0
            by_position[p] = Candidate(
                position=p,
                token=int(order[0]),
                confidence=confidence,
                margin=fmt_float(float(probs[order[0]]) - runner_up),
                entropy_norm=fmt_float(_entropy_norm(probs, vocab)),
                top_probs=[[int(t), fmt_float(float(probs[t]))] for t in top],
            )

        ranked = sorted(masked, key=lambda p: (-by_position[p].confidence, p))
        for p in ranked[: min(window, len(ranked))]:
            row = np.asarray(batch.image_attention[p], dtype=float)
            if row.shape != (n,):
                raise CaptureError(
                    f"position {p}: attention row has shape {row.shape}, "
                    f"expected ({n},)"
                )
            by_position[p].attention_sparse = sparse_attention(row, n)
        selected = tuple(sorted(ranked[: min(k, len(ranked))]))

        steps.append(
            StepRecord(
                step_index=step_index,
                masked_positions=masked,
                commit_size=min(k, len(masked)),
                candidates=[by_position[p] for p in masked],
                committed_positions=list(selected),
            )
        )
        commits.append(selected)
        for p in selected:
            committed[p] = by_position[p].token

    header = Header(
        run_id=config.run_id,
        length=length,
        num_image_tokens=n,
        vocab_size=vocab,
        forward_ratio=config.forward_ratio,
        attention_window=window,
        source="captured",
        conditioning_note=config.conditioning_note,
    )
    path = Path(config.output_path)
    write_trace(path, header, steps)
    return CaptureResult(header=header, steps=steps, commits=commits, path=path)
