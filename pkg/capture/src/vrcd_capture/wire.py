"""Reader and writer for the line-delimited decoding-trace format.

A trace is UTF-8 text, one JSON object per line: a header first, then one
record per step.  Floats carry 9 significant digits.  Attention rows are
either dense (length-N list) or sparse ([image_token, weight] pairs with
weights below 1/(4N) dropped and the rest renormalized).

This is a deliberately independent implementation of the format: the
capture side shares only the wire bytes with the decoding engine, so the
two packages stay decoupled.  Records round-trip byte-identically, which
a shared golden fixture pins down.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Sequence

import numpy as np

SCHEMA_VERSION = 1
# sparse storage drops weights below 1/(SPARSE_DROP_FACTOR * N)
SPARSE_DROP_FACTOR = 4
ATTENTION_SUM_TOL = 1e-4


class WireError(Exception):
    pass


def fmt_float(x: float) -> float:
    # 9 significant digits; idempotent, so rewriting a parsed trace does
    # not shift any value
    return float(f"{x:.9g}")


def default_attention_window(commit_size: int, window_scale_max: float = 2.5) -> int:
    """Smallest attention window that keeps replays lossless for selection
    windows up to window_scale_max times the commit size."""
    return math.ceil(window_scale_max * commit_size)


@dataclass(frozen=True)
class Header:
    run_id: str
    length: int
    num_image_tokens: int
    vocab_size: int
    forward_ratio: float
    attention_window: int
    source: str = "captured"
    conditioning_note: str = ""
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self) -> None:
        if self.length < 1 or self.num_image_tokens < 1 or self.vocab_size < 2:
            raise WireError("header dimensions out of range")
        if not 0.0 < self.forward_ratio <= 1.0:
            raise WireError(f"forward_ratio must be in (0, 1], got {self.forward_ratio}")
        if self.attention_window < 1:
            raise WireError("attention_window must be >= 1")
        if self.source not in ("synthetic", "captured"):
            raise WireError(f"source must be synthetic or captured, got {self.source!r}")


@dataclass
class Candidate:
    """One masked position's prediction as it appears on the wire.

    Exactly one of attention_dense / attention_sparse may be set; keeping
    them separate preserves the original encoding through a round trip.
    """

    position: int
    token: int
    confidence: float
    margin: float
    entropy_norm: float
    attention_dense: list[float] | None = None
    attention_sparse: list[list[float]] | None = None
    top_probs: list[list[float]] | None = None

    def attention_row(self, n: int) -> np.ndarray | None:
        if self.attention_dense is not None:
            return np.asarray(self.attention_dense, dtype=float)
        if self.attention_sparse is not None:
            row = np.zeros(n)
            for u, w in self.attention_sparse:
                row[int(u)] = float(w)
            return row
        return None


@dataclass
class StepRecord:
    step_index: int
    masked_positions: list[int]
    commit_size: int
    candidates: list[Candidate]
    committed_positions: list[int] | None = None


def sparse_attention(row: np.ndarray, n: int) -> list[list[float]]:
    """Sparse wire encoding of a normalized attention row."""
    row = np.asarray(row, dtype=float)
    if row.shape != (n,):
        raise WireError(f"attention row has shape {row.shape}, expected ({n},)")
    threshold = 1.0 / (SPARSE_DROP_FACTOR * n)
    keep = np.flatnonzero(row >= threshold)
    if keep.size == 0:
        keep = np.array([int(np.argmax(row))])
    kept = row[keep]
    kept = kept / kept.sum()
    return [[int(u), fmt_float(float(w))] for u, w in zip(keep, kept)]


def _header_to_json(header: Header) -> dict:
    return {
        "schema_version": header.schema_version,
        "run_id": header.run_id,
        "length": header.length,
        "num_image_tokens": header.num_image_tokens,
        "vocab_size": header.vocab_size,
        "forward_ratio": fmt_float(header.forward_ratio),
        "attention_window": header.attention_window,
        "source": header.source,
        "conditioning_note": header.conditioning_note,
    }


def _candidate_to_json(c: Candidate, header: Header) -> dict:
    if not 0 <= c.position < header.length:
        raise WireError(f"candidate position {c.position} outside [0, {header.length})")
    if not 0 <= c.token < header.vocab_size:
        raise WireError(f"token id {c.token} outside vocabulary")
    if c.attention_dense is not None and c.attention_sparse is not None:
        raise WireError(f"position {c.position}: both attention encodings set")
    obj: dict = {
        "position": c.position,
        "token": c.token,
        "confidence": fmt_float(c.confidence),
        "margin": fmt_float(c.margin),
        "entropy_norm": fmt_float(c.entropy_norm),
    }
    if c.attention_dense is not None:
        if len(c.attention_dense) != header.num_image_tokens:
            raise WireError(
                f"dense attention length {len(c.attention_dense)} != {header.num_image_tokens}"
            )
        total = float(sum(c.attention_dense))
        if abs(total - 1.0) > ATTENTION_SUM_TOL:
            raise WireError(f"attention for position {c.position} sums to {total:.6f}")
        obj["attention"] = [fmt_float(w) for w in c.attention_dense]
    elif c.attention_sparse is not None:
        obj["attention_sparse"] = [[int(u), fmt_float(w)] for u, w in c.attention_sparse]
    if c.top_probs is not None:
        obj["top_probs"] = [[int(t), fmt_float(p)] for t, p in c.top_probs]
    return obj


def _step_to_json(step: StepRecord, header: Header) -> dict:
    masked = set(step.masked_positions)
    if {c.position for c in step.candidates} != masked:
        raise WireError(
            f"step {step.step_index}: candidates must cover masked positions exactly"
        )
    obj: dict = {
        "step_index": step.step_index,
        "masked_positions": list(step.masked_positions),
        "commit_size": step.commit_size,
        "candidates": [_candidate_to_json(c, header) for c in step.candidates],
    }
    if step.committed_positions is not None:
        bad = [p for p in step.committed_positions if p not in masked]
        if bad:
            raise WireError(f"step {step.step_index}: committed but not masked: {bad}")
        obj["committed_positions"] = list(step.committed_positions)
    return obj


def write_trace(
    destination: str | Path | IO[str],
    header: Header,
    steps: Sequence[StepRecord],
) -> None:
    """Serialize a capture; refuses records inconsistent with the header."""

    def _write(fh: IO[str]) -> None:
        fh.write(json.dumps(_header_to_json(header), separators=(",", ":")) + "\n")
        last = -1
        for step in steps:
            if step.step_index <= last:
                raise WireError(
                    f"step indices must increase, got {step.step_index} after {last}"
                )
            last = step.step_index
            fh.write(json.dumps(_step_to_json(step, header), separators=(",", ":")) + "\n")

    if isinstance(destination, (str, Path)):
        with open(destination, "w", encoding="utf-8") as fh:
            _write(fh)
    else:
        _write(destination)


_HEADER_FIELDS = (
    "run_id",
    "length",
    "num_image_tokens",
    "vocab_size",
    "forward_ratio",
    "attention_window",
    "source",
)


def _parse_header(obj: dict) -> Header:
    version = obj.get("schema_version")
    if version != SCHEMA_VERSION:
        raise WireError(f"unsupported schema_version {version!r}")
    missing = [f for f in _HEADER_FIELDS if f not in obj]
    if missing:
        raise WireError(f"line 1: header missing fields {missing}")
    return Header(
        run_id=str(obj["run_id"]),
        length=int(obj["length"]),
        num_image_tokens=int(obj["num_image_tokens"]),
        vocab_size=int(obj["vocab_size"]),
        forward_ratio=float(obj["forward_ratio"]),
        attention_window=int(obj["attention_window"]),
        source=str(obj["source"]),
        conditioning_note=str(obj.get("conditioning_note", "")),
    )


def _parse_candidate(obj: dict, line_no: int) -> Candidate:
    try:
        candidate = Candidate(
            position=int(obj["position"]),
            token=int(obj["token"]),
            confidence=float(obj["confidence"]),
            margin=float(obj["margin"]),
            entropy_norm=float(obj["entropy_norm"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise WireError(f"line {line_no}: bad candidate record: {exc}") from exc
    if "attention" in obj:
        candidate.attention_dense = [float(w) for w in obj["attention"]]
    elif "attention_sparse" in obj:
        candidate.attention_sparse = [
            [int(u), float(w)] for u, w in obj["attention_sparse"]
        ]
    if "top_probs" in obj:
        candidate.top_probs = [[int(t), float(p)] for t, p in obj["top_probs"]]
    return candidate


def read_trace(source: str | Path | IO[str]) -> tuple[Header, list[StepRecord]]:
    """Parse a trace, keeping each record's attention encoding as found.

    Unknown fields are ignored so the format can grow without breaking
    old readers.
    """

    def _read(fh: IO[str]) -> tuple[Header, list[StepRecord]]:
        first = fh.readline()
        if not first.strip():
            raise WireError("line 1: empty trace, expected a header")
        try:
            header = _parse_header(json.loads(first))
        except json.JSONDecodeError as exc:
            raise WireError(f"line 1: invalid header line: {exc}") from exc
        steps = []
        for line_no, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise WireError(f"line {line_no}: invalid record: {exc}") from exc
            try:
                committed = obj.get("committed_positions")
                steps.append(
                    StepRecord(
                        step_index=int(obj["step_index"]),
                        masked_positions=[int(p) for p in obj["masked_positions"]],
                        commit_size=int(obj["commit_size"]),
                        candidates=[
                            _parse_candidate(c, line_no) for c in obj["candidates"]
                        ],
                        committed_positions=(
                            None if committed is None else [int(p) for p in committed]
                        ),
                    )
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise WireError(f"line {line_no}: bad step record: {exc}") from exc
        return header, steps

    if isinstance(source, (str, Path)):
        with open(source, "r", encoding="utf-8") as fh:
            return _read(fh)
    return _read(source)
