"""Line-delimited trace format: record, validate, and replay decoding runs.

A trace is UTF-8 text, one JSON object per line: a header first, then one
record per decoding step.  Floats are serialized with 9 significant
digits.  Attention rows may be stored dense (length-N list) or sparse
(list of [image_token, weight] pairs, small weights dropped and the rest
renormalized).  The same format is produced by external capture tools, so
reading is strict about structure and silent about unknown fields.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Iterable, Sequence

import numpy as np

from .engine import DecodingRun, EngineOptions, run_decoding
from .policies import SelectionPolicy
from .schedule import Schedule
from .states import (
    CandidatePrediction,
    CommitRecord,
    DecodingState,
    SourceExhaustedError,
    StateSource,
)

SCHEMA_VERSION = 1
TOP_PROBS_DEFAULT = 8
# sparse storage drops weights below 1/(SPARSE_DROP_FACTOR * N)
SPARSE_DROP_FACTOR = 4
ATTENTION_SUM_TOL = 1e-4


class TraceError(Exception):
    pass


class TraceParseError(TraceError):
    pass


class TraceVersionError(TraceError):
    pass


class TraceWriteError(TraceError):
    pass


def fmt_float(x: float) -> float:
    return float(f"{x:.9g}")


def default_attention_window(commit_size: int, window_scale_max: float = 2.5) -> int:
    """Smallest W that keeps replays lossless for window scales up to the given max."""
    return math.ceil(window_scale_max * commit_size)


@dataclass(frozen=True)
class TraceHeader:
    run_id: str
    length: int
    num_image_tokens: int
    vocab_size: int
    forward_ratio: float
    attention_window: int
    source: str = "synthetic"
    conditioning_note: str = ""
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self) -> None:
        if self.length < 1 or self.num_image_tokens < 1 or self.vocab_size < 2:
            raise TraceError("header dimensions out of range")
        if not 0.0 < self.forward_ratio <= 1.0:
            raise TraceError(f"forward_ratio must be in (0, 1], got {self.forward_ratio}")
        if self.attention_window < 1:
            raise TraceError("attention_window must be >= 1")
        if self.source not in ("synthetic", "captured"):
            raise TraceError(f"source must be synthetic or captured, got {self.source!r}")


@dataclass(frozen=True, eq=False)
class WireCandidate:
    position: int
    token: int
    confidence: float
    margin: float
    entropy_norm: float
    attention: np.ndarray | None = None
    top_probs: tuple[tuple[int, float], ...] | None = None


@dataclass(frozen=True, eq=False)
class StepRecordWire:
    step_index: int
    masked_positions: tuple[int, ...]
    commit_size: int
    candidates: tuple[WireCandidate, ...]
    committed_positions: tuple[int, ...] | None = None


def _sparse_encode(row: np.ndarray, n: int) -> list[list[float]]:
    threshold = 1.0 / (SPARSE_DROP_FACTOR * n)
    keep = np.flatnonzero(row >= threshold)
    if keep.size == 0:
        keep = np.array([int(np.argmax(row))])
    kept = row[keep]
    kept = kept / kept.sum()
    return [[int(u), fmt_float(w)] for u, w in zip(keep, kept)]


def _densify(pairs: Iterable, n: int, line_no: int) -> np.ndarray:
    row = np.zeros(n)
    for entry in pairs:
        try:
            u, w = entry
            u = int(u)
            w = float(w)
        except (TypeError, ValueError) as exc:
            raise TraceParseError(f"line {line_no}: bad sparse attention entry {entry!r}") from exc
        if not 0 <= u < n:
            raise TraceParseError(f"line {line_no}: image token {u} out of range [0, {n})")
        row[u] = w
    return row


def _candidate_to_json(c: WireCandidate, header: TraceHeader, dense: bool) -> dict:
    if not 0 <= c.position < header.length:
        raise TraceWriteError(f"candidate position {c.position} outside [0, {header.length})")
    if not 0 <= c.token < header.vocab_size:
        raise TraceWriteError(f"token id {c.token} outside vocabulary")
    obj: dict = {
        "position": c.position,
        "token": c.token,
        "confidence": fmt_float(c.confidence),
        "margin": fmt_float(c.margin),
        "entropy_norm": fmt_float(c.entropy_norm),
    }
    if c.attention is not None:
        row = np.asarray(c.attention, dtype=float)
        if row.shape != (header.num_image_tokens,):
            raise TraceWriteError(
                f"attention length {row.shape} != image token count {header.num_image_tokens}"
            )
        if abs(float(row.sum()) - 1.0) > ATTENTION_SUM_TOL:
            raise TraceWriteError(
                f"attention for position {c.position} sums to {float(row.sum()):.6f}"
            )
        if dense:
            obj["attention"] = [fmt_float(w) for w in row]
        else:
            obj["attention_sparse"] = _sparse_encode(row, header.num_image_tokens)
    if c.top_probs is not None:
        obj["top_probs"] = [[int(t), fmt_float(p)] for t, p in c.top_probs]
    return obj


def _step_to_json(step: StepRecordWire, header: TraceHeader, dense: bool) -> dict:
    masked = set(step.masked_positions)
    if any(not 0 <= p < header.length for p in masked):
        raise TraceWriteError(f"step {step.step_index}: masked position outside [0, L)")
    if {c.position for c in step.candidates} != masked:
        raise TraceWriteError(
            f"step {step.step_index}: candidates must cover masked positions exactly"
        )
    obj: dict = {
        "step_index": step.step_index,
        "masked_positions": list(step.masked_positions),
        "commit_size": step.commit_size,
        "candidates": [_candidate_to_json(c, header, dense) for c in step.candidates],
    }
    if step.committed_positions is not None:
        bad = [p for p in step.committed_positions if p not in masked]
        if bad:
            raise TraceWriteError(f"step {step.step_index}: committed but not masked: {bad}")
        obj["committed_positions"] = list(step.committed_positions)
    return obj


def write_trace(
    destination: str | Path | IO[str],
    header: TraceHeader,
    steps: Sequence[StepRecordWire],
    dense: bool = False,
) -> None:
    """Serialize a run; refuses records inconsistent with the header."""

    def _write(fh: IO[str]) -> None:
        fh.write(json.dumps(_header_to_json(header), separators=(",", ":")) + "\n")
        last = -1
        for step in steps:
            if step.step_index <= last:
                raise TraceWriteError(
                    f"step indices must increase, got {step.step_index} after {last}"
                )
            last = step.step_index
            fh.write(json.dumps(_step_to_json(step, header, dense), separators=(",", ":")) + "\n")

    if isinstance(destination, (str, Path)):
        with open(destination, "w", encoding="utf-8") as fh:
            _write(fh)
    else:
        _write(destination)


def _header_to_json(header: TraceHeader) -> dict:
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


_HEADER_FIELDS = (
    "run_id",
    "length",
    "num_image_tokens",
    "vocab_size",
    "forward_ratio",
    "attention_window",
    "source",
)


def _parse_header(obj: dict) -> TraceHeader:
    version = obj.get("schema_version")
    if version != SCHEMA_VERSION:
        raise TraceVersionError(
            f"unsupported schema_version {version!r}, reader supports {SCHEMA_VERSION}"
        )
    missing = [f for f in _HEADER_FIELDS if f not in obj]
    if missing:
        raise TraceParseError(f"line 1: header missing fields {missing}")
    try:
        return TraceHeader(
            run_id=str(obj["run_id"]),
            length=int(obj["length"]),
            num_image_tokens=int(obj["num_image_tokens"]),
            vocab_size=int(obj["vocab_size"]),
            forward_ratio=float(obj["forward_ratio"]),
            attention_window=int(obj["attention_window"]),
            source=str(obj["source"]),
            conditioning_note=str(obj.get("conditioning_note", "")),
        )
    except (TraceError, ValueError) as exc:
        raise TraceParseError(f"line 1: invalid header: {exc}") from exc


def _parse_candidate(obj: dict, header: TraceHeader, line_no: int) -> WireCandidate:
    try:
        position = int(obj["position"])
        token = int(obj["token"])
        confidence = float(obj["confidence"])
        margin = float(obj["margin"])
        entropy_norm = float(obj["entropy_norm"])
    except (KeyError, TypeError, ValueError) as exc:
        raise TraceParseError(f"line {line_no}: bad candidate record: {exc}") from exc
    attention = None
    if "attention" in obj:
        row = np.asarray(obj["attention"], dtype=float)
        if row.shape != (header.num_image_tokens,):
            raise TraceParseError(
                f"line {line_no}: dense attention has length {row.shape}, "
                f"expected {header.num_image_tokens}"
            )
        attention = row
    elif "attention_sparse" in obj:
        attention = _densify(obj["attention_sparse"], header.num_image_tokens, line_no)
    if attention is not None:
        attention.flags.writeable = False
    top_probs = None
    if "top_probs" in obj:
        try:
            top_probs = tuple((int(t), float(p)) for t, p in obj["top_probs"])
        except (TypeError, ValueError) as exc:
            raise TraceParseError(f"line {line_no}: bad top_probs: {exc}") from exc
    return WireCandidate(
        position=position,
        token=token,
        confidence=confidence,
        margin=margin,
        entropy_norm=entropy_norm,
        attention=attention,
        top_probs=top_probs,
    )


def _parse_step(obj: dict, header: TraceHeader, line_no: int) -> StepRecordWire:
    try:
        step_index = int(obj["step_index"])
        masked = tuple(int(p) for p in obj["masked_positions"])
        commit_size = int(obj["commit_size"])
        raw_candidates = obj["candidates"]
    except (KeyError, TypeError, ValueError) as exc:
        raise TraceParseError(f"line {line_no}: bad step record: {exc}") from exc
    candidates = tuple(_parse_candidate(c, header, line_no) for c in raw_candidates)
    committed = None
    if "committed_positions" in obj:
        committed = tuple(int(p) for p in obj["committed_positions"])
    return StepRecordWire(
        step_index=step_index,
        masked_positions=masked,
        commit_size=commit_size,
        candidates=candidates,
        committed_positions=committed,
    )


def read_trace(source: str | Path | IO[str]) -> tuple[TraceHeader, list[StepRecordWire]]:
    """Parse a trace; malformed lines raise with their line number."""

    def _read(fh: IO[str]) -> tuple[TraceHeader, list[StepRecordWire]]:
        first = fh.readline()
        if not first.strip():
            raise TraceParseError("line 1: empty trace, expected a header")
        try:
            header_obj = json.loads(first)
        except json.JSONDecodeError as exc:
            raise TraceParseError(f"line 1: invalid header line: {exc}") from exc
        header = _parse_header(header_obj)
        steps = []
        for line_no, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise TraceParseError(f"line {line_no}: invalid record: {exc}") from exc
            steps.append(_parse_step(obj, header, line_no))
        return header, steps

    if isinstance(source, (str, Path)):
        with open(source, "r", encoding="utf-8") as fh:
            return _read(fh)
    return _read(source)


@dataclass(frozen=True)
class TraceValidationReport:
    violations: tuple[str, ...]

    @property
    def ok(self) -> bool:
        return not self.violations


def validate_trace(
    header: TraceHeader,
    steps: Sequence[StepRecordWire],
    expected_schedule: Schedule | None = None,
) -> TraceValidationReport:
    """Semantic checks beyond parsing: monotone unmasking, commit sizes
    against the schedule implied by the header, attention normalization,
    and attention coverage of the top-W confidence candidates."""
    from .schedule import InvalidScheduleError, make_uniform_schedule

    violations: list[str] = []
    schedule = expected_schedule
    if schedule is None:
        try:
            schedule = make_uniform_schedule(header.length, header.forward_ratio)
        except InvalidScheduleError as exc:
            violations.append(f"header: cannot derive schedule: {exc}")

    prev_masked: set[int] | None = None
    prev_committed: tuple[int, ...] | None = None
    prev_index = -1
    for step in steps:
        tag = f"step {step.step_index}"
        if step.step_index != prev_index + 1:
            violations.append(f"{tag}: step index not consecutive after {prev_index}")
        prev_index = step.step_index

        masked = set(step.masked_positions)
        if len(masked) != len(step.masked_positions):
            violations.append(f"{tag}: duplicate masked positions")
        out_of_range = [p for p in masked if not 0 <= p < header.length]
        if out_of_range:
            violations.append(f"{tag}: masked positions out of range: {sorted(out_of_range)}")

        if prev_masked is not None:
            reappeared = masked - prev_masked
            if reappeared:
                violations.append(
                    f"{tag}: positions reappeared after commit: {sorted(reappeared)}"
                )
            if prev_committed is not None:
                expected = prev_masked - set(prev_committed)
                if masked != expected:
                    violations.append(
                        f"{tag}: masked set does not equal previous minus committed"
                    )

        if schedule is not None:
            t = step.step_index
            if t >= schedule.steps:
                violations.append(f"{tag}: beyond the {schedule.steps}-step schedule")
            else:
                expected_k = min(schedule.commit_sizes[t], len(masked))
                if step.commit_size != expected_k:
                    violations.append(
                        f"{tag}: commit_size {step.commit_size} != schedule's {expected_k}"
                    )

        seen = {c.position for c in step.candidates}
        if seen != masked:
            violations.append(f"{tag}: candidate positions do not match masked positions")

        with_attention = []
        for c in step.candidates:
            if c.attention is not None:
                total = float(np.asarray(c.attention).sum())
                if abs(total - 1.0) > ATTENTION_SUM_TOL:
                    violations.append(
                        f"{tag}: attention at position {c.position} sums to {total:.6f}"
                    )
                with_attention.append(c.position)
        top = sorted(step.candidates, key=lambda c: (-c.confidence, c.position))
        w_eff = min(header.attention_window, len(top))
        missing = [c.position for c in top[:w_eff] if c.attention is None]
        if missing:
            violations.append(
                f"{tag}: top-{w_eff} candidates missing attention at {missing}"
            )

        if step.committed_positions is not None:
            bad = [p for p in step.committed_positions if p not in masked]
            if bad:
                violations.append(f"{tag}: committed positions not masked: {bad}")
            prev_committed = step.committed_positions
        else:
            prev_committed = None
        prev_masked = masked

    return TraceValidationReport(violations=tuple(violations))


class RecordingSource:
    """StateSource wrapper that remembers every state it hands out."""

    def __init__(self, inner: StateSource) -> None:
        self._inner = inner
        self.states: list[DecodingState] = []

    def initial_state(self) -> DecodingState:
        state = self._inner.initial_state()
        self.states.append(state)
        return state

    def advance(self, commit: CommitRecord) -> DecodingState:
        state = self._inner.advance(commit)
        self.states.append(state)
        return state


def record_run(
    source: StateSource,
    policy: SelectionPolicy,
    schedule: Schedule,
    options: EngineOptions | None = None,
) -> tuple[DecodingRun, list[DecodingState]]:
    recorder = RecordingSource(source)
    run = run_decoding(recorder, policy, schedule, options)
    return run, recorder.states


def run_to_steps(
    states: Sequence[DecodingState],
    run: DecodingRun,
    attention_window: int | None = None,
) -> list[StepRecordWire]:
    """Pair engine states with their commits as wire records.

    When attention_window is given, only the top-W confidence candidates
    per step keep their attention rows; the rest are stored without.
    """
    if len(states) != len(run.commits):
        raise ValueError(
            f"{len(states)} states but {len(run.commits)} commits; not a completed run"
        )
    steps = []
    for state, commit in zip(states, run.commits):
        ordered = [state.candidates[p] for p in state.masked_positions]
        keep: set[int] | None = None
        if attention_window is not None:
            by_conf = sorted(ordered, key=lambda c: (-c.confidence, c.position))
            keep = {c.position for c in by_conf[:attention_window]}
        wire = []
        for c in ordered:
            attention = c.attention
            if keep is not None and c.position not in keep:
                attention = None
            wire.append(
                WireCandidate(
                    position=c.position,
                    token=c.predicted_token,
                    confidence=c.confidence,
                    margin=c.margin,
                    entropy_norm=c.entropy_norm,
                    attention=attention,
                )
            )
        steps.append(
            StepRecordWire(
                step_index=state.step_index,
                masked_positions=state.masked_positions,
                commit_size=len(commit.committed_positions),
                candidates=tuple(wire),
                committed_positions=commit.committed_positions,
            )
        )
    return steps


class ReplaySource:
    """StateSource backed by a recorded trace.

    While the replayed policy matches the recorded trajectory, states come
    straight from the corresponding records.  Once the trajectories
    diverge, each still-masked position falls back to its latest recorded
    prediction, so counterfactual replays stay runnable but approximate.
    """

    def __init__(
        self,
        header: TraceHeader,
        steps: Sequence[StepRecordWire],
        strict_attention_sum: bool = False,
    ) -> None:
        if not steps:
            raise SourceExhaustedError("trace contains no step records")
        self.header = header
        self._steps = list(steps)
        self._strict = strict_attention_sum
        # per position: candidates in step order while the position stayed masked
        self._history: dict[int, list[tuple[int, WireCandidate]]] = {}
        for step in self._steps:
            for c in step.candidates:
                self._history.setdefault(c.position, []).append((step.step_index, c))
        first = set(self._steps[0].masked_positions)
        missing = first - set(self._history)
        if missing:
            raise TraceParseError(
                f"positions masked at step 0 but never described: {sorted(missing)}"
            )
        self._masked: tuple[int, ...] = tuple(sorted(first))
        self._step_index = 0

    def _prediction_at(self, position: int, step_index: int) -> CandidatePrediction:
        latest = None
        for t, c in self._history[position]:
            if t > step_index:
                break
            latest = c
        if latest is None:
            # the position only appears later in the trace; use its first record
            latest = self._history[position][0][1]
        attention = latest.attention
        if attention is not None:
            total = float(attention.sum())
            if abs(total - 1.0) > ATTENTION_SUM_TOL:
                if self._strict:
                    raise TraceError(
                        f"attention for position {position} sums to {total:.6f}"
                    )
                attention = None
            elif total != 1.0:
                attention = attention / total
        return CandidatePrediction(
            position=position,
            predicted_token=latest.token,
            confidence=latest.confidence,
            margin=min(latest.margin, latest.confidence),
            entropy_norm=latest.entropy_norm,
            attention=attention,
        )

    def _build_state(self) -> DecodingState:
        candidates = {
            p: self._prediction_at(p, self._step_index) for p in self._masked
        }
        return DecodingState(
            step_index=self._step_index,
            length=self.header.length,
            num_image_tokens=self.header.num_image_tokens,
            masked_positions=self._masked,
            candidates=candidates,
        )

    def initial_state(self) -> DecodingState:
        return self._build_state()

    def advance(self, commit: CommitRecord) -> DecodingState:
        committed = set(commit.committed_positions)
        remaining = tuple(p for p in self._masked if p not in committed)
        if len(remaining) + len(committed) != len(self._masked):
            raise ValueError("commit includes positions that are not masked")
        self._masked = remaining
        self._step_index += 1
        if not remaining:
            raise SourceExhaustedError("replay complete")
        if self._step_index >= len(self._steps):
            raise SourceExhaustedError(
                f"trace has {len(self._steps)} steps, cannot reach step {self._step_index}"
            )
        return self._build_state()
