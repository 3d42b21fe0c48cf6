"""Core decoding-state model shared by all policies and sources.

A run is a sequence of immutable :class:`DecodingState` snapshots.  Each
snapshot carries the still-masked positions and, for every one of them, the
predictor's top-token summary (confidence, margin, normalized entropy) plus
an optional token-to-image attention row.  Policies only ever read these
snapshots; a :class:`StateSource` owns whatever produced them (synthetic
oracle, recorded trace, live model) and is the only thing that advances.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Protocol, runtime_checkable

import numpy as np

ATTENTION_SUM_TOL = 1e-6


class StateError(ValueError):
    """A state or prediction violates its structural invariants."""


def _as_readonly_attention(attention, num_image_tokens: int) -> np.ndarray:
    a = np.asarray(attention, dtype=np.float64)
    if a.ndim != 1 or a.shape[0] != num_image_tokens:
        raise StateError(
            f"attention must be a length-{num_image_tokens} vector, got shape {a.shape}"
        )
    if np.any(a < -1e-12):
        raise StateError("attention weights must be nonnegative")
    total = float(a.sum())
    if abs(total - 1.0) > ATTENTION_SUM_TOL:
        raise StateError(f"attention must sum to 1 within {ATTENTION_SUM_TOL}, got {total}")
    a = np.clip(a, 0.0, None)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class CandidatePrediction:
    """Top-token summary for one masked position.

    ``attention`` is the raw normalized token-to-image attention row for the
    position (length equals the run's image-token count), or ``None`` when
    the producing source did not record one.
    """

    position: int
    predicted_token: int
    confidence: float
    margin: float
    entropy_norm: float
    attention: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.position < 0:
            raise StateError(f"position must be nonnegative, got {self.position}")
        if not 0.0 <= self.confidence <= 1.0:
            raise StateError(f"confidence must lie in [0,1], got {self.confidence}")
        if not 0.0 <= self.margin <= 1.0:
            raise StateError(f"margin must lie in [0,1], got {self.margin}")
        # top-1 minus top-2 probability can never exceed the top-1 probability
        if self.margin > self.confidence + 1e-12:
            raise StateError(
                f"margin {self.margin} exceeds confidence {self.confidence}"
            )
        if not 0.0 <= self.entropy_norm <= 1.0 + 1e-12:
            raise StateError(f"entropy_norm must lie in [0,1], got {self.entropy_norm}")

    def with_attention(self, attention, num_image_tokens: int) -> "CandidatePrediction":
        return CandidatePrediction(
            position=self.position,
            predicted_token=self.predicted_token,
            confidence=self.confidence,
            margin=self.margin,
            entropy_norm=self.entropy_norm,
            attention=_as_readonly_attention(attention, num_image_tokens),
        )


@dataclass(frozen=True, eq=False)
class DecodingState:
    """One pre-commit snapshot of a run.

    ``masked_positions`` is kept sorted; every masked position maps to exactly
    one :class:`CandidatePrediction` in ``candidates``.
    """

    step_index: int
    length: int
    num_image_tokens: int
    masked_positions: tuple[int, ...]
    candidates: Mapping[int, CandidatePrediction]

    def __post_init__(self) -> None:
        if self.length < 1:
            raise StateError("length must be positive")
        if self.num_image_tokens < 1:
            raise StateError("num_image_tokens must be positive")
        if self.step_index < 0:
            raise StateError("step_index must be nonnegative")
        positions = tuple(sorted(set(self.masked_positions)))
        if len(positions) != len(self.masked_positions):
            raise StateError("masked_positions contains duplicates")
        object.__setattr__(self, "masked_positions", positions)
        for p in positions:
            if not 0 <= p < self.length:
                raise StateError(f"masked position {p} outside [0, {self.length})")
        if set(self.candidates.keys()) != set(positions):
            raise StateError("candidates must cover exactly the masked positions")
        for p, cand in self.candidates.items():
            if cand.position != p:
                raise StateError(f"candidate at key {p} reports position {cand.position}")
            if cand.attention is not None and cand.attention.shape[0] != self.num_image_tokens:
                raise StateError(
                    f"candidate {p} attention length {cand.attention.shape[0]} "
                    f"!= num_image_tokens {self.num_image_tokens}"
                )

    @property
    def masked_count(self) -> int:
        return len(self.masked_positions)

    def candidate(self, position: int) -> CandidatePrediction:
        return self.candidates[position]

    def after_commit(self, committed: Iterable[int]) -> "DecodingState":
        """View of this snapshot with ``committed`` removed from the mask set.

        Predictions for the remaining positions are unchanged; this is the
        state on which post-commit metrics (e.g. remaining entropy) are
        evaluated.
        """
        gone = set(committed)
        remaining = tuple(p for p in self.masked_positions if p not in gone)
        return DecodingState(
            step_index=self.step_index,
            length=self.length,
            num_image_tokens=self.num_image_tokens,
            masked_positions=remaining,
            candidates={p: self.candidates[p] for p in remaining},
        )


@dataclass(frozen=True)
class CommitRecord:
    """Positions (and their predicted tokens) fixed at one step."""

    step_index: int
    committed_positions: tuple[int, ...]
    committed_tokens: tuple[int, ...]
    shadow_confidence_positions: tuple[int, ...] | None = None

    def __post_init__(self) -> None:
        if len(self.committed_positions) != len(self.committed_tokens):
            raise StateError("committed_positions and committed_tokens differ in length")
        if len(set(self.committed_positions)) != len(self.committed_positions):
            raise StateError("committed_positions contains duplicates")


class SourceExhaustedError(RuntimeError):
    """The source has no further states although masked positions remain."""


@runtime_checkable
class StateSource(Protocol):
    """Produces the step-0 state and applies commits to yield the next state.

    One ``initial_state`` call plus each ``advance`` call corresponds to one
    model-forward equivalent.  Implementations raise
    :class:`SourceExhaustedError` from ``advance`` when they cannot produce
    the requested next state.
    """

    def initial_state(self) -> DecodingState: ...

    def advance(self, commit: CommitRecord) -> DecodingState: ...
