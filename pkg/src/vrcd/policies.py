"""Selection policies: confidence, margin, entropy, and redundancy-controlled.

All policies answer the same question — which ``k`` masked positions to
commit at this step — and none of them ever alters a predicted token.  The
redundancy-controlled policy builds a confidence-truncated candidate
window, scores how strongly each window candidate's visual saliency
overlaps with the other likely candidates, and reweights confidence by
``(r + 1) ** -alpha`` before taking the top ``k``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .saliency import (
    OverlapTable,
    SaliencyVector,
    extract_saliency,
    pairwise_overlaps,
    pct_rank_all,
)
from .states import DecodingState

logger = logging.getLogger(__name__)

AGGREGATION_MODES = ("confidence_weighted", "uniform_average")


class MissingAttentionError(RuntimeError):
    """A window candidate has no attention row and strict mode is on."""


@dataclass(frozen=True)
class VrcdConfig:
    """Knobs of the redundancy-controlled policy.

    alpha:        exponent of the confidence reweighting; 0 disables the
                  policy entirely (pure confidence selection).
    window_scale: multiplier on the commit size when sizing the candidate
                  window (must be >= 1).
    aggregation:  how neighbor overlap ranks combine into one redundancy
                  score per candidate.
    saliency_extraction: when False, raw attention rows are used as the
                  overlap distributions instead of positive-residual
                  saliency.
    strict_attention: raise instead of degrading to a zero saliency when a
                  window candidate has no attention row.
    rank_full_window: debug variant that keeps zero-saliency candidates in
                  the overlap ranking and in the neighbor weighting pool.
    """

    alpha: float = 1.5
    window_scale: float = 2.0
    aggregation: str = "confidence_weighted"
    saliency_extraction: bool = True
    strict_attention: bool = False
    rank_full_window: bool = False

    def __post_init__(self) -> None:
        if self.alpha < 0:
            raise ValueError(f"alpha must be nonnegative, got {self.alpha}")
        if self.window_scale < 1:
            raise ValueError(f"window_scale must be >= 1, got {self.window_scale}")
        if self.aggregation not in AGGREGATION_MODES:
            raise ValueError(
                f"aggregation must be one of {AGGREGATION_MODES}, got {self.aggregation!r}"
            )


@dataclass(frozen=True)
class ScoredCandidate:
    position: int
    confidence: float
    redundancy_score: float
    commit_score: float


@dataclass(frozen=True, eq=False)
class CandidateWindow:
    """Confidence-truncated candidate set, ordered best-first."""

    positions: tuple[int, ...]
    confidences: tuple[float, ...]
    saliencies: dict[int, SaliencyVector] = field(default_factory=dict)


def _top_positions(scored: list[tuple[int, float]], k: int, largest: bool = True) -> list[int]:
    # ties break toward the lower position index, for reproducible replays
    sign = -1.0 if largest else 1.0
    ordered = sorted(scored, key=lambda pc: (sign * pc[1], pc[0]))
    return [p for p, _ in ordered[:k]]


def select_confidence(state: DecodingState, k: int) -> list[int]:
    """The ``min(k, |masked|)`` positions with the largest top-token probability."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    scored = [(p, state.candidates[p].confidence) for p in state.masked_positions]
    return _top_positions(scored, min(k, len(scored)))


def select_margin(state: DecodingState, k: int) -> list[int]:
    """Largest gap between the two most likely tokens first."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    scored = [(p, state.candidates[p].margin) for p in state.masked_positions]
    return _top_positions(scored, min(k, len(scored)))


def select_entropy(state: DecodingState, k: int) -> list[int]:
    """Smallest normalized predictive entropy first."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    scored = [(p, state.candidates[p].entropy_norm) for p in state.masked_positions]
    return _top_positions(scored, min(k, len(scored)), largest=False)


def window_size(masked_count: int, k: int, window_scale: float) -> int:
    return min(masked_count, max(k, math.ceil(window_scale * k)))


def build_window(state: DecodingState, k: int, window_scale: float) -> CandidateWindow:
    """The highest-confidence masked positions, sized by ``window_scale * k``."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if window_scale < 1:
        raise ValueError(f"window_scale must be >= 1, got {window_scale}")
    m = window_size(state.masked_count, k, window_scale)
    scored = [(p, state.candidates[p].confidence) for p in state.masked_positions]
    chosen = _top_positions(scored, m)
    return CandidateWindow(
        positions=tuple(chosen),
        confidences=tuple(state.candidates[p].confidence for p in chosen),
    )


def attach_saliency(
    state: DecodingState, window: CandidateWindow, config: VrcdConfig
) -> CandidateWindow:
    """Fill the window's saliency vectors from the state's attention rows.

    Candidates without an attention row become non-visual zero vectors
    unless ``config.strict_attention`` is set.
    """
    n = state.num_image_tokens
    saliencies: dict[int, SaliencyVector] = {}
    missing = 0
    zeros = None
    for p in window.positions:
        attention = state.candidates[p].attention
        if attention is None:
            if config.strict_attention:
                raise MissingAttentionError(
                    f"position {p} has no attention row at step {state.step_index}"
                )
            missing += 1
            if zeros is None:
                zeros = np.zeros(n)
                zeros.flags.writeable = False
            saliencies[p] = SaliencyVector(position=p, values=zeros, is_visual=False)
        elif config.saliency_extraction:
            saliencies[p] = extract_saliency(attention, n, position=p)
        else:
            # raw-attention variant: the row itself is the overlap distribution
            saliencies[p] = SaliencyVector(position=p, values=attention, is_visual=True)
    if missing:
        logger.warning(
            "step %d: %d of %d window candidates lack attention; treating them as non-visual",
            state.step_index,
            missing,
            len(window.positions),
        )
    return replace(window, saliencies=saliencies)


def compute_redundancy_scores(
    window: CandidateWindow, config: VrcdConfig
) -> list[ScoredCandidate]:
    """Per-candidate redundancy scores and redundancy-controlled commit scores.

    A candidate's redundancy score is the (confidence-weighted or uniform)
    mean percentile rank of its pairwise overlaps against the other
    saliency-bearing window candidates; candidates without saliency, or with
    no scorable neighbors, score zero and keep their raw confidence.
    """
    if len(window.saliencies) != len(window.positions):
        raise ValueError("window saliencies missing; call attach_saliency first")
    if config.rank_full_window:
        pool = list(window.positions)
        table = _full_window_overlaps(window)
    else:
        pool = [p for p in window.positions if window.saliencies[p].is_visual]
        table = pairwise_overlaps([window.saliencies[p] for p in pool])
    table = pct_rank_all(table)

    conf = dict(zip(window.positions, window.confidences))
    pool_set = set(pool)
    out: list[ScoredCandidate] = []
    for p in window.positions:
        r = 0.0
        if p in pool_set:
            neighbors = [q for q in pool if q != p]
            if neighbors:
                if config.aggregation == "confidence_weighted":
                    z = sum(conf[q] for q in neighbors)
                    if z > 0.0:
                        r = sum(conf[q] * table.rank(p, q) for q in neighbors) / z
                else:
                    r = sum(table.rank(p, q) for q in neighbors) / len(neighbors)
        s = conf[p] * (r + 1.0) ** (-config.alpha)
        out.append(
            ScoredCandidate(
                position=p, confidence=conf[p], redundancy_score=r, commit_score=s
            )
        )
    return out


def _full_window_overlaps(window: CandidateWindow) -> OverlapTable:
    # debug variant: zero-saliency candidates stay in the pool, so their
    # pairs contribute zero overlaps to the ranked multiset
    rows = np.vstack([window.saliencies[p].values for p in window.positions])
    from .saliency import overlap_matrix

    gram = overlap_matrix(rows)
    pairs: dict[tuple[int, int], float] = {}
    for a in range(len(window.positions)):
        for b in range(a + 1, len(window.positions)):
            key = OverlapTable._key(window.positions[a], window.positions[b])
            pairs[key] = float(gram[a, b])
    return OverlapTable(pairs=pairs)


def select_vrcd(state: DecodingState, k: int, config: VrcdConfig) -> list[int]:
    """Top ``min(k, |masked|)`` positions by redundancy-controlled score.

    The selection is always a subset of the candidate window, which is a
    subset of the masked positions.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    k_eff = min(k, state.masked_count)
    window = build_window(state, k, config.window_scale)
    window = attach_saliency(state, window, config)
    scored = compute_redundancy_scores(window, config)
    return _top_positions([(c.position, c.commit_score) for c in scored], k_eff)


class SelectionPolicy:
    """Base class only for the shared repr; policies are pure and stateless."""

    name: str = "base"

    def select(self, state: DecodingState, k: int) -> list[int]:
        raise NotImplementedError

    def __repr__(self) -> str:
        return f"{type(self).__name__}()"


class ConfidencePolicy(SelectionPolicy):
    name = "confidence"

    def select(self, state: DecodingState, k: int) -> list[int]:
        return select_confidence(state, k)


class MarginPolicy(SelectionPolicy):
    name = "margin"

    def select(self, state: DecodingState, k: int) -> list[int]:
        return select_margin(state, k)


class EntropyPolicy(SelectionPolicy):
    name = "entropy"

    def select(self, state: DecodingState, k: int) -> list[int]:
        return select_entropy(state, k)


class VrcdPolicy(SelectionPolicy):
    name = "vrcd"

    def __init__(self, config: VrcdConfig | None = None) -> None:
        self.config = config or VrcdConfig()

    def select(self, state: DecodingState, k: int) -> list[int]:
        return select_vrcd(state, k, self.config)

    def __repr__(self) -> str:
        return f"VrcdPolicy({self.config})"


def make_policy(name: str, config: VrcdConfig | None = None) -> SelectionPolicy:
    if name == "confidence":
        return ConfidencePolicy()
    if name == "margin":
        return MarginPolicy()
    if name == "entropy":
        return EntropyPolicy()
    if name == "vrcd":
        return VrcdPolicy(config)
    raise ValueError(f"unknown policy {name!r}")
