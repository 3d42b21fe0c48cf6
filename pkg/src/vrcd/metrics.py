"""Step-level analysis metrics and policy-stage timing.

Three families live here: the visual redundancy index of a committed set,
the mean predictive entropy of the positions still masked after a commit,
and the positions-changed accounting between a policy's selection and the
confidence baseline's selection on the same state.  None of these feed
back into decoding; they only describe it.
"""

from __future__ import annotations

import statistics
from dataclasses import dataclass
from time import perf_counter
from typing import Iterable, Sequence

import numpy as np

from .saliency import DimensionError, pairwise_root_product
from .states import DecodingState

_SUM_TOL = 1e-6


def vri(committed_attentions: Sequence[np.ndarray]) -> float:
    """Redundancy of a committed set's attention rows, in [0, 1].

    0 means the rows ground on disjoint image tokens, 1 means they are
    identical; fewer than two rows scores 0 by definition.  Rows must be
    normalized attention (each nonnegative, summing to 1).
    """
    m = len(committed_attentions)
    if m <= 1:
        return 0.0
    vectors = [np.asarray(v, dtype=float) for v in committed_attentions]
    n = vectors[0].shape[-1]
    for v in vectors:
        if v.ndim != 1 or v.shape[0] != n:
            raise DimensionError(
                f"attention rows must share one length, got {v.shape} vs ({n},)"
            )
        if np.any(v < -1e-12):
            raise ValueError("attention rows must be nonnegative")
        total = float(v.sum())
        if abs(total - 1.0) > _SUM_TOL:
            raise ValueError(f"attention row sums to {total}, expected 1")
    stacked = np.vstack(vectors)
    redundant_mass = stacked.sum(axis=0) - stacked.max(axis=0)
    return float(redundant_mass.sum() / (m - 1))


def step_vri(state: DecodingState, committed_positions: Iterable[int]) -> tuple[float, bool]:
    """VRI of a commit against the state it was selected from.

    Positions without an attention row are dropped and the result is
    flagged incomplete; a commit left with fewer than two rows scores 0.
    Returns (value, complete).
    """
    rows = []
    skipped = 0
    for p in committed_positions:
        attention = state.candidates[p].attention
        if attention is None:
            skipped += 1
        else:
            rows.append(attention)
    return vri(rows), skipped == 0


def remaining_entropy(state_after_commit: DecodingState) -> float | None:
    """Mean normalized entropy over still-masked positions; None when done."""
    if state_after_commit.masked_count == 0:
        return None
    values = [
        state_after_commit.candidates[p].entropy_norm
        for p in state_after_commit.masked_positions
    ]
    return sum(values) / len(values)


def position_change(
    selection_policy: Iterable[int], selection_conf: Iterable[int], k: int
) -> int:
    """How many of the k selected positions differ from the baseline's k."""
    a = set(selection_policy)
    b = set(selection_conf)
    if len(a) != k or len(b) != k:
        raise ValueError(f"both selections must have size {k}, got {len(a)} and {len(b)}")
    return k - len(a & b)


@dataclass(frozen=True)
class StepMetrics:
    """Analysis record for one committed step.

    masked_count is |C_t| before the commit; remaining_entropy is None on
    the terminal step; position_change_count and shadow_vri are None when
    the shadow confidence selection was not computed.
    """

    step_index: int
    committed_count: int
    masked_count: int
    vri: float
    vri_complete: bool = True
    remaining_entropy: float | None = None
    position_change_count: int | None = None
    shadow_vri: float | None = None
    selection_seconds: float = 0.0

    @property
    def analyzed(self) -> bool:
        # the change-rate denominator counts only steps with a real choice
        return (
            self.position_change_count is not None
            and 0 < self.committed_count < self.masked_count
        )


@dataclass(frozen=True)
class RunAggregate:
    """Cross-run roll-up of per-step metrics.

    mean_vri_micro pools every committed step; mean_vri_macro averages the
    per-run means first.  change_sum and commit_sum are kept as exact
    integers so change_rate * commit_sum == change_sum can be re-checked.
    """

    mean_vri_micro: float
    mean_vri_macro: float
    vri_curve: tuple[tuple[int, float], ...]
    entropy_curve: tuple[tuple[int, float], ...]
    mean_change_count: float | None
    change_rate: float | None
    analyzed_step_count: int
    change_sum: int
    commit_sum: int


def aggregate(runs: Sequence[Sequence[StepMetrics]]) -> RunAggregate:
    """Fold per-run step metrics into means, curves, and change rates."""
    all_steps = [sm for run in runs for sm in run]
    if not all_steps:
        raise ValueError("aggregate requires at least one step metric")

    run_means = [
        statistics.fmean(sm.vri for sm in run) for run in runs if len(run) > 0
    ]
    mean_micro = statistics.fmean(sm.vri for sm in all_steps)
    mean_macro = statistics.fmean(run_means)

    by_step_vri: dict[int, list[float]] = {}
    by_step_ent: dict[int, list[float]] = {}
    for sm in all_steps:
        by_step_vri.setdefault(sm.step_index, []).append(sm.vri)
        if sm.remaining_entropy is not None:
            by_step_ent.setdefault(sm.step_index, []).append(sm.remaining_entropy)
    vri_curve = tuple(
        (t, statistics.fmean(vals)) for t, vals in sorted(by_step_vri.items())
    )
    entropy_curve = tuple(
        (t, statistics.fmean(vals)) for t, vals in sorted(by_step_ent.items())
    )

    analyzed = [sm for sm in all_steps if sm.analyzed]
    change_sum = sum(sm.position_change_count for sm in analyzed)  # type: ignore[misc]
    commit_sum = sum(sm.committed_count for sm in analyzed)
    if analyzed:
        mean_change = change_sum / len(analyzed)
        change_rate = change_sum / commit_sum
    else:
        mean_change = None
        change_rate = None

    return RunAggregate(
        mean_vri_micro=mean_micro,
        mean_vri_macro=mean_macro,
        vri_curve=vri_curve,
        entropy_curve=entropy_curve,
        mean_change_count=mean_change,
        change_rate=change_rate,
        analyzed_step_count=len(analyzed),
        change_sum=change_sum,
        commit_sum=commit_sum,
    )


@dataclass(frozen=True)
class OverheadReport:
    vrcd_seconds: float
    confidence_seconds: float
    ratio: float
    state_count: int


def _median_seconds(fn, repeats: int, warmup: int) -> float:
    for _ in range(warmup):
        fn()
    samples = []
    for _ in range(repeats):
        t0 = perf_counter()
        fn()
        samples.append(perf_counter() - t0)
    return statistics.median(samples)


def selection_overhead(
    states: Sequence[DecodingState],
    k: int,
    config=None,
    repeats: int = 5,
    warmup: int = 2,
) -> OverheadReport:
    """Median wall time of the redundancy policy vs plain confidence.

    Both policies run over the identical state corpus; the ratio is the
    price of the redundancy machinery at the policy stage only.
    """
    from .policies import VrcdConfig, select_confidence, select_vrcd

    cfg = config or VrcdConfig()
    vrcd_s = _median_seconds(
        lambda: [select_vrcd(s, k, cfg) for s in states], repeats, warmup
    )
    conf_s = _median_seconds(
        lambda: [select_confidence(s, k) for s in states], repeats, warmup
    )
    ratio = vrcd_s / conf_s if conf_s > 0 else float("inf")
    return OverheadReport(
        vrcd_seconds=vrcd_s,
        confidence_seconds=conf_s,
        ratio=ratio,
        state_count=len(states),
    )


def pair_stage_times(
    m_values: Sequence[int],
    n_values: Sequence[int],
    repeats: int = 15,
    warmup: int = 2,
    seed: int = 0,
) -> dict[tuple[int, int], float]:
    """Median seconds of the all-pairs overlap product at each (m, n) size.

    Only the quadratic stage is timed: the pairwise product over m
    prepared rows of length n.  Row prep (sqrt of the synthetic saliency)
    is linear in m * n and excluded, so the measured cost is the one that
    should grow as m^2 * n.  All sizes are sampled in interleaved rounds
    so machine-load drift lands on every size alike, and short calls are
    batched to at least ~2 ms per sample.
    """
    sizes = [(m, n) for m in m_values for n in n_values]
    if not sizes:
        raise ValueError("need at least one m and one n value")
    if any(m < 1 for m in m_values) or any(n < 1 for n in n_values):
        raise ValueError("m and n must be positive")

    rng = np.random.default_rng(seed)
    roots: dict[tuple[int, int], np.ndarray] = {}
    inner: dict[tuple[int, int], int] = {}
    for size in sizes:
        m, n = size
        rows = rng.random((m, n)) + 1e-3
        rows /= rows.sum(axis=1, keepdims=True)
        sq = np.sqrt(rows)
        roots[size] = sq
        t0 = perf_counter()
        pairwise_root_product(sq)
        probe = perf_counter() - t0
        inner[size] = max(1, min(4000, int(2e-3 / max(probe, 1e-9))))

    samples: dict[tuple[int, int], list[float]] = {size: [] for size in sizes}
    for round_index in range(warmup + repeats):
        for size in sizes:
            sq = roots[size]
            count = inner[size]
            t0 = perf_counter()
            for _ in range(count):
                pairwise_root_product(sq)
            elapsed = (perf_counter() - t0) / count
            if round_index >= warmup:
                samples[size].append(elapsed)
    return {size: statistics.median(vals) for size, vals in samples.items()}


def time_pair_stage(
    m: int,
    n: int,
    repeats: int = 15,
    warmup: int = 2,
    seed: int = 0,
) -> float:
    """Median seconds of the pairwise overlap product at a single size."""
    return pair_stage_times([m], [n], repeats=repeats, warmup=warmup, seed=seed)[(m, n)]
