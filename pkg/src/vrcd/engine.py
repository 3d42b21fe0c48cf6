"""The decoding loop: apply a selection policy until nothing is masked.

The engine owns the step protocol and the bookkeeping around it.  It asks
the policy for a commit, validates the policy's answer against the state,
records per-step metrics, and feeds the commit back to the state source.
Sources and policies stay ignorant of each other.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from time import perf_counter

from .metrics import StepMetrics, position_change, remaining_entropy, step_vri
from .policies import SelectionPolicy, select_confidence
from .schedule import Schedule
from .states import CommitRecord, SourceExhaustedError, StateSource


class PolicyContractError(RuntimeError):
    """The policy returned a selection the state cannot honor."""


class TruncatedRunError(RuntimeError):
    """The source ran out of states while positions were still masked."""


@dataclass(frozen=True)
class EngineOptions:
    # shadow selection: what plain confidence would have committed on the
    # same state, kept for positions-changed accounting
    compute_shadow: bool = True


@dataclass(frozen=True)
class DecodingRun:
    commits: tuple[CommitRecord, ...]
    steps: tuple[StepMetrics, ...]
    forward_count: int
    total_seconds: float
    selection_seconds: float = field(default=0.0)

    @property
    def overhead_ratio(self) -> float:
        """Share of run wall time spent inside policy selection."""
        if self.total_seconds <= 0:
            return 0.0
        return self.selection_seconds / self.total_seconds


def _validate_selection(state, selected: list[int], k_eff: int) -> tuple[int, ...]:
    ordered = tuple(selected)
    if len(set(ordered)) != len(ordered):
        raise PolicyContractError(f"duplicate positions in selection {ordered}")
    if len(ordered) != k_eff:
        raise PolicyContractError(
            f"selection size {len(ordered)} != min(K, masked) = {k_eff}"
        )
    masked = set(state.masked_positions)
    bad = [p for p in ordered if p not in masked]
    if bad:
        raise PolicyContractError(f"selected positions not masked: {bad}")
    return ordered


def run_decoding(
    source: StateSource,
    policy: SelectionPolicy,
    schedule: Schedule,
    options: EngineOptions | None = None,
) -> DecodingRun:
    """Decode one run to completion and return its commits and metrics.

    The source is advanced once per non-final step; the initial state
    counts as the first forward, so forward_count equals schedule.steps.
    """
    opts = options or EngineOptions()
    t_run = perf_counter()
    try:
        state = source.initial_state()
    except SourceExhaustedError as exc:
        raise TruncatedRunError("source yielded no initial state") from exc
    if state.length != schedule.length:
        raise ValueError(
            f"schedule length {schedule.length} != state length {state.length}"
        )

    commits: list[CommitRecord] = []
    steps: list[StepMetrics] = []
    forwards = 1
    selection_total = 0.0

    for k in schedule.commit_sizes:
        if state.masked_count == 0:
            raise TruncatedRunError(
                f"schedule has steps left but nothing is masked at step {state.step_index}"
            )
        k_eff = min(k, state.masked_count)

        t0 = perf_counter()
        selected = policy.select(state, k)
        sel_seconds = perf_counter() - t0
        selection_total += sel_seconds
        ordered = _validate_selection(state, selected, k_eff)

        shadow: tuple[int, ...] | None = None
        if opts.compute_shadow:
            shadow = tuple(select_confidence(state, k))

        commit = CommitRecord(
            step_index=state.step_index,
            committed_positions=ordered,
            committed_tokens=tuple(
                state.candidates[p].predicted_token for p in ordered
            ),
            shadow_confidence_positions=shadow,
        )
        commits.append(commit)

        vri_value, vri_complete = step_vri(state, ordered)
        after = state.after_commit(ordered)
        steps.append(
            StepMetrics(
                step_index=state.step_index,
                committed_count=k_eff,
                masked_count=state.masked_count,
                vri=vri_value,
                vri_complete=vri_complete,
                remaining_entropy=remaining_entropy(after),
                position_change_count=(
                    position_change(ordered, shadow, k_eff) if shadow is not None else None
                ),
                shadow_vri=(step_vri(state, shadow)[0] if shadow is not None else None),
                selection_seconds=sel_seconds,
            )
        )

        if after.masked_count == 0:
            state = after
            break
        expected_masked = after.masked_positions
        try:
            state = source.advance(commit)
        except SourceExhaustedError as exc:
            raise TruncatedRunError(
                f"source exhausted after step {commit.step_index} with "
                f"{len(expected_masked)} positions still masked"
            ) from exc
        forwards += 1
        if state.masked_positions != expected_masked:
            raise TruncatedRunError(
                f"source broke monotone unmasking at step {state.step_index}: "
                f"expected masked {expected_masked}, got {state.masked_positions}"
            )

    if state.masked_count != 0:
        raise TruncatedRunError(
            f"schedule exhausted with {state.masked_count} positions still masked"
        )

    return DecodingRun(
        commits=tuple(commits),
        steps=tuple(steps),
        forward_count=forwards,
        total_seconds=perf_counter() - t_run,
        selection_seconds=selection_total,
    )
