from __future__ import annotations

import numpy as np
import pytest

from vrcd.states import (
    CandidatePrediction,
    CommitRecord,
    DecodingState,
    StateError,
    StateSource,
)

from refimpl import make_attention, make_candidate, make_state


class TestCandidatePrediction:
    def test_rejects_out_of_range_fields(self):
        with pytest.raises(StateError):
            make_candidate(0, 1.2)
        with pytest.raises(StateError):
            make_candidate(0, -0.1)
        with pytest.raises(StateError):
            make_candidate(0, 0.5, margin=0.6)  # margin above confidence
        with pytest.raises(StateError):
            make_candidate(0, 0.5, entropy=1.5)
        with pytest.raises(StateError):
            make_candidate(-1, 0.5)

    def test_margin_equal_to_confidence_is_fine(self):
        c = make_candidate(0, 0.5, margin=0.5)
        assert c.margin == 0.5

    def test_with_attention_validates_and_freezes(self):
        c = make_candidate(3, 0.8)
        c2 = c.with_attention([0.25, 0.25, 0.25, 0.25], 4)
        assert c2.attention.sum() == pytest.approx(1.0)
        with pytest.raises(ValueError):
            c2.attention[0] = 0.9  # read-only
        with pytest.raises(StateError):
            c.with_attention([0.5, 0.5], 4)  # wrong length
        with pytest.raises(StateError):
            c.with_attention([0.7, 0.5, -0.2, 0.0], 4)  # negative weight
        with pytest.raises(StateError):
            c.with_attention([0.5, 0.1, 0.1, 0.1], 4)  # does not sum to 1


class TestDecodingState:
    def test_masked_positions_are_sorted(self):
        state = DecodingState(
            step_index=0,
            length=6,
            num_image_tokens=4,
            masked_positions=(4, 1, 3),
            candidates={p: make_candidate(p, 0.5) for p in (1, 3, 4)},
        )
        assert state.masked_positions == (1, 3, 4)
        assert state.masked_count == 3

    def test_candidates_must_match_mask_exactly(self):
        with pytest.raises(StateError):
            DecodingState(
                step_index=0,
                length=4,
                num_image_tokens=4,
                masked_positions=(0, 1),
                candidates={0: make_candidate(0, 0.5)},
            )
        with pytest.raises(StateError):
            DecodingState(
                step_index=0,
                length=4,
                num_image_tokens=4,
                masked_positions=(0,),
                candidates={0: make_candidate(1, 0.5)},
            )

    def test_positions_must_be_in_range(self):
        with pytest.raises(StateError):
            make_state({7: 0.5}, length=4)

    def test_attention_length_checked_against_state(self):
        cand = make_candidate(0, 0.5, attention=[0.5, 0.5])
        with pytest.raises(StateError):
            DecodingState(
                step_index=0,
                length=2,
                num_image_tokens=4,
                masked_positions=(0,),
                candidates={0: cand},
            )

    def test_after_commit_drops_positions_and_keeps_predictions(self):
        state = make_state({0: 0.9, 1: 0.8, 2: 0.7}, length=4)
        after = state.after_commit([1])
        assert after.masked_positions == (0, 2)
        assert after.step_index == state.step_index
        assert after.candidates[0] is state.candidates[0]
        empty = after.after_commit([0, 2])
        assert empty.masked_count == 0


def test_commit_record_validation():
    CommitRecord(step_index=0, committed_positions=(1, 2), committed_tokens=(5, 6))
    with pytest.raises(StateError):
        CommitRecord(step_index=0, committed_positions=(1, 2), committed_tokens=(5,))
    with pytest.raises(StateError):
        CommitRecord(step_index=0, committed_positions=(1, 1), committed_tokens=(5, 5))


def test_source_protocol_is_runtime_checkable():
    from vrcd.oracle import OracleConfig, SyntheticOracle

    oracle = SyntheticOracle(OracleConfig(length=8, num_image_tokens=8, num_regions=4))
    assert isinstance(oracle, StateSource)


def test_attention_helper_normalizes():
    a = make_attention([2.0, 2.0])
    assert np.allclose(a, [0.5, 0.5])
    assert not a.flags.writeable
