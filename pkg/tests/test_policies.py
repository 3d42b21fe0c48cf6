"""Selection policies, candidate windows, and redundancy scoring.

The two hand-worked scoring fixtures freeze expected redundancy scores as
exact fractions; they were derived on paper from the count-of-<= rank
definition and the (r + 1) ** -alpha reweighting, not from the code.
"""

from __future__ import annotations

import numpy as np
import pytest

from vrcd.policies import (
    CandidateWindow,
    MissingAttentionError,
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
    window_size,
)
from vrcd.states import CandidatePrediction, DecodingState

from refimpl import (
    make_state,
    random_small_state,
    ref_top_positions,
    ref_vrcd_scores,
    ref_vrcd_select,
)


class TestBaselines:
    def test_confidence_picks_largest(self):
        state = make_state({0: 0.2, 1: 0.9, 2: 0.5, 3: 0.7})
        assert select_confidence(state, 2) == [1, 3]

    def test_ties_break_toward_lower_position(self):
        state = make_state({5: 0.5, 2: 0.5, 8: 0.5})
        assert select_confidence(state, 2) == [2, 5]

    def test_k_larger_than_mask_returns_everything(self):
        state = make_state({0: 0.2, 1: 0.9})
        assert sorted(select_confidence(state, 10)) == [0, 1]

    def test_k_must_be_positive(self):
        state = make_state({0: 0.2})
        for fn in (select_confidence, select_margin, select_entropy):
            with pytest.raises(ValueError):
                fn(state, 0)

    def test_margin_policy_uses_top_two_gap(self):
        state = DecodingState(
            step_index=0,
            length=3,
            num_image_tokens=4,
            masked_positions=(0, 1, 2),
            candidates={
                0: CandidatePrediction(0, 0, confidence=0.6, margin=0.5, entropy_norm=0.5),
                1: CandidatePrediction(1, 0, confidence=0.9, margin=0.1, entropy_norm=0.5),
                2: CandidatePrediction(2, 0, confidence=0.7, margin=0.3, entropy_norm=0.5),
            },
        )
        assert select_margin(state, 2) == [0, 2]
        assert select_confidence(state, 2) == [1, 2]

    def test_entropy_policy_prefers_smallest(self):
        state = DecodingState(
            step_index=0,
            length=3,
            num_image_tokens=4,
            masked_positions=(0, 1, 2),
            candidates={
                0: CandidatePrediction(0, 0, confidence=0.5, margin=0.1, entropy_norm=0.9),
                1: CandidatePrediction(1, 0, confidence=0.5, margin=0.1, entropy_norm=0.2),
                2: CandidatePrediction(2, 0, confidence=0.5, margin=0.1, entropy_norm=0.5),
            },
        )
        assert select_entropy(state, 2) == [1, 2]


class TestWindow:
    def test_window_size_formula(self):
        assert window_size(192, 4, 2.0) == 8
        assert window_size(5, 4, 2.0) == 5      # capped by the mask
        assert window_size(7, 4, 1.0) == 4      # never below k
        assert window_size(100, 3, 1.7) == 6    # ceil(5.1)

    def test_build_window_orders_by_confidence(self):
        state = make_state({0: 0.2, 1: 0.9, 2: 0.5, 3: 0.7, 4: 0.1})
        window = build_window(state, 2, 2.0)
        assert window.positions == (1, 3, 2, 0)
        assert window.confidences == (0.9, 0.7, 0.5, 0.2)

    def test_invalid_arguments(self):
        state = make_state({0: 0.2})
        with pytest.raises(ValueError):
            build_window(state, 0, 2.0)
        with pytest.raises(ValueError):
            build_window(state, 1, 0.5)


class TestAttachSaliency:
    def test_missing_rows_become_non_visual(self):
        state = make_state({0: 0.9, 1: 0.8}, {0: [0.7, 0.1, 0.1, 0.1]}, n=4)
        window = attach_saliency(state, build_window(state, 2, 1.0), VrcdConfig())
        assert window.saliencies[0].is_visual
        assert not window.saliencies[1].is_visual
        assert np.all(window.saliencies[1].values == 0.0)

    def test_strict_mode_raises_on_missing(self):
        state = make_state({0: 0.9, 1: 0.8}, {0: [0.7, 0.1, 0.1, 0.1]}, n=4)
        config = VrcdConfig(strict_attention=True)
        with pytest.raises(MissingAttentionError):
            attach_saliency(state, build_window(state, 2, 1.0), config)

    def test_extraction_disabled_keeps_raw_rows(self):
        state = make_state({0: 0.9}, {0: [0.7, 0.1, 0.1, 0.1]}, n=4)
        config = VrcdConfig(saliency_extraction=False)
        window = attach_saliency(state, build_window(state, 1, 1.0), config)
        assert window.saliencies[0].values is state.candidates[0].attention


# the raw rows below are already distributions, so extraction is disabled
# and the overlap inputs equal the rows exactly
RANK_FIXTURE = dict(
    confidences={0: 0.6, 1: 0.5, 2: 0.3},
    attentions={
        0: [1.0, 0.0, 0.0, 0.0],
        1: [0.25, 0.75, 0.0, 0.0],
        2: [0.0, 1.0, 0.0, 0.0],
    },
)


class TestRedundancyScores:
    def config(self, **kw):
        kw.setdefault("saliency_extraction", False)
        kw.setdefault("window_scale", 1.5)
        return VrcdConfig(**kw)

    def scored_map(self, config):
        state = make_state(RANK_FIXTURE["confidences"], RANK_FIXTURE["attentions"], n=4)
        window = attach_saliency(state, build_window(state, 2, 1.5), config)
        return {c.position: c for c in compute_redundancy_scores(window, config)}

    def test_confidence_weighted_ranks(self):
        # overlaps: o(0,1)=0.5, o(1,2)=sqrt(0.75), o(0,2)=0
        # ranks:    2/3,        1,                 1/3
        scored = self.scored_map(self.config())
        assert scored[0].redundancy_score == pytest.approx(13 / 24, abs=1e-12)
        assert scored[1].redundancy_score == pytest.approx(7 / 9, abs=1e-12)
        assert scored[2].redundancy_score == pytest.approx(7 / 11, abs=1e-12)

    def test_uniform_average_ranks(self):
        scored = self.scored_map(self.config(aggregation="uniform_average"))
        assert scored[0].redundancy_score == pytest.approx(1 / 2, abs=1e-12)
        assert scored[1].redundancy_score == pytest.approx(5 / 6, abs=1e-12)
        assert scored[2].redundancy_score == pytest.approx(2 / 3, abs=1e-12)

    def test_commit_score_reweights_confidence(self):
        alpha = 1.5
        scored = self.scored_map(self.config(alpha=alpha))
        for p, c in RANK_FIXTURE["confidences"].items():
            want = c * (scored[p].redundancy_score + 1.0) ** -alpha
            assert scored[p].commit_score == pytest.approx(want, abs=1e-12)

    def test_requires_attached_saliency(self):
        window = CandidateWindow(positions=(0,), confidences=(0.5,))
        with pytest.raises(ValueError):
            compute_redundancy_scores(window, VrcdConfig())

    def test_lone_visual_candidate_scores_zero(self):
        state = make_state({0: 0.9, 1: 0.8}, {0: [0.7, 0.1, 0.1, 0.1]}, n=4)
        config = VrcdConfig()
        window = attach_saliency(state, build_window(state, 2, 1.0), config)
        scored = {c.position: c for c in compute_redundancy_scores(window, config)}
        assert scored[0].redundancy_score == 0.0
        assert scored[0].commit_score == scored[0].confidence
        assert scored[1].redundancy_score == 0.0

    def test_zero_weight_neighbors_fall_back_to_zero(self):
        state = make_state(
            {0: 0.5, 1: 0.0, 2: 0.0},
            {p: [0.7, 0.1, 0.1, 0.1] for p in range(3)},
            n=4,
        )
        weighted = VrcdConfig(window_scale=1.5)
        window = attach_saliency(state, build_window(state, 2, 1.5), weighted)
        scored = {c.position: c for c in compute_redundancy_scores(window, weighted)}
        assert scored[0].redundancy_score == 0.0  # neighbor mass is zero
        uniform = VrcdConfig(window_scale=1.5, aggregation="uniform_average")
        scored = {c.position: c for c in compute_redundancy_scores(window, uniform)}
        assert scored[0].redundancy_score == 1.0  # identical rows all rank 1


class TestSelectVrcd:
    def test_redundant_pair_is_split(self):
        # two near-tied positions share a saliency footprint; a strong
        # penalty exponent displaces the weaker twin in favor of the
        # visually distinct third candidate
        state = make_state(
            {0: 0.9, 1: 0.89, 2: 0.85},
            {
                0: [0.5, 0.5, 0.0, 0.0],
                1: [0.5, 0.5, 0.0, 0.0],
                2: [0.0, 0.0, 0.5, 0.5],
            },
            n=4,
        )
        config = VrcdConfig(alpha=3.0, window_scale=1.5, saliency_extraction=False)
        assert set(select_vrcd(state, 2, config)) == {0, 2}
        assert select_confidence(state, 2) == [0, 1]
        # alpha 0 turns the policy off entirely
        off = VrcdConfig(alpha=0.0, window_scale=1.5, saliency_extraction=False)
        assert select_vrcd(state, 2, off) == [0, 1]

    def test_alpha_zero_equals_confidence_on_random_states(self, rng):
        config = VrcdConfig(alpha=0.0)
        for _ in range(50):
            state = random_small_state(rng)
            k = int(rng.integers(1, 5))
            assert select_vrcd(state, k, config) == select_confidence(state, k)

    def test_selection_contract(self, rng):
        config = VrcdConfig()
        for _ in range(50):
            state = random_small_state(rng)
            k = int(rng.integers(1, 8))
            chosen = select_vrcd(state, k, config)
            assert len(chosen) == min(k, state.masked_count)
            assert len(set(chosen)) == len(chosen)
            assert set(chosen) <= set(state.masked_positions)

    def test_agrees_with_reference_pipeline(self, rng):
        for _ in range(300):
            state = random_small_state(rng)
            k = int(rng.integers(1, 5))
            alpha = float(rng.choice([0.0, 0.7, 1.5, 3.0]))
            scale = float(rng.choice([1.0, 1.5, 2.0]))
            agg = ["confidence_weighted", "uniform_average"][int(rng.integers(2))]
            vse = bool(rng.integers(2))
            config = VrcdConfig(
                alpha=alpha,
                window_scale=scale,
                aggregation=agg,
                saliency_extraction=vse,
            )
            assert select_vrcd(state, k, config) == ref_vrcd_select(
                state, k, alpha, scale, agg, vse
            )


class TestFullWindowVariant:
    def build(self, config):
        state = make_state(
            {0: 0.9, 1: 0.8, 2: 0.7},
            {
                0: [0.7, 0.1, 0.1, 0.1],
                1: [0.7, 0.1, 0.1, 0.1],
                2: [0.25, 0.25, 0.25, 0.25],  # uniform: no saliency
            },
            n=4,
        )
        window = attach_saliency(state, build_window(state, 2, 1.5), config)
        return {c.position: c for c in compute_redundancy_scores(window, config)}

    def test_non_visual_candidates_usually_skip_ranking(self):
        scored = self.build(VrcdConfig(window_scale=1.5))
        assert scored[2].redundancy_score == 0.0

    def test_debug_variant_keeps_them_in_the_pool(self):
        scored = self.build(VrcdConfig(window_scale=1.5, rank_full_window=True))
        # zero-overlap pairs rank 2/3 of the three pairs, so the uniform
        # candidate now carries a nonzero redundancy score
        assert scored[2].redundancy_score == pytest.approx(2 / 3, abs=1e-12)


class TestPolicyObjects:
    def test_registry(self):
        for name in ("confidence", "margin", "entropy", "vrcd"):
            assert make_policy(name).name == name
        with pytest.raises(ValueError):
            make_policy("nope")

    def test_vrcd_policy_carries_config(self):
        policy = make_policy("vrcd", VrcdConfig(alpha=2.0))
        assert isinstance(policy, VrcdPolicy)
        assert policy.config.alpha == 2.0
        assert "VrcdPolicy" in repr(policy)

    def test_policies_select_through_common_interface(self):
        state = make_state({0: 0.2, 1: 0.9, 2: 0.5})
        assert make_policy("confidence").select(state, 1) == [1]
        assert make_policy("vrcd").select(state, 1) == [1]


class TestConfigValidation:
    def test_bad_values_rejected(self):
        with pytest.raises(ValueError):
            VrcdConfig(alpha=-0.1)
        with pytest.raises(ValueError):
            VrcdConfig(window_scale=0.9)
        with pytest.raises(ValueError):
            VrcdConfig(aggregation="median")


def test_reference_top_positions_matches_library(rng):
    # the reference sorter and _top_positions must agree on ties
    state = make_state({5: 0.5, 2: 0.5, 8: 0.5, 1: 0.4})
    scored = [(p, state.candidates[p].confidence) for p in state.masked_positions]
    assert select_confidence(state, 3) == ref_top_positions(scored, 3)
