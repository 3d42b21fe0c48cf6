import json

import numpy as np
import pytest

from vrcd_capture import (
    CaptureConfig,
    CaptureConfigError,
    CaptureError,
    TinyMaskedPredictor,
    capture,
    commit_sizes,
    fmt_float,
    read_trace,
)
from vrcd_capture.cli import main as capture_main


def run_capture(tmp_path, model=None, **overrides):
    model = model or TinyMaskedPredictor(seed=7)
    fields = dict(model=model, forward_ratio=0.25, output_path=tmp_path / "t.jsonl")
    fields.update(overrides)
    return capture(CaptureConfig(**fields))


class TestSchedule:
    def test_even_split(self):
        assert commit_sizes(16, 0.25) == [4, 4, 4, 4]

    def test_remainder_on_last_step(self):
        assert commit_sizes(10, 0.25) == [4, 4, 2]
        assert commit_sizes(3, 0.5) == [2, 1]

    def test_one_at_a_time(self):
        assert commit_sizes(4, 1.0) == [1, 1, 1, 1]


class TestCaptureRun:
    def test_four_steps_partition_every_position(self, tmp_path):
        result = run_capture(tmp_path)
        assert len(result.steps) == 4
        committed = [p for commit in result.commits for p in commit]
        assert sorted(committed) == list(range(16))

    def test_default_window_is_2_5x_commit_size(self, tmp_path):
        result = run_capture(tmp_path)
        assert result.header.attention_window == 10  # ceil(2.5 * 4)

    def test_masked_sets_shrink_by_commits(self, tmp_path):
        result = run_capture(tmp_path)
        for before, after in zip(result.steps, result.steps[1:]):
            expected = set(before.masked_positions) - set(before.committed_positions)
            assert set(after.masked_positions) == expected

    def test_commits_are_most_confident(self, tmp_path):
        result = run_capture(tmp_path)
        for step in result.steps:
            ranked = sorted(
                step.candidates, key=lambda c: (-c.confidence, c.position)
            )
            expected = {c.position for c in ranked[: step.commit_size]}
            assert set(step.committed_positions) == expected

    def test_attention_kept_for_top_window_only(self, tmp_path):
        result = run_capture(tmp_path, attention_window=10)
        step = result.steps[0]
        ranked = sorted(step.candidates, key=lambda c: (-c.confidence, c.position))
        with_rows = {c.position for c in step.candidates if c.attention_sparse}
        assert with_rows == {c.position for c in ranked[:10]}
        assert len(step.candidates) == 16

    def test_written_file_parses_back(self, tmp_path):
        result = run_capture(tmp_path)
        header, steps = read_trace(result.path)
        assert header.source == "captured"
        assert [s.committed_positions for s in steps] == [
            list(c) for c in result.commits
        ]

    def test_serialized_values_match_model_outputs(self, tmp_path):
        model = TinyMaskedPredictor(seed=7)
        result = run_capture(tmp_path, model=model)
        batch = TinyMaskedPredictor(seed=7).predict({})
        for candidate in result.steps[0].candidates:
            probs = batch.token_probs[candidate.position]
            assert candidate.confidence == fmt_float(float(probs.max()))
            assert candidate.token == int(np.argmax(probs))
            for token, p in candidate.top_probs:
                assert p == fmt_float(float(probs[token]))

    def test_conditioning_note_lands_in_header(self, tmp_path):
        result = run_capture(tmp_path, conditioning_note="cap test")
        obj = json.loads(result.path.read_text().splitlines()[0])
        assert obj["conditioning_note"] == "cap test"


class TestRefusals:
    def test_window_below_commit_size_refused_at_config_time(self, tmp_path):
        with pytest.raises(CaptureConfigError, match="commit size"):
            CaptureConfig(
                model=TinyMaskedPredictor(seed=7),
                forward_ratio=0.25,
                output_path=tmp_path / "t.jsonl",
                attention_window=3,
            )

    def test_model_without_attention_refused(self, tmp_path):
        model = TinyMaskedPredictor(seed=7, expose_attention=False)
        with pytest.raises(CaptureError, match="attention"):
            run_capture(tmp_path, model=model)

    def test_unsupported_attention_source(self, tmp_path):
        with pytest.raises(CaptureConfigError, match="attention source"):
            run_capture(tmp_path, attention_source="first_layer")

    def test_length_mismatch(self, tmp_path):
        with pytest.raises(CaptureConfigError, match="length"):
            run_capture(tmp_path, length=32)

    def test_model_missing_interface(self, tmp_path):
        with pytest.raises(CaptureConfigError, match="does not define"):
            run_capture(tmp_path, model=object())

    @pytest.mark.parametrize("fr", [0.0, -0.5, 1.5])
    def test_bad_forward_ratio(self, tmp_path, fr):
        with pytest.raises(CaptureConfigError, match="forward_ratio"):
            run_capture(tmp_path, forward_ratio=fr)


class TestCli:
    def test_writes_trace(self, tmp_path, capsys):
        out = tmp_path / "cli.jsonl"
        assert capture_main(["--out", str(out), "--seed", "3"]) == 0
        assert "4-step trace" in capsys.readouterr().out
        header, steps = read_trace(out)
        assert header.run_id == "tiny-capture"
        assert len(steps) == 4

    def test_window_flag_refusal_exits_nonzero(self, tmp_path, capsys):
        out = tmp_path / "cli.jsonl"
        code = capture_main(["--out", str(out), "--window", "2"])
        assert code == 2
        assert "commit size" in capsys.readouterr().err

    def test_unwritable_output(self, tmp_path, capsys):
        code = capture_main(["--out", str(tmp_path / "no" / "dir" / "t.jsonl")])
        assert code == 1
        assert capsys.readouterr().err
