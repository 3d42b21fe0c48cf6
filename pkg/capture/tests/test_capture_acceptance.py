"""Acceptance gate for the capture adapter.

One end-to-end property: a trace captured from the tiny random predictor
must pass the decoding engine's validator with zero violations, and a
confidence-policy replay of it must commit exactly the positions that
were committed at capture time.  Both checks go through the engine's CLI
and files only, never its Python API.
"""

from time import perf_counter

from vrcd_capture import CaptureConfig, TinyMaskedPredictor, capture, read_trace


def report(name: str, ok: bool, detail: str = "") -> None:
    line = f"{'PASS' if ok else 'FAIL'}  {name}" + (f"  [{detail}]" if detail else "")
    print(line)
    assert ok, line


def test_captured_trace_validates_and_replays_exactly(tmp_path, run_vrcd):
    t0 = perf_counter()
    trace_path = tmp_path / "captured.jsonl"
    result = capture(
        CaptureConfig(
            model=TinyMaskedPredictor(seed=7),
            forward_ratio=0.25,
            output_path=trace_path,
            run_id="capture-acceptance",
        )
    )

    validated = run_vrcd("validate", "--trace", str(trace_path))
    clean = validated.returncode == 0 and "no violations" in validated.stdout

    replayed_path = tmp_path / "replayed.jsonl"
    replayed = run_vrcd(
        "replay",
        "--trace", str(trace_path),
        "--policy", "confidence",
        "--out", str(replayed_path),
    )
    _, replay_steps = read_trace(replayed_path)
    commits_equal = len(replay_steps) == len(result.steps) and all(
        set(step.committed_positions) == set(commit)
        for step, commit in zip(replay_steps, result.commits)
    )
    elapsed = perf_counter() - t0
    report(
        "capture validity and confidence replay",
        clean and replayed.returncode == 0 and commits_equal and elapsed < 60.0,
        f"{len(result.steps)} steps, validator clean={clean}, {elapsed:.1f}s",
    )
