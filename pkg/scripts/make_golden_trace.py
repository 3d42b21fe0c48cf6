#!/usr/bin/env python3
"""Regenerate the frozen wire-format fixture at tests/data/golden_trace.jsonl.

The fixture pins the serialization layer: tests fail if a format change
alters a single byte.  Bump the trace schema version and rerun this script
when a change is intentional.
"""

from __future__ import annotations

from pathlib import Path

from vrcd.engine import EngineOptions
from vrcd.oracle import OracleConfig, SyntheticOracle
from vrcd.policies import make_policy
from vrcd.schedule import make_uniform_schedule
from vrcd.trace_io import TraceHeader, record_run, run_to_steps, write_trace

OUT = Path(__file__).resolve().parent.parent / "tests" / "data" / "golden_trace.jsonl"


def main() -> None:
    config = OracleConfig(
        length=16, num_image_tokens=16, num_regions=4, vocab_size=50, seed=11
    )
    schedule = make_uniform_schedule(config.length, 0.25)
    run, states = record_run(
        SyntheticOracle(config),
        make_policy("confidence"),
        schedule,
        EngineOptions(),
    )
    header = TraceHeader(
        run_id="golden-16",
        length=16,
        num_image_tokens=16,
        vocab_size=50,
        forward_ratio=0.25,
        attention_window=10,
        conditioning_note="frozen fixture; regenerate via scripts/make_golden_trace.py",
    )
    steps = run_to_steps(states, run, attention_window=None)
    OUT.parent.mkdir(parents=True, exist_ok=True)
    write_trace(OUT, header, steps, dense=True)
    print(f"wrote {OUT}")


if __name__ == "__main__":
    main()
