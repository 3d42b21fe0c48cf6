import subprocess
import sys
from pathlib import Path

import pytest

from vrcd_capture import TinyMaskedPredictor

REPO_ROOT = Path(__file__).resolve().parents[2]


@pytest.fixture(scope="session")
def golden_path() -> Path:
    # fixture shared with the decoding-engine package: both sides must
    # agree on these bytes
    path = REPO_ROOT / "tests" / "data" / "golden_trace.jsonl"
    assert path.exists(), f"shared golden fixture missing: {path}"
    return path


@pytest.fixture(scope="session")
def run_vrcd():
    """Invoke the decoding-engine CLI in a subprocess; the capture package
    talks to it only through files and exit codes."""

    def run(*args: str) -> subprocess.CompletedProcess:
        return subprocess.run(
            [sys.executable, "-m", "vrcd.cli", *args],
            capture_output=True,
            text=True,
            timeout=120,
        )

    return run


@pytest.fixture()
def tiny_model() -> TinyMaskedPredictor:
    return TinyMaskedPredictor(seed=7)
