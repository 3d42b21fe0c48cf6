"""Seeded experiment grids over the synthetic corpus.

The planted corpus constants below are the documented settings under
which redundancy control measurably changes decoding: overlap pressure
(beta) at or above 0.9 floods the top of the confidence ranking with one
region's candidates, region noise (epsilon) at 0.1 keeps cross-region
attention overlap low, and a small coverage boost (delta) rewards commits
that touch new regions.  Setting beta to 0 is the negative control: the
rank-stratified assignment then guarantees every selection window has
pairwise-disjoint saliency, so all policies select identically and paired
differences vanish rather than merely shrink.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Sequence

from .engine import DecodingRun, EngineOptions, run_decoding
from .metrics import RunAggregate, StepMetrics, aggregate
from .oracle import OracleConfig, SyntheticOracle
from .policies import VrcdConfig, make_policy
from .schedule import make_uniform_schedule

WORKERS_ENV = "VRCD_WORKERS"

CORPUS_LENGTH = 192
CORPUS_FORWARD_RATIO = 0.25
CORPUS_IMAGE_TOKENS = 96
CORPUS_VOCAB_SIZE = 1000
CORPUS_REGIONS = 48
CORPUS_REGION_NOISE = 0.1
CORPUS_OVERLAP_PRESSURE = 0.9
CORPUS_COVERAGE_BOOST = 0.001


def corpus_config(
    seed: int,
    overlap_pressure: float = CORPUS_OVERLAP_PRESSURE,
    coverage_boost: float = CORPUS_COVERAGE_BOOST,
    length: int = CORPUS_LENGTH,
) -> OracleConfig:
    """The documented planted-redundancy oracle settings for one seed."""
    return OracleConfig(
        length=length,
        num_image_tokens=CORPUS_IMAGE_TOKENS,
        vocab_size=CORPUS_VOCAB_SIZE,
        num_regions=CORPUS_REGIONS,
        region_noise=CORPUS_REGION_NOISE,
        overlap_pressure=overlap_pressure,
        coverage_boost=coverage_boost,
        seed=seed,
    )


@dataclass(frozen=True)
class RunSpec:
    """Everything needed to reproduce one seeded decoding run."""

    oracle: OracleConfig
    forward_ratio: float = CORPUS_FORWARD_RATIO
    policy: str = "confidence"
    alpha: float = 1.5
    window_scale: float = 2.0
    aggregation: str = "confidence_weighted"
    saliency_extraction: bool = True
    strict_attention: bool = False
    compute_shadow: bool = True


def execute_run(spec: RunSpec) -> DecodingRun:
    schedule = make_uniform_schedule(spec.oracle.length, spec.forward_ratio)
    config = VrcdConfig(
        alpha=spec.alpha,
        window_scale=spec.window_scale,
        aggregation=spec.aggregation,
        saliency_extraction=spec.saliency_extraction,
        strict_attention=spec.strict_attention,
    )
    policy = make_policy(spec.policy, config)
    source = SyntheticOracle(spec.oracle)
    options = EngineOptions(compute_shadow=spec.compute_shadow)
    return run_decoding(source, policy, schedule, options)


def worker_count() -> int:
    raw = os.environ.get(WORKERS_ENV, "").strip()
    if not raw:
        return 1
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def execute_runs(specs: Sequence[RunSpec], workers: int | None = None) -> list[DecodingRun]:
    """Run a grid of specs, forking workers only when asked to."""
    n = worker_count() if workers is None else max(1, workers)
    if n > 1 and len(specs) > 1:
        chunk = max(1, len(specs) // (n * 4))
        with ProcessPoolExecutor(max_workers=n) as pool:
            return list(pool.map(execute_run, specs, chunksize=chunk))
    return [execute_run(s) for s in specs]


@dataclass(frozen=True)
class SignTestResult:
    """One-sided paired sign test: are positive differences overrepresented?

    Zero differences are ties and drop out of the binomial; p_value is
    P(X >= n_positive) for X ~ Binomial(n_positive + n_negative, 1/2).
    """

    n_positive: int
    n_negative: int
    n_zero: int
    p_value: float


def sign_test_one_sided(deltas: Sequence[float]) -> SignTestResult:
    pos = sum(1 for d in deltas if d > 0)
    neg = sum(1 for d in deltas if d < 0)
    zero = len(deltas) - pos - neg
    m = pos + neg
    if m == 0:
        return SignTestResult(pos, neg, zero, 1.0)
    tail = sum(math.comb(m, k) for k in range(pos, m + 1))
    return SignTestResult(pos, neg, zero, tail / 2.0**m)


def run_mean_vri(run: DecodingRun) -> float:
    return sum(sm.vri for sm in run.steps) / len(run.steps)


@dataclass(frozen=True)
class PairedComparison:
    """Per-seed paired runs of one policy against the confidence baseline."""

    seeds: tuple[int, ...]
    policy_runs: tuple[DecodingRun, ...]
    baseline_runs: tuple[DecodingRun, ...]

    @property
    def vri_deltas(self) -> tuple[float, ...]:
        """Baseline mean VRI minus policy mean VRI, one value per seed."""
        return tuple(
            run_mean_vri(b) - run_mean_vri(p)
            for b, p in zip(self.baseline_runs, self.policy_runs)
        )

    def sign_test(self) -> SignTestResult:
        return sign_test_one_sided(self.vri_deltas)

    def policy_aggregate(self) -> RunAggregate:
        return aggregate([run.steps for run in self.policy_runs])

    def baseline_aggregate(self) -> RunAggregate:
        return aggregate([run.steps for run in self.baseline_runs])


def compare_to_confidence(
    seeds: Sequence[int],
    policy: str = "vrcd",
    alpha: float = 1.5,
    window_scale: float = 2.0,
    aggregation: str = "confidence_weighted",
    saliency_extraction: bool = True,
    overlap_pressure: float = CORPUS_OVERLAP_PRESSURE,
    coverage_boost: float = CORPUS_COVERAGE_BOOST,
    length: int = CORPUS_LENGTH,
    forward_ratio: float = CORPUS_FORWARD_RATIO,
    workers: int | None = None,
) -> PairedComparison:
    """Run the policy and the confidence baseline on identical seeds."""
    base = RunSpec(
        oracle=corpus_config(0, overlap_pressure, coverage_boost, length),
        forward_ratio=forward_ratio,
        policy=policy,
        alpha=alpha,
        window_scale=window_scale,
        aggregation=aggregation,
        saliency_extraction=saliency_extraction,
    )
    policy_specs = [
        replace(base, oracle=replace(base.oracle, seed=s)) for s in seeds
    ]
    baseline_specs = [replace(spec, policy="confidence") for spec in policy_specs]
    runs = execute_runs(list(policy_specs) + list(baseline_specs), workers)
    k = len(seeds)
    return PairedComparison(
        seeds=tuple(seeds),
        policy_runs=tuple(runs[:k]),
        baseline_runs=tuple(runs[k:]),
    )


def curve_comparison(
    policy_curve: Sequence[tuple[int, float]],
    baseline_curve: Sequence[tuple[int, float]],
    tolerance: float = 0.0,
) -> tuple[int, int]:
    """How many shared step indices have the policy curve at or below baseline.

    Returns (at_or_below, total_shared)."""
    base = dict(baseline_curve)
    shared = [(t, v) for t, v in policy_curve if t in base]
    at_or_below = sum(1 for t, v in shared if v <= base[t] + tolerance)
    return at_or_below, len(shared)


def shadow_vri_curve(runs: Sequence[DecodingRun]) -> tuple[tuple[int, float], ...]:
    """Per-step mean of (shadow confidence VRI minus policy VRI)."""
    by_step: dict[int, list[float]] = {}
    for run in runs:
        for sm in run.steps:
            if sm.shadow_vri is not None:
                by_step.setdefault(sm.step_index, []).append(sm.shadow_vri - sm.vri)
    return tuple(
        (t, sum(vals) / len(vals)) for t, vals in sorted(by_step.items())
    )


def collect_steps(runs: Sequence[DecodingRun]) -> list[StepMetrics]:
    return [sm for run in runs for sm in run.steps]
