"""Command-line front end: run, replay, compare, validate, bench.

Every numeric output lands in CSV with a schema_version column so
downstream plotting can detect layout changes; absent values are written
as empty cells.  All randomness is controlled by explicit seed flags and
the VRCD_WORKERS environment variable selects process parallelism.
"""

from __future__ import annotations

import argparse
import csv
import logging
import statistics
import sys
from dataclasses import replace
from pathlib import Path

from . import experiments, metrics, trace_io
from .engine import EngineOptions
from .policies import VrcdConfig, make_policy
from .schedule import make_uniform_schedule

CSV_SCHEMA_VERSION = 1

RUN_SUMMARY_FIELDS = [
    "schema_version",
    "policy",
    "alpha",
    "window_scale",
    "aggregation",
    "saliency_extraction",
    "length",
    "forward_ratio",
    "overlap_pressure",
    "coverage_boost",
    "seed_count",
    "mean_vri_micro",
    "mean_vri_macro",
    "mean_change_count",
    "change_rate",
    "analyzed_steps",
    "overhead_ratio",
]

RUN_CURVE_FIELDS = [
    "schema_version",
    "policy",
    "alpha",
    "step",
    "mean_vri",
    "mean_remaining_entropy",
]

COMPARE_SUMMARY_FIELDS = [
    "schema_version",
    "policy",
    "alpha",
    "window_scale",
    "aggregation",
    "seed_count",
    "mean_vri_policy",
    "mean_vri_shadow_confidence",
    "mean_change_count",
    "change_rate",
    "analyzed_steps",
]

COMPARE_STEP_FIELDS = [
    "schema_version",
    "step",
    "mean_vri_policy",
    "mean_vri_shadow_confidence",
    "mean_vri_delta",
    "mean_position_changes",
]

BENCH_FIELDS = [
    "schema_version",
    "kind",
    "window_size",
    "image_tokens",
    "median_seconds",
    "overhead_ratio",
]


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return f"{value:.9g}"
    return str(value)


def _write_csv(path: Path, fields: list[str], rows: list[dict]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(fields)
        for row in rows:
            writer.writerow([_fmt(row.get(f)) for f in fields])


def _resolve_seeds(args: argparse.Namespace) -> list[int]:
    if args.seed_list:
        return list(args.seed_list)
    return list(range(args.seed_base, args.seed_base + args.seeds))


def _aggregation_mode(name: str) -> str:
    return {"weighted": "confidence_weighted", "average": "uniform_average"}[name]


def _policy_config(args: argparse.Namespace, alpha: float) -> VrcdConfig:
    return VrcdConfig(
        alpha=alpha,
        window_scale=args.window_scale,
        aggregation=_aggregation_mode(args.aggregation),
        saliency_extraction=not args.no_vse,
        strict_attention=args.strict_attention,
    )


def _add_policy_flags(parser: argparse.ArgumentParser, sweep_alpha: bool) -> None:
    parser.add_argument(
        "--policy",
        choices=("confidence", "margin", "entropy", "vrcd"),
        default="confidence",
        help="selection policy (default: confidence)",
    )
    if sweep_alpha:
        parser.add_argument(
            "--alpha", type=float, nargs="+", default=[1.5],
            help="redundancy exponent; several values run a sweep",
        )
    else:
        parser.add_argument("--alpha", type=float, default=1.5)
    parser.add_argument(
        "--lambda", dest="window_scale", type=float, default=2.0,
        help="candidate window multiplier on the commit size",
    )
    parser.add_argument(
        "--aggregation", choices=("weighted", "average"), default="weighted",
        help="neighbor rank aggregation: confidence weighted or plain average",
    )
    parser.add_argument(
        "--no-vse", action="store_true",
        help="rank raw attention rows instead of extracted saliency",
    )
    parser.add_argument(
        "--strict-attention", action="store_true",
        help="fail instead of degrading when window candidates lack attention",
    )


def _add_seed_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--seeds", "-n", type=int, default=10,
        help="number of seeds, starting at --seed-base (default: 10)",
    )
    parser.add_argument("--seed-base", type=int, default=0)
    parser.add_argument(
        "--seed-list", type=int, nargs="+", default=None,
        help="explicit seeds; overrides --seeds/--seed-base",
    )


def _add_corpus_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--length", type=int, default=experiments.CORPUS_LENGTH)
    parser.add_argument("--fr", type=float, default=experiments.CORPUS_FORWARD_RATIO,
                        help="forward ratio; commit size is about 1/fr")
    parser.add_argument("--beta", type=float, default=experiments.CORPUS_OVERLAP_PRESSURE,
                        help="overlap pressure planted in the oracle")
    parser.add_argument("--delta", type=float, default=experiments.CORPUS_COVERAGE_BOOST,
                        help="per-new-region confidence boost in the oracle")


def cmd_run(args: argparse.Namespace) -> int:
    seeds = _resolve_seeds(args)
    alphas = args.alpha if args.policy == "vrcd" else [args.alpha[0]]
    out = Path(args.out)
    curves_path = Path(args.curves) if args.curves else out.with_name(out.stem + "_curves.csv")

    summary_rows = []
    curve_rows = []
    for alpha in alphas:
        base = experiments.RunSpec(
            oracle=experiments.corpus_config(0, args.beta, args.delta, args.length),
            forward_ratio=args.fr,
            policy=args.policy,
            alpha=alpha,
            window_scale=args.window_scale,
            aggregation=_aggregation_mode(args.aggregation),
            saliency_extraction=not args.no_vse,
            strict_attention=args.strict_attention,
        )
        specs = [replace(base, oracle=replace(base.oracle, seed=s)) for s in seeds]
        runs = experiments.execute_runs(specs)
        agg = metrics.aggregate([r.steps for r in runs])
        total = sum(r.total_seconds for r in runs)
        selection = sum(r.selection_seconds for r in runs)
        alpha_cell = alpha if args.policy == "vrcd" else None
        summary_rows.append({
            "schema_version": CSV_SCHEMA_VERSION,
            "policy": args.policy,
            "alpha": alpha_cell,
            "window_scale": args.window_scale if args.policy == "vrcd" else None,
            "aggregation": args.aggregation if args.policy == "vrcd" else None,
            "saliency_extraction": (not args.no_vse) if args.policy == "vrcd" else None,
            "length": args.length,
            "forward_ratio": args.fr,
            "overlap_pressure": args.beta,
            "coverage_boost": args.delta,
            "seed_count": len(seeds),
            "mean_vri_micro": agg.mean_vri_micro,
            "mean_vri_macro": agg.mean_vri_macro,
            "mean_change_count": agg.mean_change_count,
            "change_rate": agg.change_rate,
            "analyzed_steps": agg.analyzed_step_count,
            "overhead_ratio": selection / total if total > 0 else None,
        })
        entropy_by_step = dict(agg.entropy_curve)
        for step, mean_vri in agg.vri_curve:
            curve_rows.append({
                "schema_version": CSV_SCHEMA_VERSION,
                "policy": args.policy,
                "alpha": alpha_cell,
                "step": step,
                "mean_vri": mean_vri,
                "mean_remaining_entropy": entropy_by_step.get(step),
            })

    _write_csv(out, RUN_SUMMARY_FIELDS, summary_rows)
    _write_csv(curves_path, RUN_CURVE_FIELDS, curve_rows)
    for row in summary_rows:
        print(
            f"policy={row['policy']}"
            + (f" alpha={row['alpha']}" if row["alpha"] is not None else "")
            + f" mean_vri={row['mean_vri_micro']:.4f}"
            + (
                f" change_rate={row['change_rate']:.4f}"
                if row["change_rate"] is not None
                else ""
            )
        )
    print(f"wrote {out} and {curves_path}")
    return 0


def cmd_compare(args: argparse.Namespace) -> int:
    seeds = _resolve_seeds(args)
    base = experiments.RunSpec(
        oracle=experiments.corpus_config(0, args.beta, args.delta, args.length),
        forward_ratio=args.fr,
        policy=args.policy,
        alpha=args.alpha,
        window_scale=args.window_scale,
        aggregation=_aggregation_mode(args.aggregation),
        saliency_extraction=not args.no_vse,
        strict_attention=args.strict_attention,
        compute_shadow=True,
    )
    specs = [replace(base, oracle=replace(base.oracle, seed=s)) for s in seeds]
    runs = experiments.execute_runs(specs)
    agg = metrics.aggregate([r.steps for r in runs])

    by_step: dict[int, dict[str, list[float]]] = {}
    for run in runs:
        for sm in run.steps:
            bucket = by_step.setdefault(sm.step_index, {"vri": [], "shadow": [], "d": []})
            bucket["vri"].append(sm.vri)
            if sm.shadow_vri is not None:
                bucket["shadow"].append(sm.shadow_vri)
            if sm.position_change_count is not None:
                bucket["d"].append(sm.position_change_count)

    step_rows = []
    for step in sorted(by_step):
        bucket = by_step[step]
        mean_vri = statistics.fmean(bucket["vri"])
        mean_shadow = statistics.fmean(bucket["shadow"]) if bucket["shadow"] else None
        step_rows.append({
            "schema_version": CSV_SCHEMA_VERSION,
            "step": step,
            "mean_vri_policy": mean_vri,
            "mean_vri_shadow_confidence": mean_shadow,
            "mean_vri_delta": (mean_shadow - mean_vri) if mean_shadow is not None else None,
            "mean_position_changes": statistics.fmean(bucket["d"]) if bucket["d"] else None,
        })

    shadow_all = [sm.shadow_vri for r in runs for sm in r.steps if sm.shadow_vri is not None]
    summary = {
        "schema_version": CSV_SCHEMA_VERSION,
        "policy": args.policy,
        "alpha": args.alpha if args.policy == "vrcd" else None,
        "window_scale": args.window_scale if args.policy == "vrcd" else None,
        "aggregation": args.aggregation if args.policy == "vrcd" else None,
        "seed_count": len(seeds),
        "mean_vri_policy": agg.mean_vri_micro,
        "mean_vri_shadow_confidence": statistics.fmean(shadow_all) if shadow_all else None,
        "mean_change_count": agg.mean_change_count,
        "change_rate": agg.change_rate,
        "analyzed_steps": agg.analyzed_step_count,
    }
    out = Path(args.out)
    steps_path = Path(args.steps_out) if args.steps_out else out.with_name(out.stem + "_steps.csv")
    _write_csv(out, COMPARE_SUMMARY_FIELDS, [summary])
    _write_csv(steps_path, COMPARE_STEP_FIELDS, step_rows)
    rate = summary["change_rate"]
    print(
        f"policy={args.policy} vs shadow confidence: "
        f"mean_change_count={_fmt(summary['mean_change_count'])} "
        f"change_rate={_fmt(rate)} over {summary['analyzed_steps']} analyzed steps"
    )
    print(f"wrote {out} and {steps_path}")
    return 0


def cmd_replay(args: argparse.Namespace) -> int:
    header, steps = trace_io.read_trace(args.trace)
    source = trace_io.ReplaySource(header, steps, strict_attention_sum=args.strict_attention)
    schedule = make_uniform_schedule(header.length, header.forward_ratio)
    config = _policy_config(args, args.alpha)
    policy = make_policy(args.policy, config)
    run, states = trace_io.record_run(source, policy, schedule, EngineOptions())

    recorded = [s.committed_positions for s in steps if s.committed_positions is not None]
    if len(recorded) == len(run.commits):
        matches = sum(
            1
            for rec, commit in zip(recorded, run.commits)
            if set(rec) == set(commit.committed_positions)
        )
        print(f"committed sets match recorded trace at {matches}/{len(recorded)} steps")

    out_header = replace(
        header,
        run_id=f"{header.run_id}+replay-{args.policy}",
        conditioning_note=(
            header.conditioning_note + f" | replayed with policy={args.policy}"
        ).strip(" |"),
    )
    out_steps = trace_io.run_to_steps(states, run, attention_window=None)
    trace_io.write_trace(args.out, out_header, out_steps, dense=args.dense)
    agg = metrics.aggregate([run.steps])
    print(f"replayed {len(run.commits)} steps, mean_vri={agg.mean_vri_micro:.4f}")
    print(f"wrote {args.out}")
    return 0


def cmd_validate(args: argparse.Namespace) -> int:
    header, steps = trace_io.read_trace(args.trace)
    report = trace_io.validate_trace(header, steps)
    if report.ok:
        print(f"{args.trace}: {len(steps)} steps, no violations")
        return 0
    for violation in report.violations:
        print(f"violation: {violation}", file=sys.stderr)
    print(f"{args.trace}: {len(report.violations)} violations", file=sys.stderr)
    return 1


def cmd_bench(args: argparse.Namespace) -> int:
    rows = []
    pair_times = metrics.pair_stage_times(
        args.m_values, args.n_values, repeats=args.repeats
    )
    for n in args.n_values:
        for m in args.m_values:
            seconds = pair_times[(m, n)]
            rows.append({
                "schema_version": CSV_SCHEMA_VERSION,
                "kind": "pair_stage",
                "window_size": m,
                "image_tokens": n,
                "median_seconds": seconds,
                "overhead_ratio": None,
            })
            print(f"pair stage m={m} n={n}: {seconds * 1e6:.1f} us")

    states = [
        experiments.SyntheticOracle(
            experiments.corpus_config(seed, args.beta, args.delta, args.length)
        ).initial_state()
        for seed in range(args.overhead_seeds)
    ]
    k = max(1, round(1.0 / args.fr))
    report = metrics.selection_overhead(states, k=k, repeats=args.repeats)
    rows.append({
        "schema_version": CSV_SCHEMA_VERSION,
        "kind": "policy_overhead",
        "window_size": None,
        "image_tokens": None,
        "median_seconds": report.vrcd_seconds,
        "overhead_ratio": report.ratio,
    })
    print(
        f"selection overhead on {report.state_count} states: "
        f"{report.ratio:.1f}x confidence selection"
    )
    _write_csv(Path(args.out), BENCH_FIELDS, rows)
    print(f"wrote {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vrcd",
        description="Redundancy-controlled parallel unmasking: synthetic runs, "
        "trace replay, policy comparison, and benchmarks.",
    )
    parser.add_argument("--verbose", "-v", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="decode seeded synthetic runs and emit metric CSVs")
    _add_policy_flags(p_run, sweep_alpha=True)
    _add_seed_flags(p_run)
    _add_corpus_flags(p_run)
    p_run.add_argument("--out", required=True, help="summary CSV path")
    p_run.add_argument("--curves", default=None, help="per-step curve CSV path")
    p_run.set_defaults(func=cmd_run)

    p_cmp = sub.add_parser(
        "compare", help="one policy against the shadow confidence selection"
    )
    _add_policy_flags(p_cmp, sweep_alpha=False)
    _add_seed_flags(p_cmp)
    _add_corpus_flags(p_cmp)
    p_cmp.add_argument("--out", required=True, help="summary CSV path")
    p_cmp.add_argument("--steps-out", default=None, help="per-step CSV path")
    p_cmp.set_defaults(func=cmd_compare)

    p_rep = sub.add_parser("replay", help="re-decode a recorded trace under a policy")
    _add_policy_flags(p_rep, sweep_alpha=False)
    p_rep.add_argument("--trace", required=True, help="input trace path")
    p_rep.add_argument("--out", required=True, help="replayed trace path")
    p_rep.add_argument("--dense", action="store_true", help="store attention dense")
    p_rep.set_defaults(func=cmd_replay)

    p_val = sub.add_parser("validate", help="check a trace for contract violations")
    p_val.add_argument("--trace", required=True)
    p_val.set_defaults(func=cmd_validate)

    p_bench = sub.add_parser("bench", help="time the pair stage and policy overhead")
    p_bench.add_argument("--m-values", type=int, nargs="+", default=[64, 128])
    p_bench.add_argument("--n-values", type=int, nargs="+", default=[1024, 2048])
    p_bench.add_argument("--repeats", type=int, default=15)
    p_bench.add_argument("--overhead-seeds", type=int, default=3)
    _add_corpus_flags(p_bench)
    p_bench.add_argument("--out", required=True, help="benchmark CSV path")
    p_bench.set_defaults(func=cmd_bench)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except trace_io.TraceError as exc:
        print(f"trace error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
