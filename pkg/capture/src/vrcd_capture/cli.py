"""Command line front end: capture a trace from the bundled tiny model."""

from __future__ import annotations

import argparse
import sys
from typing import Sequence

from .capture import CaptureConfig, CaptureError, capture
from .model import TinyMaskedPredictor


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vrcd-capture",
        description="Record a decoding trace from a tiny random predictor.",
    )
    parser.add_argument("--length", type=int, default=16)
    parser.add_argument("--image-tokens", type=int, default=16)
    parser.add_argument("--vocab", type=int, default=50)
    parser.add_argument("--fr", type=float, default=0.25,
                        help="forward ratio; commit size is about 1/fr")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--window", type=int, default=None,
                        help="attention rows kept per step (default: 2.5x commit size)")
    parser.add_argument("--run-id", default="tiny-capture")
    parser.add_argument("--note", default="", help="free-form conditioning note")
    parser.add_argument("--out", required=True, help="trace output path")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    model = TinyMaskedPredictor(
        length=args.length,
        num_image_tokens=args.image_tokens,
        vocab_size=args.vocab,
        seed=args.seed,
    )
    try:
        result = capture(
            CaptureConfig(
                model=model,
                forward_ratio=args.fr,
                output_path=args.out,
                attention_window=args.window,
                run_id=args.run_id,
                conditioning_note=args.note,
            )
        )
    except CaptureError as exc:
        print(f"capture error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {len(result.steps)}-step trace to {result.path}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
