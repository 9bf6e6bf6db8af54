"""Adapter entry point: ``train`` streams metrics, ``predict`` writes files."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .predict import predict_to_files
from .train import DEFAULT_MODEL, AdapterConfig, train_and_stream


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="trainer-adapter")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train and stream per-epoch metrics")
    p.add_argument("--manifest", required=True)
    p.add_argument("--model", default=DEFAULT_MODEL)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--image-size", type=int, default=640)
    p.add_argument("--run-dir", default=".", help="where STOP is polled and artifacts/ lives")
    p.add_argument("--batch-size", type=int, default=4)
    p.add_argument("--lr", type=float, default=0.005)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--device", default="cpu")

    p = sub.add_parser("predict", help="write one prediction file per image")
    p.add_argument("--weights", required=True)
    p.add_argument("--images", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--conf-floor", type=float, default=0.25)
    p.add_argument("--device", default="cpu")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "train":
        config = AdapterConfig(
            manifest_path=Path(args.manifest),
            model_name=args.model,
            epochs=args.epochs,
            image_size=args.image_size,
            run_dir=Path(args.run_dir),
            batch_size=args.batch_size,
            lr=args.lr,
            seed=args.seed,
            device=args.device,
        )
        try:
            return train_and_stream(config)
        except (FileNotFoundError, NotADirectoryError, ValueError) as e:
            print(f"[trainer-adapter] error: {e}", file=sys.stderr)
            return 2
    if args.command == "predict":
        return predict_to_files(
            Path(args.weights), Path(args.images), Path(args.output), args.conf_floor, args.device
        )
    return 1


if __name__ == "__main__":
    sys.exit(main())
