"""Command-line interface: augment, features, stats, analyze, loss.

Exit codes: 0 success, 1 partial failure (some utterances failed), 2
invalid input.
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .f0loss import LossConfig, ResolutionSpec, loss_per_resolution, multires_f0_loss
from .pipeline import (
    AugmentationPlan,
    ManifestError,
    analyze_f0_distribution,
    augment_corpus,
    extract_corpus_features,
    load_plan,
    run_stats,
    validate_manifest,
)

EXIT_OK = 0
EXIT_PARTIAL = 1
EXIT_INVALID = 2

BINARY_SUFFIXES = (".bin", ".f32", ".raw")


def _read_sequence(path: Path, fmt: str) -> np.ndarray:
    if fmt == "auto":
        fmt = "binary" if path.suffix in BINARY_SUFFIXES else "text"
    if fmt == "binary":
        return np.frombuffer(path.read_bytes(), dtype="<f4").astype(np.float64)
    values = [float(line) for line in path.read_text().split()]
    return np.asarray(values, dtype=np.float64)


def _loss_config(path: Path | None) -> LossConfig:
    if path is None:
        return LossConfig()
    raw = json.loads(path.read_text())
    kwargs = {}
    if "beta" in raw:
        kwargs["beta"] = int(raw["beta"])
    if "weight" in raw:
        kwargs["weight"] = float(raw["weight"])
    if "magnitude_floor" in raw:
        kwargs["magnitude_floor"] = float(raw["magnitude_floor"])
    if "resolutions" in raw:
        kwargs["resolutions"] = tuple(
            ResolutionSpec(
                fft_size=int(r["fft_size"]),
                window_size=int(r["window_size"]),
                hop_size=int(r["hop_size"]),
            )
            for r in raw["resolutions"]
        )
    return LossConfig(**kwargs)


def _cmd_augment(args) -> int:
    manifest = validate_manifest(args.manifest)
    plan = load_plan(args.plan) if args.plan else AugmentationPlan()
    summary = augment_corpus(
        manifest, plan, args.out, workers=args.workers, resample=args.resample
    )
    print(
        f"augment: {summary.n_written} written, {summary.n_skipped} skipped, "
        f"{len(summary.failures)} failed"
    )
    for failure in summary.failures:
        print(f"  FAILED {failure['utterance_id']}: {failure['error']}", file=sys.stderr)
    return EXIT_OK if summary.ok else EXIT_PARTIAL


def _cmd_features(args) -> int:
    manifest = validate_manifest(args.manifest)
    plan = load_plan(args.plan) if args.plan else AugmentationPlan()
    summary = extract_corpus_features(
        manifest, plan, args.out,
        workers=args.workers, resample=args.resample, split=args.split,
    )
    print(
        f"features: {summary.n_written} written, {summary.n_skipped} skipped, "
        f"{len(summary.failures)} failed"
    )
    for failure in summary.failures:
        print(f"  FAILED {failure['utterance_id']}: {failure['error']}", file=sys.stderr)
    return EXIT_OK if summary.ok else EXIT_PARTIAL


def _cmd_stats(args) -> int:
    manifest = validate_manifest(args.manifest)
    stats = run_stats(
        manifest, args.features, out_path=args.out,
        include_augmented=not args.originals_only,
    )
    print(f"stats: {stats.frame_count} frames over {stats.mean.size} dimensions -> {args.out}")
    return EXIT_OK


def _cmd_analyze(args) -> int:
    datasets = {}
    for spec in args.dataset:
        label, _, directory = spec.partition("=")
        if not label or not directory:
            raise ValueError(f"--dataset expects label=DIR, got {spec!r}")
        datasets[label] = directory
    report = analyze_f0_distribution(datasets, out_dir=args.out)
    for g in report.groups:
        if g.style == "__all__":
            print(
                f"analyze[{g.label}]: {g.n_voiced} voiced frames, "
                f"mean {g.mean:.2f} Hz, std {g.std:.2f} Hz"
            )
    return EXIT_OK


def _cmd_loss(args) -> int:
    cfg = _loss_config(Path(args.config) if args.config else None)
    a = _read_sequence(Path(args.reference), args.format)
    b = _read_sequence(Path(args.predicted), args.format)
    payload = {"loss": multires_f0_loss(a, b, cfg)}
    if args.per_resolution:
        payload["per_resolution"] = [
            {
                "fft_size": res.fft_size,
                "window_size": res.window_size,
                "hop_size": res.hop_size,
                "loss": value,
            }
            for res, value in zip(cfg.resolutions, loss_per_resolution(a, b, cfg))
        ]
    print(json.dumps(payload, indent=2, sort_keys=True))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="psforge",
        description="Pitch-shift data augmentation for speech features.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("augment", help="run the semitone sweep over a corpus")
    p.add_argument("--manifest", required=True)
    p.add_argument("--plan", default=None, help="plan JSON (defaults when omitted)")
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--resample", action="store_true",
                   help="linearly resample WAVs at other rates")
    p.set_defaults(func=_cmd_augment)

    p = sub.add_parser("features", help="extract original features only")
    p.add_argument("--manifest", required=True)
    p.add_argument("--plan", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="all", choices=["all", "train", "dev", "eval"])
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--resample", action="store_true")
    p.set_defaults(func=_cmd_features)

    p = sub.add_parser("stats", help="normalization statistics over the train split")
    p.add_argument("--manifest", required=True)
    p.add_argument("--features", required=True, help="feature directory")
    p.add_argument("--out", required=True, help="output stats JSON")
    p.add_argument("--originals-only", action="store_true")
    p.set_defaults(func=_cmd_stats)

    p = sub.add_parser("analyze", help="F0 distribution report over feature dirs")
    p.add_argument("--dataset", action="append", required=True, metavar="LABEL=DIR")
    p.add_argument("--out", required=True, help="report directory")
    p.set_defaults(func=_cmd_analyze)

    p = sub.add_parser("loss", help="multi-resolution F0 loss between two sequences")
    p.add_argument("reference", help="reference sequence file")
    p.add_argument("predicted", help="predicted sequence file")
    p.add_argument("--config", default=None, help="loss config JSON")
    p.add_argument("--per-resolution", action="store_true")
    p.add_argument("--format", default="auto", choices=["auto", "text", "binary"],
                   help="sequence file format (auto: binary for "
                        + "/".join(BINARY_SUFFIXES) + ", else one float per line)")
    p.set_defaults(func=_cmd_loss)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ManifestError, ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


def entrypoint():
    raise SystemExit(main())


if __name__ == "__main__":
    entrypoint()
