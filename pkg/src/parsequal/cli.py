"""Command-line front end.

Exit codes: 0 success, 1 data error (bad manifest, missing files,
inconsistent corpus), 2 usage error. All randomness flows from --seed; every
command is deterministic for fixed inputs and flags, independent of --jobs.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .dataset import load_manifest, read_scores_file, write_scores_file
from .errors import DataError
from .fusion import default_weight_grid
from .metrics import MatchThresholds
from .pipeline import (
    SWEEP_METRIC_KEYS,
    evaluate_manifest,
    format_sweep_table,
    score_manifest,
    sweep_manifest,
)
from .pixel_score import PixelScoreConfig
from .synth import CorruptionConfig, ScoreNoiseConfig, SynthConfig, write_corpus
from .types import QualityWeights


def _weights_arg(text: str) -> QualityWeights:
    try:
        parts = [float(v) for v in text.split(",")]
        if len(parts) != 3:
            raise ValueError("expected three comma-separated values")
        return QualityWeights(*parts)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"invalid weights {text!r}: {exc}") from exc


def _threshold_arg(text: str) -> float:
    try:
        value = float(text)
        PixelScoreConfig(threshold=value)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"invalid threshold {text!r}: {exc}") from exc
    return value


def _thresholds_arg(text: str) -> MatchThresholds:
    try:
        return MatchThresholds.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _int_pair(text: str) -> tuple[int, int]:
    try:
        parts = [int(v) for v in text.split(",")]
        if len(parts) != 2:
            raise ValueError("expected two comma-separated integers")
        return (parts[0], parts[1])
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"invalid range {text!r}: {exc}") from exc


def _canvas_arg(text: str) -> tuple[int, int]:
    try:
        w, _, h = text.partition("x")
        return (int(h), int(w))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"invalid canvas size {text!r}, want WxH") from exc


def _grid_arg(text: str) -> list[QualityWeights]:
    entries = [chunk for chunk in text.split(";") if chunk.strip()]
    if not entries:
        raise argparse.ArgumentTypeError("empty weight grid")
    return [_weights_arg(chunk.strip()) for chunk in entries]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="parsequal",
        description="Quality estimation and evaluation for human-parsing outputs.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_score = sub.add_parser("score", help="fuse quality scores for every instance")
    p_score.add_argument("--manifest", required=True, type=Path)
    p_score.add_argument("--threshold", type=_threshold_arg, default=0.2)
    p_score.add_argument("--weights", type=_weights_arg, default=QualityWeights())
    p_score.add_argument("--out", required=True, type=Path)
    p_score.add_argument("--jobs", type=int, default=1)

    p_eval = sub.add_parser("evaluate", help="run the full evaluation suite")
    p_eval.add_argument("--pred", required=True, type=Path, help="scores file from `score`")
    p_eval.add_argument("--gt", required=True, type=Path, help="manifest with gt references")
    p_eval.add_argument("--thresholds", type=_thresholds_arg, default=MatchThresholds())
    p_eval.add_argument("--out", type=Path, help="write the report as JSON here")
    p_eval.add_argument("--jobs", type=int, default=1)

    p_sweep = sub.add_parser("sweep-weights", help="grid-search fusion weights")
    p_sweep.add_argument("--manifest", required=True, type=Path)
    p_sweep.add_argument("--scores", type=Path, help="reuse raw scores from this file")
    p_sweep.add_argument("--threshold", type=_threshold_arg, default=0.2)
    p_sweep.add_argument("--grid", type=_grid_arg, help='candidates like "1,0,0;1,1,1"')
    p_sweep.add_argument("--objective", choices=SWEEP_METRIC_KEYS, default="ap_r")
    p_sweep.add_argument("--thresholds", type=_thresholds_arg, default=MatchThresholds())
    p_sweep.add_argument("--out", type=Path, help="write the TSV table here")
    p_sweep.add_argument("--jobs", type=int, default=1)

    p_synth = sub.add_parser("synth", help="generate a synthetic corpus")
    p_synth.add_argument("--out", required=True, type=Path)
    p_synth.add_argument("--seed", type=int, default=0)
    p_synth.add_argument("--num-images", type=int, default=20)
    p_synth.add_argument("--humans", type=_int_pair, default=(1, 3), metavar="LO,HI")
    p_synth.add_argument("--categories", type=int, default=8)
    p_synth.add_argument("--canvas", type=_canvas_arg, default=(128, 128), metavar="WxH")
    p_synth.add_argument("--boundary-noise", type=int, default=2)
    p_synth.add_argument("--part-swap-prob", type=float, default=0.1)
    p_synth.add_argument("--erosion", type=_int_pair, default=(0, 2), metavar="LO,HI")
    p_synth.add_argument("--sharpness", type=float, default=3.0)
    p_synth.add_argument("--conf-floor", type=float, default=0.15)
    p_synth.add_argument("--conf-peak", type=float, default=0.98)
    p_synth.add_argument("--conf-jitter", type=float, default=0.015)
    p_synth.add_argument("--box-jitter", type=float, default=0.04)
    p_synth.add_argument("--box-sigma", type=float, default=0.1)
    p_synth.add_argument("--iou-sigma", type=float, default=0.05)
    p_synth.add_argument("--store", choices=("maps", "tensor"), default="maps")
    p_synth.add_argument("--jobs", type=int, default=1)
    return parser


def _cmd_score(args: argparse.Namespace) -> int:
    manifest = load_manifest(args.manifest)
    scores = score_manifest(
        manifest, PixelScoreConfig(threshold=args.threshold), args.weights, jobs=args.jobs
    )
    write_scores_file(args.out, scores)
    print(f"scored {len(scores.rows)} instances -> {args.out}", file=sys.stderr)
    return 0


def _cmd_evaluate(args: argparse.Namespace) -> int:
    manifest = load_manifest(args.gt)
    scores = read_scores_file(args.pred)
    report = evaluate_manifest(
        manifest, scores.quality_by_instance(), thresholds=args.thresholds, jobs=args.jobs
    )
    print(report.format_text())
    if args.out is not None:
        args.out.write_text(
            json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
    for message in report.warnings:
        print(f"warning: {message}", file=sys.stderr)
    return 0


def _cmd_sweep(args: argparse.Namespace) -> int:
    manifest = load_manifest(args.manifest)
    if args.scores is not None:
        raw = list(read_scores_file(args.scores).raw_by_instance().values())
    else:
        raw = [
            row.raw
            for row in score_manifest(
                manifest,
                PixelScoreConfig(threshold=args.threshold),
                QualityWeights(),
                jobs=args.jobs,
            ).rows
        ]
    entries = sweep_manifest(
        manifest,
        raw,
        grid=args.grid if args.grid is not None else default_weight_grid(),
        objective=args.objective,
        thresholds=args.thresholds,
        jobs=args.jobs,
    )
    table = format_sweep_table(entries)
    if args.out is not None:
        args.out.write_text(table, encoding="utf-8")
    else:
        sys.stdout.write(table)
    return 0


def _cmd_synth(args: argparse.Namespace) -> int:
    config = SynthConfig(
        seed=args.seed,
        num_images=args.num_images,
        humans_per_image=args.humans,
        categories=args.categories,
        canvas_height=args.canvas[0],
        canvas_width=args.canvas[1],
        corruption=CorruptionConfig(
            boundary_noise_px=args.boundary_noise,
            part_swap_prob=args.part_swap_prob,
            erosion_px=args.erosion,
            confidence_sharpness=args.sharpness,
            confidence_floor=args.conf_floor,
            confidence_peak=args.conf_peak,
            confidence_jitter=args.conf_jitter,
            box_jitter_frac=args.box_jitter,
        ),
        score_noise=ScoreNoiseConfig(box_sigma=args.box_sigma, iou_sigma=args.iou_sigma),
    )
    manifest_path, truth_path = write_corpus(config, args.out, store=args.store, jobs=args.jobs)
    print(f"wrote corpus: {manifest_path} (+ {truth_path})", file=sys.stderr)
    return 0


_COMMANDS = {
    "score": _cmd_score,
    "evaluate": _cmd_evaluate,
    "sweep-weights": _cmd_sweep,
    "synth": _cmd_synth,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        # Config values that passed flag parsing but violate domain contracts
        # (e.g. a confidence floor too low for the category count).
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
