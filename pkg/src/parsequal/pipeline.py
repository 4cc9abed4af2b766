"""End-to-end flows shared by the CLI and the test harness: score a corpus,
evaluate a scored corpus, and sweep fusion weights."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

from ._parallel import parallel_map
from .dataset import (
    Manifest,
    ScoreRow,
    ScoresFile,
    instances_by_image,
    load_gt_canvas,
    load_instance_record,
)
from .errors import ManifestError
from .fusion import (
    QualityScore,
    RawInstanceScores,
    SweepEntry,
    score_instance,
    sweep_weights,
)
from .metrics import (
    EvalImage,
    EvalReport,
    ImagePairStats,
    LazyEvalImage,
    MatchThresholds,
    compute_pair_stats,
    evaluate_corpus,
    instance_metrics,
)
from .pixel_score import PixelScoreConfig, category_pixel_scores, instance_pixel_score
from .types import InstanceRecord, QualityWeights, gt_instances_from_canvas


def score_records(
    records: Sequence[InstanceRecord],
    num_categories: int,
    config: PixelScoreConfig,
    weights: QualityWeights,
) -> list[ScoreRow]:
    """Pixel-score and fuse a batch of instances; rows come back ordered by
    (image_id, instance_id)."""
    rows = []
    for rec in sorted(records, key=lambda r: (r.image_id, r.instance_id)):
        label_map, prob_map = rec.maps()
        inst_ps = instance_pixel_score(prob_map, config)
        cps = category_pixel_scores(label_map, prob_map, num_categories, config)
        quality = score_instance(rec, cps, inst_ps, weights)
        raw = RawInstanceScores(
            instance_id=rec.instance_id,
            image_id=rec.image_id,
            box_score=rec.box_score,
            iou_score=rec.iou_score,
            instance_pixel_score=inst_ps,
            category_pixel_scores=dict(cps.scores),
        )
        rows.append(
            ScoreRow(
                image_id=rec.image_id,
                instance_id=rec.instance_id,
                quality=quality,
                raw=raw,
            )
        )
    return rows


def score_manifest(
    manifest: Manifest,
    config: PixelScoreConfig,
    weights: QualityWeights,
    jobs: int = 1,
) -> ScoresFile:
    """Score every instance in a manifest, loading payloads image by image."""
    grouped = instances_by_image(manifest)
    image_ids = sorted(grouped)

    def work(image_id: str) -> list[ScoreRow]:
        records = [load_instance_record(manifest, inst) for inst in grouped[image_id]]
        return score_records(records, manifest.num_categories, config, weights)

    rows: list[ScoreRow] = []
    for chunk in parallel_map(work, image_ids, jobs=jobs):
        rows.extend(chunk)
    return ScoresFile(threshold=config.threshold, weights=weights.as_tuple(), rows=tuple(rows))


def lazy_eval_images(manifest: Manifest) -> list[LazyEvalImage]:
    """Deferred evaluation inputs for every image of a manifest; reference
    canvases are required."""
    for image in manifest.images:
        if image.gt_path is None:
            raise ManifestError(
                f"image {image.image_id} has no gt_path; evaluation needs references"
            )
    grouped = instances_by_image(manifest)

    def make_loader(image) -> LazyEvalImage:
        def load() -> EvalImage:
            records = tuple(
                load_instance_record(manifest, inst) for inst in grouped[image.image_id]
            )
            return EvalImage(
                image_id=image.image_id,
                height=image.height,
                width=image.width,
                records=records,
                gt_canvas=load_gt_canvas(manifest, image),
            )

        return LazyEvalImage(image_id=image.image_id, load=load)

    return [make_loader(image) for image in manifest.images]


def evaluate_manifest(
    manifest: Manifest,
    scores: Mapping[str, QualityScore],
    thresholds: MatchThresholds = MatchThresholds(),
    jobs: int = 1,
) -> EvalReport:
    return evaluate_corpus(
        lazy_eval_images(manifest),
        scores,
        manifest.num_categories,
        thresholds=thresholds,
        jobs=jobs,
    )


def precompute_manifest_stats(manifest: Manifest, jobs: int = 1) -> list[ImagePairStats]:
    """Score-independent matching geometry for every image, for repeated
    re-ranking under different fusion weights."""
    grouped = instances_by_image(manifest)
    for image in manifest.images:
        if image.gt_path is None:
            raise ManifestError(
                f"image {image.image_id} has no gt_path; evaluation needs references"
            )

    def work(image) -> ImagePairStats:
        records = [load_instance_record(manifest, inst) for inst in grouped[image.image_id]]
        gts = gt_instances_from_canvas(load_gt_canvas(manifest, image))
        return compute_pair_stats(image.image_id, records, gts, manifest.num_categories)

    return parallel_map(work, list(manifest.images), jobs=jobs)


SWEEP_METRIC_KEYS = ("ap_p", "ap_p_50", "ap_r", "ap_r_50", "pcp_50")


def sweep_manifest(
    manifest: Manifest,
    raw_scores: Sequence[RawInstanceScores],
    grid: Sequence[QualityWeights] | None = None,
    objective: str = "ap_r",
    thresholds: MatchThresholds = MatchThresholds(),
    jobs: int = 1,
) -> list[SweepEntry]:
    """Grid-search fusion weights against instance metrics on a corpus with
    references. The matching geometry is computed once; each candidate only
    re-fuses and re-ranks."""
    stats = precompute_manifest_stats(manifest, jobs=jobs)
    num_categories = manifest.num_categories

    def evaluate(fused: dict[str, QualityScore]) -> dict[str, float]:
        im = instance_metrics(stats, fused, num_categories, thresholds)
        return {
            "ap_p": im.ap_p_mean,
            "ap_p_50": im.ap_p_50,
            "ap_r": im.ap_r_mean,
            "ap_r_50": im.ap_r_50,
            "pcp_50": im.pcp_50,
        }

    return sweep_weights(raw_scores, evaluate, grid=grid, objective=objective, jobs=jobs)


def format_sweep_table(entries: Sequence[SweepEntry]) -> str:
    """Tab-separated sweep results: weights then the metric columns."""
    header = "box_weight\tiou_weight\tpixel_weight\t" + "\t".join(SWEEP_METRIC_KEYS)
    lines = [header]
    for entry in entries:
        b, i, p = entry.weights.as_tuple()
        cells = [f"{b:g}", f"{i:g}", f"{p:g}"]
        cells += [f"{entry.metrics[k]:.6f}" for k in SWEEP_METRIC_KEYS]
        lines.append("\t".join(cells))
    return "\n".join(lines) + "\n"
