"""Quality-score fusion: weighted geometric mean of detector confidence,
predicted-IoU, and pixel score, at instance and per-part granularity, plus
a grid search over the weight exponents."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .pixel_score import CategoryPixelScores
from .types import InstanceRecord, QualityWeights


@dataclass(frozen=True)
class QualityScore:
    """Fused quality of one instance plus per-part scores for the predicted
    categories."""

    instance_score: float
    part_scores: dict[int, float]


def fuse(box_score: float, iou_score: float, pixel_score: float, weights: QualityWeights) -> float:
    """Weighted geometric mean of the three quality signals.

    The exponents are normalized by their sum, so scaling all weights leaves
    the result unchanged. A factor with weight exactly 0 is excluded (its
    value is irrelevant, even 0); a zero factor with positive weight forces
    the result to 0.
    """
    pairs = []
    for name, score, weight in (
        ("box_score", box_score, weights.box),
        ("iou_score", iou_score, weights.iou),
        ("pixel_score", pixel_score, weights.pixel),
    ):
        score = float(score)
        if not np.isfinite(score) or not 0.0 <= score <= 1.0:
            raise ValueError(f"{name} must lie in [0, 1], got {score!r}")
        if weight > 0.0:
            pairs.append((score, weight))

    if len(pairs) == 1:
        # Single active factor: s**(w/w) is exactly s.
        return pairs[0][0]
    log_sum = 0.0
    for score, weight in pairs:
        if score == 0.0:
            return 0.0
        log_sum += weight * math.log(score)
    return min(1.0, math.exp(log_sum / weights.total))


def score_instance(
    record: InstanceRecord,
    category_scores: CategoryPixelScores,
    instance_pixel_score: float,
    weights: QualityWeights,
) -> QualityScore:
    """Fuse an instance's signals into its quality score and one score per
    predicted part category (parts share the instance-level box and IoU
    scores; only the pixel score varies per part)."""
    instance = fuse(record.box_score, record.iou_score, instance_pixel_score, weights)
    parts = {
        c: fuse(record.box_score, record.iou_score, category_scores.scores[c], weights)
        for c in sorted(category_scores.present)
    }
    return QualityScore(instance_score=instance, part_scores=parts)


@dataclass(frozen=True)
class RawInstanceScores:
    """Unfused quality signals for one instance, ready for re-fusion under
    arbitrary weights."""

    instance_id: str
    image_id: str
    box_score: float
    iou_score: float
    instance_pixel_score: float
    category_pixel_scores: dict[int, float]

    def fused(self, weights: QualityWeights) -> QualityScore:
        instance = fuse(self.box_score, self.iou_score, self.instance_pixel_score, weights)
        parts = {
            c: fuse(self.box_score, self.iou_score, s, weights)
            for c, s in sorted(self.category_pixel_scores.items())
        }
        return QualityScore(instance_score=instance, part_scores=parts)


def default_weight_grid(values: Sequence[float] = (0.0, 0.5, 1.0, 2.0, 3.0)) -> list[QualityWeights]:
    """Full cube of candidate weights over ``values``, excluding the all-zero
    triple."""
    grid = []
    for b in values:
        for i in values:
            for p in values:
                if b == i == p == 0.0:
                    continue
                grid.append(QualityWeights(b, i, p))
    return grid


@dataclass(frozen=True)
class SweepEntry:
    weights: QualityWeights
    metrics: dict[str, float]
    objective: float


def sweep_weights(
    raw_scores: Sequence[RawInstanceScores],
    evaluate: Callable[[dict[str, QualityScore]], dict[str, float]],
    grid: Sequence[QualityWeights] | None = None,
    objective: str = "ap_r",
    jobs: int = 1,
) -> list[SweepEntry]:
    """Re-fuse a scored corpus under each candidate weight triple and rank
    the candidates by an evaluation objective.

    ``evaluate`` maps {instance_id: QualityScore} to a metrics dict that
    must contain ``objective``. Results are sorted by objective descending,
    ties broken lexicographically on the weight triple; duplicated
    candidates produce identical rows.
    """
    if not raw_scores:
        raise ValueError("cannot sweep weights over an empty corpus")
    candidates = list(default_weight_grid() if grid is None else grid)
    if not candidates:
        raise ValueError("weight grid is empty")

    def run(weights: QualityWeights) -> SweepEntry:
        fused = {r.instance_id: r.fused(weights) for r in raw_scores}
        metrics = evaluate(fused)
        if objective not in metrics:
            raise ValueError(
                f"objective {objective!r} not in evaluated metrics {sorted(metrics)}"
            )
        return SweepEntry(weights=weights, metrics=metrics, objective=float(metrics[objective]))

    from ._parallel import parallel_map

    entries = parallel_map(run, candidates, jobs=jobs)
    entries.sort(key=lambda e: (-e.objective, e.weights.as_tuple()))
    return entries
