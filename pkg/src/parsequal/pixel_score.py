"""Pixel scores: average confidence over high-confidence regions.

The instance pixel score averages the probability map over all pixels whose
confidence reaches the threshold; the category pixel scores do the same per
predicted part category. An empty high-confidence set scores 0.0 (no
evidence of quality), so downstream fusion suppresses such outputs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .types import LabelMap, ProbabilityMap


@dataclass(frozen=True)
class PixelScoreConfig:
    """Confidence threshold selecting the high-confidence mask, in [0, 1)."""

    threshold: float = 0.2

    def __post_init__(self):
        t = float(self.threshold)
        if not np.isfinite(t) or not 0.0 <= t < 1.0:
            raise ValueError(f"threshold must lie in [0, 1), got {self.threshold!r}")


@dataclass(frozen=True)
class CategoryPixelScores:
    """Scores keyed by part category; only categories with at least one
    predicted pixel appear. Background is never scored."""

    scores: Mapping[int, float]
    present: frozenset[int]

    def __post_init__(self):
        if set(self.scores) != set(self.present):
            raise ValueError("scores must be emitted exactly for the present categories")


def instance_pixel_score(prob_map: ProbabilityMap, config: PixelScoreConfig) -> float:
    """Mean confidence over pixels with confidence >= threshold; 0.0 when no
    pixel reaches the threshold."""
    values = prob_map.values
    mask = values >= config.threshold
    count = int(mask.sum())
    if count == 0:
        return 0.0
    return float(values[mask].sum() / count)


def category_pixel_scores(
    label_map: LabelMap,
    prob_map: ProbabilityMap,
    num_categories: int,
    config: PixelScoreConfig,
) -> CategoryPixelScores:
    """Per-category mean confidence over the pixels predicted as that
    category and reaching the threshold.

    A category with predicted pixels but none above the threshold scores
    0.0; a category with no predicted pixels is absent entirely.
    """
    if num_categories < 2:
        raise ValueError(f"need at least 2 categories, got {num_categories}")
    labels = label_map.values
    probs = prob_map.values
    if labels.shape != probs.shape:
        raise ValueError(f"label/prob map shape mismatch: {labels.shape} vs {probs.shape}")
    if int(labels.max()) >= num_categories:
        raise ValueError(
            f"label map contains category {int(labels.max())} >= num_categories={num_categories}"
        )

    flat_labels = labels.ravel()
    pixel_counts = np.bincount(flat_labels, minlength=num_categories)
    hcm = probs.ravel() >= config.threshold
    hcm_labels = flat_labels[hcm]
    hcm_counts = np.bincount(hcm_labels, minlength=num_categories)
    hcm_sums = np.bincount(hcm_labels, weights=probs.ravel()[hcm], minlength=num_categories)

    scores: dict[int, float] = {}
    present: set[int] = set()
    for c in range(1, num_categories):
        if pixel_counts[c] == 0:
            continue
        present.add(c)
        scores[c] = float(hcm_sums[c] / hcm_counts[c]) if hcm_counts[c] > 0 else 0.0
    return CategoryPixelScores(scores=scores, present=frozenset(present))
