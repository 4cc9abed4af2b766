"""Evaluation suite for multi-person parsing outputs.

Image-level semantic scores (pixel accuracy, mean accuracy, mIoU) plus
instance-level average-precision metrics:

* human-level AP: a detection's similarity to a reference human is its mean
  part IoU over the part categories present in either of the two;
* region-level AP: per-category part regions matched one-to-one by mask IoU;
* correctly-parsed-parts rate at the 0.5 matching threshold.

Matching is greedy in score order (one-to-one, best unmatched reference
first) and AP integrates the interpolated precision envelope over recall,
so all numbers are bit-stable under permutation of the inputs. Documented
tie rules: predictions sort by (score desc, instance_id asc); among equally
similar references the lexicographically earliest instance_id wins; pixels
contested during pasting go to the higher instance score, then to the
earlier instance_id.
"""

from __future__ import annotations

import warnings as _warnings
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from ._parallel import parallel_map
from .errors import DataError
from .fusion import QualityScore
from .types import (
    BACKGROUND,
    GroundTruthInstance,
    ImageCanvas,
    InstanceRecord,
    gt_instances_from_canvas,
)

DEFAULT_THRESHOLDS = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)
COCO_THRESHOLDS = (0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95)
_PRESETS = {"mhp": DEFAULT_THRESHOLDS, "coco": COCO_THRESHOLDS}


@dataclass(frozen=True)
class MatchThresholds:
    """Strictly increasing IoU thresholds in (0, 1) for AP matching."""

    values: tuple[float, ...] = DEFAULT_THRESHOLDS

    def __post_init__(self):
        vals = tuple(float(v) for v in self.values)
        if not vals:
            raise ValueError("at least one matching threshold is required")
        for v in vals:
            if not 0.0 < v < 1.0:
                raise ValueError(f"matching thresholds must lie in (0, 1), got {v}")
        if any(b <= a for a, b in zip(vals, vals[1:])):
            raise ValueError(f"matching thresholds must be strictly increasing, got {vals}")
        object.__setattr__(self, "values", vals)

    @classmethod
    def parse(cls, text: str) -> "MatchThresholds":
        """Parse a preset name ("mhp", "coco") or a comma-separated list."""
        if text in _PRESETS:
            return cls(_PRESETS[text])
        try:
            return cls(tuple(float(v) for v in text.split(",") if v.strip()))
        except ValueError as exc:
            raise ValueError(f"cannot parse thresholds {text!r}: {exc}") from exc


def paste_instances(
    scored: Sequence[tuple[InstanceRecord, float]],
    image_id: str,
    height: int,
    width: int,
) -> ImageCanvas:
    """Composite per-instance label maps into image space.

    Each instance claims the non-background pixels of its label map inside
    its box; contested pixels go to the higher instance score, ties to the
    lexicographically earlier instance_id. Slots in the returned canvas are
    positions in the input sequence.
    """
    semantic = np.zeros((height, width), dtype=np.int32)
    owner = np.full((height, width), -1, dtype=np.int32)
    # Paint lowest priority first so the winner lands last: ascending score,
    # equal scores ordered by id descending (earlier id paints later).
    order = sorted(range(len(scored)), key=lambda i: scored[i][0].instance_id, reverse=True)
    order = sorted(order, key=lambda i: scored[i][1])
    for slot in order:
        record, _score = scored[slot]
        x, y, w, h = record.box
        if x + w > width or y + h > height:
            raise DataError(
                f"instance {record.instance_id}: box {record.box} extends outside "
                f"the {width}x{height} image"
            )
        labels = record.label_map.values
        if labels.shape != (h, w):
            raise DataError(
                f"instance {record.instance_id}: label map shape {labels.shape} "
                f"does not match box {record.box}"
            )
        fg = labels != BACKGROUND
        target_sem = semantic[y : y + h, x : x + w]
        target_own = owner[y : y + h, x : x + w]
        target_sem[fg] = labels[fg]
        target_own[fg] = slot
    return ImageCanvas(image_id=image_id, semantic=semantic, instance_index=owner)


@dataclass(frozen=True)
class SemanticScores:
    pix_acc: float
    mean_acc: float
    per_class_iou: dict[int, float]
    miou: float


def confusion_matrix(pred: ImageCanvas, gt: ImageCanvas, num_categories: int) -> np.ndarray:
    """Pixel confusion counts, rows = reference class, cols = predicted."""
    if pred.semantic.shape != gt.semantic.shape:
        raise DataError(
            f"image {gt.image_id}: prediction canvas {pred.semantic.shape} does not "
            f"match reference {gt.semantic.shape}"
        )
    joint = gt.semantic.astype(np.int64).ravel() * num_categories + pred.semantic.ravel()
    counts = np.bincount(joint, minlength=num_categories * num_categories)
    return counts.reshape(num_categories, num_categories)


def semantic_scores_from_confusion(confusion: np.ndarray) -> SemanticScores:
    """Accuracy and IoU summaries of an accumulated confusion matrix.

    Mean accuracy averages recall over classes with reference pixels; mIoU
    averages over every class present in reference or prediction (including
    background), skipping classes absent from both.
    """
    num_categories = confusion.shape[0]
    diag = np.diag(confusion)
    gt_count = confusion.sum(axis=1)
    pred_count = confusion.sum(axis=0)
    total = int(confusion.sum())
    if total == 0:
        raise DataError("no pixels to evaluate")
    pix_acc = float(diag.sum() / total)

    acc_sum, acc_n = 0.0, 0
    per_class_iou: dict[int, float] = {}
    iou_sum, iou_n = 0.0, 0
    for c in range(num_categories):
        if gt_count[c] > 0:
            acc_sum += float(diag[c] / gt_count[c])
            acc_n += 1
        union = int(gt_count[c] + pred_count[c] - diag[c])
        if union > 0:
            iou = float(diag[c] / union)
            per_class_iou[c] = iou
            iou_sum += iou
            iou_n += 1
    return SemanticScores(
        pix_acc=pix_acc,
        mean_acc=acc_sum / acc_n,
        per_class_iou=per_class_iou,
        miou=iou_sum / iou_n,
    )


def semantic_scores(
    preds: Mapping[str, ImageCanvas],
    gts: Mapping[str, ImageCanvas],
    num_categories: int,
) -> SemanticScores:
    """Semantic scores over matching prediction/reference canvas sets."""
    if set(preds) != set(gts):
        missing = sorted(set(gts) ^ set(preds))
        raise DataError(f"prediction/reference image sets differ, e.g. {missing[:5]}")
    confusion = np.zeros((num_categories, num_categories), dtype=np.int64)
    for image_id in sorted(gts):
        confusion += confusion_matrix(preds[image_id], gts[image_id], num_categories)
    return semantic_scores_from_confusion(confusion)


# ---------------------------------------------------------------------------
# Instance-level metrics


@dataclass(frozen=True, eq=False)
class ImagePairStats:
    """Score-independent matching geometry for one image.

    ``part_iou[p, g, c]`` is the mask IoU between prediction p's and
    reference g's category-c regions; ``similarity[p, g]`` is the mean part
    IoU over categories present in either. Predictions and references are
    listed in ascending instance_id order.
    """

    image_id: str
    pred_ids: tuple[str, ...]
    gt_ids: tuple[str, ...]
    pred_areas: np.ndarray  # (P, C) pixels per category
    gt_areas: np.ndarray  # (G, C)
    part_iou: np.ndarray  # (P, G, C)
    similarity: np.ndarray  # (P, G)


def _category_areas(labels: np.ndarray, num_categories: int) -> np.ndarray:
    return np.bincount(labels.ravel(), minlength=num_categories)


def _pair_intersections(
    pred_box: tuple[int, int, int, int],
    pred_labels: np.ndarray,
    gt_box: tuple[int, int, int, int],
    gt_labels: np.ndarray,
    num_categories: int,
) -> np.ndarray:
    """Per-category overlap pixel counts between two positioned label maps."""
    px, py, pw, ph = pred_box
    gx, gy, gw, gh = gt_box
    x0, y0 = max(px, gx), max(py, gy)
    x1, y1 = min(px + pw, gx + gw), min(py + ph, gy + gh)
    if x1 <= x0 or y1 <= y0:
        return np.zeros(num_categories, dtype=np.int64)
    pc = pred_labels[y0 - py : y1 - py, x0 - px : x1 - px]
    gc = gt_labels[y0 - gy : y1 - gy, x0 - gx : x1 - gx]
    joint = gc.astype(np.int64).ravel() * num_categories + pc.ravel()
    counts = np.bincount(joint, minlength=num_categories * num_categories)
    return counts.reshape(num_categories, num_categories).diagonal()


def compute_pair_stats(
    image_id: str,
    preds: Sequence[InstanceRecord],
    gts: Sequence[GroundTruthInstance],
    num_categories: int,
) -> ImagePairStats:
    """All prediction/reference part IoUs and similarities for one image."""
    preds = sorted(preds, key=lambda r: r.instance_id)
    gts = sorted(gts, key=lambda g: g.instance_id)
    P, G, C = len(preds), len(gts), num_categories
    pred_areas = np.zeros((P, C), dtype=np.int64)
    gt_areas = np.zeros((G, C), dtype=np.int64)
    pred_label_arrays = []
    for p, rec in enumerate(preds):
        labels = rec.label_map.values
        if int(labels.max(initial=0)) >= C:
            raise DataError(
                f"instance {rec.instance_id}: label {int(labels.max())} out of range "
                f"for {C} categories"
            )
        pred_label_arrays.append(labels)
        pred_areas[p] = _category_areas(labels, C)
    for g, gt in enumerate(gts):
        if int(gt.label_map.values.max(initial=0)) >= C:
            raise DataError(f"reference {gt.instance_id}: label out of range")
        gt_areas[g] = _category_areas(gt.label_map.values, C)

    part_iou = np.zeros((P, G, C), dtype=np.float64)
    similarity = np.zeros((P, G), dtype=np.float64)
    for p, rec in enumerate(preds):
        for g, gt in enumerate(gts):
            inter = _pair_intersections(
                rec.box, pred_label_arrays[p], gt.box, gt.label_map.values, C
            )
            sim_sum, sim_n = 0.0, 0
            for c in range(1, C):
                if pred_areas[p, c] + gt_areas[g, c] == 0:
                    continue
                union = int(pred_areas[p, c] + gt_areas[g, c] - inter[c])
                iou = float(inter[c] / union)
                part_iou[p, g, c] = iou
                sim_sum += iou
                sim_n += 1
            similarity[p, g] = sim_sum / sim_n if sim_n else 0.0
    return ImagePairStats(
        image_id=image_id,
        pred_ids=tuple(r.instance_id for r in preds),
        gt_ids=tuple(g.instance_id for g in gts),
        pred_areas=pred_areas,
        gt_areas=gt_areas,
        part_iou=part_iou,
        similarity=similarity,
    )


def interpolated_ap(tp_flags: Sequence[bool], num_gt: int) -> float:
    """Area under the interpolated precision-recall curve for detections
    already ranked by score; ``num_gt`` is the recall denominator."""
    if num_gt <= 0 or len(tp_flags) == 0:
        return 0.0
    flags = np.asarray(tp_flags, dtype=bool)
    tp_cum = np.cumsum(flags.astype(np.int64))
    ranks = np.arange(1, len(flags) + 1, dtype=np.int64)
    rec = tp_cum / num_gt
    prec = tp_cum / ranks
    mrec = np.concatenate(([0.0], rec, [1.0]))
    mpre = np.concatenate(([0.0], prec, [0.0]))
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    ap = 0.0
    for i in range(len(mrec) - 1):
        if mrec[i + 1] != mrec[i]:
            ap += (mrec[i + 1] - mrec[i]) * mpre[i + 1]
    return float(ap)


def _greedy_match_human(
    stats: ImagePairStats,
    pred_order: Sequence[int],
    threshold: float,
) -> tuple[list[bool], dict[int, int]]:
    """One-to-one greedy matching of predictions to reference humans.

    Returns TP flags in ``pred_order`` and the {gt index: pred index}
    assignment. Each prediction takes its most similar unmatched reference;
    it is a TP when that similarity reaches the threshold.
    """
    taken: set[int] = set()
    flags = []
    assignment: dict[int, int] = {}
    for p in pred_order:
        best_g, best_sim = -1, -1.0
        for g in range(len(stats.gt_ids)):
            if g in taken:
                continue
            sim = stats.similarity[p, g]
            if sim > best_sim:
                best_g, best_sim = g, sim
        if best_g >= 0 and best_sim >= threshold:
            taken.add(best_g)
            assignment[best_g] = p
            flags.append(True)
        else:
            flags.append(False)
    return flags, assignment


def _greedy_match_regions(
    iou_matrix: np.ndarray,
    pred_order: Sequence[int],
    gt_indices: Sequence[int],
    threshold: float,
) -> list[bool]:
    """Greedy one-to-one matching of part regions by mask IoU."""
    taken: set[int] = set()
    flags = []
    for p in pred_order:
        best_g, best_iou = -1, -1.0
        for g in gt_indices:
            if g in taken:
                continue
            iou = iou_matrix[p, g]
            if iou > best_iou:
                best_g, best_iou = g, iou
        if best_g >= 0 and best_iou >= threshold:
            taken.add(best_g)
            flags.append(True)
        else:
            flags.append(False)
    return flags


@dataclass(frozen=True)
class InstanceMetrics:
    """AP and correctly-parsed-parts results at the configured thresholds."""

    ap_p: dict[float, float]
    ap_p_mean: float
    ap_p_50: float
    pcp_50: float
    ap_r: dict[float, float]
    ap_r_mean: float
    ap_r_50: float
    warnings: tuple[str, ...]


def _pred_order_by_instance_score(
    stats: ImagePairStats, scores: Mapping[str, QualityScore]
) -> list[int]:
    for pid in stats.pred_ids:
        if pid not in scores:
            raise DataError(f"missing quality score for instance {pid}")
    return sorted(
        range(len(stats.pred_ids)),
        key=lambda p: (-scores[stats.pred_ids[p]].instance_score, stats.pred_ids[p]),
    )


def instance_metrics(
    per_image: Sequence[ImagePairStats],
    scores: Mapping[str, QualityScore],
    num_categories: int,
    thresholds: MatchThresholds = MatchThresholds(),
) -> InstanceMetrics:
    """Evaluate human-level AP, region-level AP and PCP over precomputed
    per-image matching geometry plus per-instance quality scores."""
    per_image = sorted(per_image, key=lambda s: s.image_id)
    eval_ts = tuple(sorted(set(thresholds.values) | {0.5}))
    idx_05 = eval_ts.index(0.5)
    warn: list[str] = []

    human_rows: list[tuple[float, str, list[bool]]] = []
    pcp_fracs: list[float] = []
    num_gt_humans = 0
    region_rows: dict[int, list[tuple[float, str, list[bool]]]] = {
        c: [] for c in range(1, num_categories)
    }
    num_gt_regions = np.zeros(num_categories, dtype=np.int64)

    for stats in per_image:
        order = _pred_order_by_instance_score(stats, scores)
        num_gt_humans += len(stats.gt_ids)

        flags_by_pred = [[False] * len(eval_ts) for _ in stats.pred_ids]
        assignment_05: dict[int, int] = {}
        for t_idx, t in enumerate(eval_ts):
            flags, assignment = _greedy_match_human(stats, order, t)
            for rank, p in enumerate(order):
                flags_by_pred[p][t_idx] = flags[rank]
            if t_idx == idx_05:
                assignment_05 = assignment
        for p in order:
            pid = stats.pred_ids[p]
            human_rows.append((scores[pid].instance_score, pid, flags_by_pred[p]))

        for g in range(len(stats.gt_ids)):
            present = [c for c in range(1, num_categories) if stats.gt_areas[g, c] > 0]
            p = assignment_05.get(g)
            if p is None:
                pcp_fracs.append(0.0)
            else:
                hits = sum(1 for c in present if stats.part_iou[p, g, c] > 0.5)
                pcp_fracs.append(hits / len(present))

        for c in range(1, num_categories):
            gt_idx = [g for g in range(len(stats.gt_ids)) if stats.gt_areas[g, c] > 0]
            num_gt_regions[c] += len(gt_idx)
            pred_idx = [p for p in range(len(stats.pred_ids)) if stats.pred_areas[p, c] > 0]
            if not pred_idx:
                continue
            for p in pred_idx:
                pid = stats.pred_ids[p]
                if c not in scores[pid].part_scores:
                    raise DataError(
                        f"missing part score for category {c} of instance {pid}"
                    )
            pred_idx.sort(
                key=lambda p: (-scores[stats.pred_ids[p]].part_scores[c], stats.pred_ids[p])
            )
            flags_per_t = [
                _greedy_match_regions(stats.part_iou[:, :, c], pred_idx, gt_idx, t)
                for t in eval_ts
            ]
            for rank, p in enumerate(pred_idx):
                pid = stats.pred_ids[p]
                row_flags = [flags_per_t[t_idx][rank] for t_idx in range(len(eval_ts))]
                region_rows[c].append((scores[pid].part_scores[c], pid, row_flags))

    if num_gt_humans == 0:
        warn.append("no reference humans in the corpus; AP and PCP reported as 0")

    human_rows.sort(key=lambda row: (-row[0], row[1]))
    ap_p_all = {
        t: interpolated_ap([row[2][t_idx] for row in human_rows], num_gt_humans)
        for t_idx, t in enumerate(eval_ts)
    }
    pcp_50 = sum(pcp_fracs) / num_gt_humans if num_gt_humans else 0.0

    scored_categories = [c for c in range(1, num_categories) if num_gt_regions[c] > 0]
    if not scored_categories:
        warn.append("no reference part regions in the corpus; region AP reported as 0")
    ap_r_all: dict[float, float] = {}
    for t_idx, t in enumerate(eval_ts):
        total = 0.0
        for c in scored_categories:
            rows = sorted(region_rows[c], key=lambda row: (-row[0], row[1]))
            total += interpolated_ap([row[2][t_idx] for row in rows], int(num_gt_regions[c]))
        ap_r_all[t] = total / len(scored_categories) if scored_categories else 0.0

    reported = thresholds.values
    ap_p = {t: ap_p_all[t] for t in reported}
    ap_r = {t: ap_r_all[t] for t in reported}
    for message in warn:
        _warnings.warn(message, stacklevel=2)
    return InstanceMetrics(
        ap_p=ap_p,
        ap_p_mean=sum(ap_p[t] for t in reported) / len(reported),
        ap_p_50=ap_p_all[0.5],
        pcp_50=pcp_50,
        ap_r=ap_r,
        ap_r_mean=sum(ap_r[t] for t in reported) / len(reported),
        ap_r_50=ap_r_all[0.5],
        warnings=tuple(warn),
    )


@dataclass(frozen=True)
class EvalImage:
    """Everything needed to evaluate one image: scored predictions plus the
    reference canvas."""

    image_id: str
    height: int
    width: int
    records: tuple[InstanceRecord, ...]
    gt_canvas: ImageCanvas

    def __post_init__(self):
        if (self.gt_canvas.height, self.gt_canvas.width) != (self.height, self.width):
            raise DataError(
                f"image {self.image_id}: reference canvas is "
                f"{self.gt_canvas.width}x{self.gt_canvas.height}, expected "
                f"{self.width}x{self.height}"
            )


@dataclass(frozen=True)
class EvalReport:
    """Full evaluation output; keys in to_dict() are frozen and documented."""

    pix_acc: float
    mean_acc: float
    miou: float
    per_class_iou: dict[int, float]
    ap_p: dict[float, float]
    ap_p_mean: float
    ap_p_50: float
    pcp_50: float
    ap_r: dict[float, float]
    ap_r_mean: float
    ap_r_50: float
    counts: dict[str, int]
    thresholds: tuple[float, ...]
    warnings: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "counts": dict(self.counts),
            "thresholds": list(self.thresholds),
            "pix_acc": self.pix_acc,
            "mean_acc": self.mean_acc,
            "miou": self.miou,
            "per_class_iou": {str(c): v for c, v in sorted(self.per_class_iou.items())},
            "ap_p": {str(t): self.ap_p[t] for t in self.thresholds},
            "ap_p_mean": self.ap_p_mean,
            "ap_p_50": self.ap_p_50,
            "pcp_50": self.pcp_50,
            "ap_r": {str(t): self.ap_r[t] for t in self.thresholds},
            "ap_r_mean": self.ap_r_mean,
            "ap_r_50": self.ap_r_50,
            "warnings": list(self.warnings),
        }

    def format_text(self) -> str:
        lines = [
            f"images: {self.counts['images']}",
            f"instances: {self.counts['instances']}",
            f"gt_instances: {self.counts['gt_instances']}",
            f"pix_acc: {self.pix_acc:.6f}",
            f"mean_acc: {self.mean_acc:.6f}",
            f"miou: {self.miou:.6f}",
        ]
        lines += [f"ap_p@{t:g}: {self.ap_p[t]:.6f}" for t in self.thresholds]
        lines += [
            f"ap_p_mean: {self.ap_p_mean:.6f}",
            f"ap_p_50: {self.ap_p_50:.6f}",
            f"pcp_50: {self.pcp_50:.6f}",
        ]
        lines += [f"ap_r@{t:g}: {self.ap_r[t]:.6f}" for t in self.thresholds]
        lines += [
            f"ap_r_mean: {self.ap_r_mean:.6f}",
            f"ap_r_50: {self.ap_r_50:.6f}",
        ]
        return "\n".join(lines)


@dataclass(frozen=True)
class LazyEvalImage:
    """Deferred evaluation input: payloads load inside the worker, so only
    one image's arrays are resident per worker at a time."""

    image_id: str
    load: "Callable[[], EvalImage]"


def evaluate_corpus(
    images: Sequence[EvalImage | LazyEvalImage],
    scores: Mapping[str, QualityScore],
    num_categories: int,
    thresholds: MatchThresholds = MatchThresholds(),
    jobs: int = 1,
) -> EvalReport:
    """Evaluate semantic and instance metrics over a corpus in one pass.

    Prediction canvases are composited with the instance quality scores, so
    the semantic numbers reflect the same ranking the AP metrics use.
    """
    images = sorted(images, key=lambda im: im.image_id)
    ids = [im.image_id for im in images]
    if len(set(ids)) != len(ids):
        raise DataError("duplicate image ids in evaluation input")

    def work(entry: EvalImage | LazyEvalImage):
        image = entry.load() if isinstance(entry, LazyEvalImage) else entry
        for rec in image.records:
            if rec.instance_id not in scores:
                raise DataError(f"missing quality score for instance {rec.instance_id}")
        scored = [(rec, scores[rec.instance_id].instance_score) for rec in image.records]
        pred_canvas = paste_instances(scored, image.image_id, image.height, image.width)
        confusion = confusion_matrix(pred_canvas, image.gt_canvas, num_categories)
        gts = gt_instances_from_canvas(image.gt_canvas)
        stats = compute_pair_stats(image.image_id, image.records, gts, num_categories)
        return confusion, stats, len(image.records), len(gts)

    results = parallel_map(work, images, jobs=jobs)
    confusion = np.zeros((num_categories, num_categories), dtype=np.int64)
    per_image: list[ImagePairStats] = []
    n_instances = 0
    n_gt = 0
    for conf, stats, n_rec, n_gts in results:
        confusion += conf
        per_image.append(stats)
        n_instances += n_rec
        n_gt += n_gts

    semantic = semantic_scores_from_confusion(confusion)
    inst = instance_metrics(per_image, scores, num_categories, thresholds)
    return EvalReport(
        pix_acc=semantic.pix_acc,
        mean_acc=semantic.mean_acc,
        miou=semantic.miou,
        per_class_iou=semantic.per_class_iou,
        ap_p=inst.ap_p,
        ap_p_mean=inst.ap_p_mean,
        ap_p_50=inst.ap_p_50,
        pcp_50=inst.pcp_50,
        ap_r=inst.ap_r,
        ap_r_mean=inst.ap_r_mean,
        ap_r_50=inst.ap_r_50,
        counts={"images": len(images), "instances": n_instances, "gt_instances": n_gt},
        thresholds=thresholds.values,
        warnings=inst.warnings,
    )
