"""Synthetic corpus generator and degradation simulator.

Stands in for a trained parsing network at desk scale: reference humans are
layered composite shapes partitioned into part bands; predictions are the
reference masks corrupted by erosion, part mislabeling, and ragged-boundary
noise; probability tensors make the corrupted label the argmax with
confidence high in region interiors and decaying toward label boundaries
and corrupted pixels. A truth sidecar records generation-time box IoU,
mean part IoU, and per-part IoU for every prediction.

Generation is deterministic under the seed for any worker count: image i
draws from a PCG64 stream seeded with splitmix64-derived sub-seeds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import ndimage, stats

from ._parallel import parallel_map, subseed
from .dataset import (
    Manifest,
    ManifestImage,
    ManifestInstance,
    TruthRecord,
    save_manifest,
    write_gt_canvas,
    write_label_map_png,
    write_prob_map_file,
    write_tensor_file,
    write_truth_sidecar,
)
from .errors import DataError, GenerationError
from .fusion import fuse
from .pixel_score import PixelScoreConfig, category_pixel_scores, instance_pixel_score
from .types import (
    BACKGROUND,
    ImageCanvas,
    InstanceRecord,
    LabelMap,
    ProbabilityMap,
    ProbabilityTensor,
    QualityWeights,
    derive_maps,
)

_CONF_PEAK_CAP = 0.995
_CORRUPT_CONF_FRAC = 0.45  # corrupted pixels keep this fraction of the span above floor


@dataclass(frozen=True)
class CorruptionConfig:
    """Per-instance degradation knobs; each instance draws a severity level
    in [0, 1] that scales every maximum below."""

    boundary_noise_px: int = 2
    part_swap_prob: float = 0.1
    erosion_px: tuple[int, int] = (0, 2)
    confidence_sharpness: float = 3.0
    confidence_floor: float = 0.15
    confidence_peak: float = 0.98
    confidence_jitter: float = 0.015
    box_jitter_frac: float = 0.04

    def __post_init__(self):
        if self.boundary_noise_px < 0:
            raise ValueError("boundary_noise_px must be >= 0")
        if not 0.0 <= self.part_swap_prob <= 1.0:
            raise ValueError("part_swap_prob must lie in [0, 1]")
        lo, hi = self.erosion_px
        if lo < 0 or hi < lo:
            raise ValueError(f"erosion_px must be a range 0 <= lo <= hi, got {self.erosion_px}")
        if self.confidence_sharpness < 1.0:
            raise ValueError("confidence_sharpness must be >= 1")
        if not 0.0 < self.confidence_floor < 1.0:
            raise ValueError("confidence_floor must lie in (0, 1)")
        if not self.confidence_floor < self.confidence_peak <= _CONF_PEAK_CAP:
            raise ValueError(
                f"confidence_peak must lie in (floor, {_CONF_PEAK_CAP}], got {self.confidence_peak}"
            )
        if self.confidence_jitter < 0 or self.box_jitter_frac < 0:
            raise ValueError("jitter amounts must be >= 0")


@dataclass(frozen=True)
class ScoreNoiseConfig:
    box_sigma: float = 0.1
    iou_sigma: float = 0.05

    def __post_init__(self):
        if self.box_sigma < 0 or self.iou_sigma < 0:
            raise ValueError("score noise sigmas must be >= 0")


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    num_images: int = 20
    humans_per_image: tuple[int, int] = (1, 3)
    categories: int = 8
    canvas_height: int = 128
    canvas_width: int = 128
    corruption: CorruptionConfig = field(default_factory=CorruptionConfig)
    score_noise: ScoreNoiseConfig = field(default_factory=ScoreNoiseConfig)

    def __post_init__(self):
        if self.num_images < 1:
            raise ValueError("num_images must be >= 1")
        lo, hi = self.humans_per_image
        if lo < 1 or hi < lo:
            raise ValueError(f"humans_per_image must satisfy 1 <= lo <= hi, got {(lo, hi)}")
        if self.categories < 2:
            raise ValueError("need at least 2 categories (background + 1 part)")
        if self.categories > 256:
            raise ValueError("at most 256 categories are supported")
        min_h = _min_human_height(self.categories)
        if self.canvas_height < min_h + 2 or self.canvas_width < 12:
            raise GenerationError(
                f"canvas {self.canvas_width}x{self.canvas_height} too small for humans "
                f"with {self.categories - 1} parts (needs at least 12x{min_h + 2})"
            )
        # Argmax consistency after float32 rounding needs the floor confidence
        # to clear the residual mass spread over the other categories.
        if self.corruption.confidence_floor * self.categories <= 1.02:
            raise ValueError(
                f"confidence_floor {self.corruption.confidence_floor} too low for "
                f"{self.categories} categories (floor * C must exceed 1.02)"
            )


def _min_human_height(categories: int) -> int:
    return max(14, 2 * (categories - 1))


@dataclass(frozen=True)
class SyntheticImage:
    image_id: str
    height: int
    width: int
    gt_canvas: ImageCanvas
    records: tuple[InstanceRecord, ...]
    truth: tuple[TruthRecord, ...]


@dataclass(frozen=True)
class SyntheticCorpus:
    config: SynthConfig
    categories: tuple[str, ...]
    images: tuple[SyntheticImage, ...]

    def truth_by_instance(self) -> dict[str, TruthRecord]:
        return {t.instance_id: t for img in self.images for t in img.truth}

    def records_by_instance(self) -> dict[str, InstanceRecord]:
        return {r.instance_id: r for img in self.images for r in img.records}


def category_names(num_categories: int) -> tuple[str, ...]:
    return ("background",) + tuple(f"part{c:02d}" for c in range(1, num_categories))


# ---------------------------------------------------------------------------
# Shape synthesis


def _human_mask(rng: np.random.Generator, box_h: int, box_w: int) -> np.ndarray:
    """Head-plus-torso silhouette filling most of a (box_h, box_w) window."""
    yy, xx = np.mgrid[0:box_h, 0:box_w].astype(np.float64)
    cx = 0.5 * box_w
    head_r = max(2.0, min(0.13 * box_h, 0.4 * box_w) * rng.uniform(0.8, 1.1))
    head_cy = 0.1 * box_h + head_r * 0.2
    head = ((yy - head_cy) / head_r) ** 2 + ((xx - cx) / head_r) ** 2 <= 1.0
    body_a = 0.40 * box_h * rng.uniform(0.9, 1.05)
    body_b = max(2.0, 0.42 * box_w * rng.uniform(0.8, 1.1))
    body_cy = 0.58 * box_h
    body = ((yy - body_cy) / body_a) ** 2 + ((xx - cx) / body_b) ** 2 <= 1.0
    mask = head | body
    if not mask.any():
        mask[box_h // 2, box_w // 2] = True
    return mask


def _band_row_counts(span: int, bands: int, rng: np.random.Generator) -> np.ndarray:
    """Partition ``span`` rows into ``bands`` contiguous counts with random
    proportions; every band gets a row when span allows."""
    weights = rng.uniform(0.6, 1.6, size=bands)
    if span < bands:
        counts = np.zeros(bands, dtype=np.int64)
        counts[:span] = 1
        return counts
    counts = np.ones(bands, dtype=np.int64)
    extra = weights / weights.sum() * (span - bands)
    base = np.floor(extra).astype(np.int64)
    counts += base
    remainder = span - int(counts.sum())
    order = np.argsort(-(extra - base), kind="stable")
    for k in range(remainder):
        counts[order[k]] += 1
    return counts


def _partition_parts(
    mask: np.ndarray, num_categories: int, rng: np.random.Generator
) -> np.ndarray:
    """Split a silhouette into horizontal part bands labeled 1..C-1."""
    labels = np.zeros(mask.shape, dtype=np.int32)
    rows = np.nonzero(mask.any(axis=1))[0]
    span = int(rows[-1] - rows[0] + 1)
    counts = _band_row_counts(span, num_categories - 1, rng)
    y = int(rows[0])
    for c, count in enumerate(counts, start=1):
        if count == 0:
            continue
        band = slice(y, y + int(count))
        labels[band][mask[band]] = c
        y += int(count)
    return labels


def _rect_iou(a: tuple[int, int, int, int], b: tuple[int, int, int, int]) -> float:
    ax, ay, aw, ah = a
    bx, by, bw, bh = b
    x0, y0 = max(ax, bx), max(ay, by)
    x1, y1 = min(ax + aw, bx + bw), min(ay + ah, by + bh)
    inter = max(0, x1 - x0) * max(0, y1 - y0)
    union = aw * ah + bw * bh - inter
    return inter / union if union else 0.0


def _label_boundaries(labels: np.ndarray) -> np.ndarray:
    """Pixels with a 4-neighbor of a different label."""
    b = np.zeros(labels.shape, dtype=bool)
    dy = labels[1:, :] != labels[:-1, :]
    b[1:, :] |= dy
    b[:-1, :] |= dy
    dx = labels[:, 1:] != labels[:, :-1]
    b[:, 1:] |= dx
    b[:, :-1] |= dx
    return b


def _boundary_distance(labels: np.ndarray) -> np.ndarray:
    boundary = _label_boundaries(labels)
    if not boundary.any():
        return np.full(labels.shape, float(max(labels.shape)), dtype=np.float64)
    return ndimage.distance_transform_edt(~boundary)


# ---------------------------------------------------------------------------
# Per-image generation


def _place_humans(
    config: SynthConfig, rng: np.random.Generator, count: int
) -> tuple[np.ndarray, np.ndarray]:
    """Layered composite of ``count`` humans; later humans occlude earlier
    ones. Returns (semantic, owner-slot) full-canvas arrays."""
    H, W = config.canvas_height, config.canvas_width
    semantic = np.zeros((H, W), dtype=np.int32)
    owner = np.full((H, W), -1, dtype=np.int32)
    min_h = _min_human_height(config.categories)
    for slot in range(count):
        box_h = int(rng.uniform(0.35, 0.85) * H)
        box_h = max(min_h, min(box_h, H))
        box_w = int(np.clip(rng.uniform(0.4, 0.7) * box_h, 8, W))
        mask = _human_mask(rng, box_h, box_w)
        parts = _partition_parts(mask, config.categories, rng)
        own_area = int(mask.sum())

        best = None  # (overlap_fraction, x0, y0)
        for _attempt in range(40):
            x0 = int(rng.integers(0, W - box_w + 1))
            y0 = int(rng.integers(0, H - box_h + 1))
            covered = int((mask & (owner[y0 : y0 + box_h, x0 : x0 + box_w] >= 0)).sum())
            frac = covered / own_area
            if best is None or frac < best[0]:
                best = (frac, x0, y0)
            if frac <= 0.3:
                break
        if best is None or best[0] > 0.85:
            raise GenerationError(
                f"cannot place human {slot + 1}/{count} on a "
                f"{W}x{H} canvas without near-total occlusion; too many humans for canvas"
            )
        _frac, x0, y0 = best
        window = (slice(y0, y0 + box_h), slice(x0, x0 + box_w))
        semantic[window] = np.where(mask, parts, semantic[window])
        owner[window] = np.where(mask, slot, owner[window])
    return semantic, owner


def _jittered_box(
    rng: np.random.Generator,
    gt_box: tuple[int, int, int, int],
    frac: float,
    height: int,
    width: int,
) -> tuple[int, int, int, int]:
    gx, gy, gw, gh = gt_box
    if frac == 0.0:
        return gt_box
    dx = rng.normal(0.0, frac * gw)
    dy = rng.normal(0.0, frac * gh)
    sx = 1.0 + rng.normal(0.0, frac)
    sy = 1.0 + rng.normal(0.0, frac)
    w = max(1, int(round(gw * sx)))
    h = max(1, int(round(gh * sy)))
    x = int(round(gx + dx - (w - gw) / 2))
    y = int(round(gy + dy - (h - gh) / 2))
    x = min(max(x, 0), width - 1)
    y = min(max(y, 0), height - 1)
    w = min(w, width - x)
    h = min(h, height - y)
    return (x, y, w, h)


def _corrupt_labels(
    labels: np.ndarray,
    level: float,
    corruption: CorruptionConfig,
    num_categories: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Erosion, part mislabeling, then ragged-boundary noise, each scaled by
    the per-instance severity level."""
    out = labels.copy()

    lo, hi = corruption.erosion_px
    erosion = lo + int(round(level * (hi - lo)))
    if erosion > 0 and (out != BACKGROUND).any():
        dist = ndimage.distance_transform_edt(out != BACKGROUND)
        out[dist <= erosion] = BACKGROUND

    swap_p = level * corruption.part_swap_prob
    if swap_p > 0 and num_categories > 2:
        for c in range(1, num_categories):
            sel = out == c
            if sel.any() and rng.random() < swap_p:
                choices = [k for k in range(1, num_categories) if k != c]
                out[sel] = int(rng.choice(choices))

    band_w = int(round(level * corruption.boundary_noise_px))
    if band_w > 0:
        dist = _boundary_distance(out)
        band = dist <= band_w
        if band.any():
            h, w = out.shape
            yy, xx = np.mgrid[0:h, 0:w]
            off_y = rng.integers(-band_w, band_w + 1, size=out.shape)
            off_x = rng.integers(-band_w, band_w + 1, size=out.shape)
            src_y = np.clip(yy + off_y, 0, h - 1)
            src_x = np.clip(xx + off_x, 0, w - 1)
            flip = band & (rng.random(out.shape) < 0.5)
            source = out[src_y, src_x]
            out[flip] = source[flip]
    return out


def _confidence_field(
    labels: np.ndarray,
    corrupted: np.ndarray,
    corruption: CorruptionConfig,
    num_categories: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Per-pixel peak confidence: high in region interiors, decaying toward
    label boundaries, dented on corrupted pixels and damaged categories."""
    floor = corruption.confidence_floor
    kappa = corruption.confidence_sharpness

    total = np.bincount(labels.ravel(), minlength=num_categories).astype(np.float64)
    bad = np.bincount(labels.ravel()[corrupted.ravel()], minlength=num_categories)
    damage = np.divide(bad, total, out=np.zeros_like(total), where=total > 0)
    peaks = corruption.confidence_peak - 0.45 * damage
    if corruption.confidence_jitter > 0:
        peaks = peaks + rng.normal(0.0, corruption.confidence_jitter, size=num_categories)
    peaks = np.clip(peaks, floor + 0.05, _CONF_PEAK_CAP)

    peak_map = peaks[labels]
    dist = np.minimum(_boundary_distance(labels), 60.0)
    conf = peak_map - (peak_map - floor) * np.exp(-kappa * dist)
    conf = np.where(corrupted, floor + _CORRUPT_CONF_FRAC * (conf - floor), conf)
    return np.clip(conf, floor, _CONF_PEAK_CAP)


def _tensor_from_confidence(
    labels: np.ndarray, conf: np.ndarray, num_categories: int
) -> ProbabilityTensor:
    """Probability volume whose argmax is ``labels`` with max value ``conf``;
    the residual mass spreads evenly over the other categories."""
    rest = (1.0 - conf) / (num_categories - 1)
    values = np.repeat(rest[np.newaxis, :, :], num_categories, axis=0)
    h, w = labels.shape
    yy, xx = np.mgrid[0:h, 0:w]
    values[labels, yy, xx] = conf
    return ProbabilityTensor(values)


def _part_quality(
    pred_labels: np.ndarray,
    pred_box: tuple[int, int, int, int],
    gt_labels: np.ndarray,
    gt_box: tuple[int, int, int, int],
    num_categories: int,
) -> tuple[float, dict[int, float]]:
    """Mean part IoU over categories present in either mask, plus the
    per-category values (the truth-sidecar quality definition)."""
    px, py, pw, ph = pred_box
    gx, gy, gw, gh = gt_box
    pred_areas = np.bincount(pred_labels.ravel(), minlength=num_categories)
    gt_areas = np.bincount(gt_labels.ravel(), minlength=num_categories)
    inter = np.zeros(num_categories, dtype=np.int64)
    x0, y0 = max(px, gx), max(py, gy)
    x1, y1 = min(px + pw, gx + gw), min(py + ph, gy + gh)
    if x1 > x0 and y1 > y0:
        pc = pred_labels[y0 - py : y1 - py, x0 - px : x1 - px]
        gc = gt_labels[y0 - gy : y1 - gy, x0 - gx : x1 - gx]
        joint = gc.astype(np.int64).ravel() * num_categories + pc.ravel()
        counts = np.bincount(joint, minlength=num_categories * num_categories)
        inter = counts.reshape(num_categories, num_categories).diagonal()
    part_iou: dict[int, float] = {}
    total, n = 0.0, 0
    for c in range(1, num_categories):
        if pred_areas[c] + gt_areas[c] == 0:
            continue
        iou = float(inter[c] / (pred_areas[c] + gt_areas[c] - inter[c]))
        part_iou[c] = iou
        total += iou
        n += 1
    return (total / n if n else 0.0), part_iou


def build_image(config: SynthConfig, index: int) -> SyntheticImage:
    """Generate one image deterministically from the run seed and index."""
    rng = np.random.Generator(np.random.PCG64(subseed(config.seed, index)))
    image_id = f"img{index:05d}"
    H, W = config.canvas_height, config.canvas_width
    C = config.categories
    lo, hi = config.humans_per_image
    count = int(rng.integers(lo, hi + 1))

    semantic, owner = _place_humans(config, rng, count)
    gt_canvas = ImageCanvas(image_id=image_id, semantic=semantic, instance_index=owner)

    records: list[InstanceRecord] = []
    truth: list[TruthRecord] = []
    for slot in range(count):
        visible = owner == slot
        if not visible.any():
            continue  # fully occluded; no reference instance and no detection
        ys, xs = np.nonzero(visible)
        gt_box = (int(xs.min()), int(ys.min()), int(xs.max() - xs.min() + 1), int(ys.max() - ys.min() + 1))
        gt_full = np.where(visible, semantic, BACKGROUND)
        gx, gy, gw, gh = gt_box
        gt_crop = gt_full[gy : gy + gh, gx : gx + gw]

        level = float(rng.uniform(0.0, 1.0))
        box = _jittered_box(rng, gt_box, config.corruption.box_jitter_frac, H, W)
        x, y, w, h = box
        clean = gt_full[y : y + h, x : x + w]
        labels = _corrupt_labels(clean, level, config.corruption, C, rng)
        corrupted = labels != clean
        conf = _confidence_field(labels, corrupted, config.corruption, C, rng)
        tensor = _tensor_from_confidence(labels, conf, C)

        box_iou = _rect_iou(box, gt_box)
        miou, part_iou = _part_quality(labels, box, gt_crop, gt_box, C)
        box_score = float(np.clip(box_iou + rng.normal(0.0, config.score_noise.box_sigma), 0.0, 1.0))
        iou_score = float(np.clip(miou + rng.normal(0.0, config.score_noise.iou_sigma), 0.0, 1.0))

        instance_id = f"{image_id}_p{slot:02d}"
        records.append(
            InstanceRecord(instance_id, image_id, box, box_score, iou_score, tensor=tensor)
        )
        truth.append(
            TruthRecord(
                instance_id=instance_id,
                gt_instance_id=f"{image_id}#g{slot}",
                box_iou=box_iou,
                miou=miou,
                part_iou=part_iou,
            )
        )
    return SyntheticImage(
        image_id=image_id,
        height=H,
        width=W,
        gt_canvas=gt_canvas,
        records=tuple(records),
        truth=tuple(truth),
    )


def _maps_backed(record: InstanceRecord) -> InstanceRecord:
    label_map, prob_map = record.maps()
    return InstanceRecord(
        record.instance_id,
        record.image_id,
        record.box,
        record.box_score,
        record.iou_score,
        label_map=label_map,
        prob_map=prob_map,
    )


def generate(config: SynthConfig, keep_tensors: bool = False, jobs: int = 1) -> SyntheticCorpus:
    """Generate an in-memory corpus. Records carry full probability tensors
    only when ``keep_tensors``; otherwise they hold the derived maps, which
    is what scoring and evaluation consume."""

    def build(index: int) -> SyntheticImage:
        image = build_image(config, index)
        if keep_tensors:
            return image
        return replace(image, records=tuple(_maps_backed(r) for r in image.records))

    images = parallel_map(build, range(config.num_images), jobs=jobs)
    return SyntheticCorpus(
        config=config,
        categories=category_names(config.categories),
        images=tuple(images),
    )


def write_corpus(
    config: SynthConfig,
    out_dir: Path | str,
    store: str = "maps",
    jobs: int = 1,
) -> tuple[Path, Path]:
    """Generate a corpus directly to disk in manifest format, streaming one
    image at a time. ``store`` picks the payload form: "maps" writes label
    PNGs plus probability-map files, "tensor" writes full tensors.

    Returns (manifest path, truth sidecar path).
    """
    if store not in ("maps", "tensor"):
        raise ValueError(f"store must be 'maps' or 'tensor', got {store!r}")
    out_dir = Path(out_dir)
    (out_dir / "gt").mkdir(parents=True, exist_ok=True)
    (out_dir / "instances").mkdir(parents=True, exist_ok=True)

    def build_and_write(index: int):
        image = build_image(config, index)
        gt_rel = f"gt/{image.image_id}.pqc"
        write_gt_canvas(out_dir / gt_rel, image.gt_canvas)
        image_row = ManifestImage(
            image_id=image.image_id, height=image.height, width=image.width, gt_path=gt_rel
        )
        instance_rows = []
        for rec in image.records:
            paths: dict[str, str] = {}
            if store == "tensor":
                rel = f"instances/{rec.instance_id}.pqt"
                write_tensor_file(out_dir / rel, rec.tensor)
                paths["probvals_path"] = rel
            else:
                label_map, prob_map = rec.maps()
                label_rel = f"instances/{rec.instance_id}.png"
                prob_rel = f"instances/{rec.instance_id}.pqm"
                write_label_map_png(out_dir / label_rel, label_map)
                write_prob_map_file(out_dir / prob_rel, prob_map)
                paths["labelmap_path"] = label_rel
                paths["probmap_path"] = prob_rel
            instance_rows.append(
                ManifestInstance(
                    instance_id=rec.instance_id,
                    image_id=rec.image_id,
                    box=rec.box,
                    box_score=rec.box_score,
                    iou_score=rec.iou_score,
                    **paths,
                )
            )
        return image_row, instance_rows, list(image.truth)

    results = parallel_map(build_and_write, range(config.num_images), jobs=jobs)
    images = []
    instances = []
    truth: list[TruthRecord] = []
    for image_row, instance_rows, truth_rows in results:
        images.append(image_row)
        instances.extend(instance_rows)
        truth.extend(truth_rows)

    manifest = Manifest(
        categories=category_names(config.categories),
        images=tuple(images),
        instances=tuple(instances),
        root=out_dir,
    )
    manifest_path = out_dir / "manifest.json"
    truth_path = out_dir / "truth.json"
    save_manifest(manifest, manifest_path)
    write_truth_sidecar(truth_path, truth)
    return manifest_path, truth_path


# ---------------------------------------------------------------------------
# Score-vs-truth rank correlation


@dataclass(frozen=True)
class CorrelationReport:
    """Spearman rank correlations between candidate quality scores and the
    generation-time truth."""

    num_instances: int
    instance: dict[str, float]
    parts: dict[str, float]

    def format_text(self) -> str:
        lines = [f"instances: {self.num_instances}"]
        lines += [f"{name}: {rho:+.4f}" for name, rho in self.instance.items()]
        lines += [f"{name}: {rho:+.4f}" for name, rho in self.parts.items()]
        return "\n".join(lines)


def _spearman(x: Sequence[float], y: Sequence[float]) -> float:
    result = stats.spearmanr(np.asarray(x), np.asarray(y))
    rho = getattr(result, "statistic", None)
    if rho is None:
        rho = result.correlation
    return float(rho)


def correlation_report(
    corpus: SyntheticCorpus,
    thresholds: Sequence[float] = (0.0, 0.2),
    weights: QualityWeights = QualityWeights(),
    quality_threshold: float = 0.2,
) -> CorrelationReport:
    """Rank-correlate each candidate score against true instance quality,
    and category pixel scores against true per-part IoU.

    ``thresholds`` selects the pixel-score variants to examine; the fused
    quality score uses ``quality_threshold``.
    """
    truth = corpus.truth_by_instance()
    records = [r for img in corpus.images for r in img.records]
    records.sort(key=lambda r: r.instance_id)
    if len(records) < 3:
        raise DataError(f"need at least 3 scored instances, got {len(records)}")

    true_miou = [truth[r.instance_id].miou for r in records]
    series: dict[str, list[float]] = {
        "box_score": [r.box_score for r in records],
        "iou_score": [r.iou_score for r in records],
    }
    pixel_at: dict[float, list[float]] = {}
    for t in thresholds:
        cfg = PixelScoreConfig(threshold=t)
        pixel_at[t] = [instance_pixel_score(r.prob_map, cfg) for r in records]
        series[f"pixel_score@{t:g}"] = pixel_at[t]

    fuse_cfg = PixelScoreConfig(threshold=quality_threshold)
    fused = []
    for r in records:
        inst_ps = instance_pixel_score(r.prob_map, fuse_cfg)
        fused.append(fuse(r.box_score, r.iou_score, inst_ps, weights))
    series["quality_score"] = fused

    instance_rho = {name: _spearman(vals, true_miou) for name, vals in series.items()}

    parts: dict[str, float] = {}
    num_categories = len(corpus.categories)
    for t in thresholds:
        cfg = PixelScoreConfig(threshold=t)
        xs: list[float] = []
        ys: list[float] = []
        for r in records:
            cps = category_pixel_scores(r.label_map, r.prob_map, num_categories, cfg)
            part_truth = truth[r.instance_id].part_iou
            for c in sorted(cps.present):
                if c in part_truth:
                    xs.append(cps.scores[c])
                    ys.append(part_truth[c])
        if len(xs) >= 3:
            parts[f"category_pixel_score@{t:g}"] = _spearman(xs, ys)

    return CorrelationReport(
        num_instances=len(records), instance=instance_rho, parts=parts
    )
