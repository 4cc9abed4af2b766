"""File formats and manifest handling.

A corpus on disk is a JSON manifest plus per-instance payload files, so
instances stream independently during evaluation:

* probability tensors:  magic ``PQT1``, little-endian u32 C, H, W, then
  C*H*W float32 values in category-major, row-major order;
* probability maps:     magic ``PQM1``, u32 H, W, then H*W float32;
* label maps:           8-bit single-channel PNG, pixel value = category;
* reference canvases:   magic ``PQC1``, u32 H, W, then H*W u8 semantic
  categories followed by H*W little-endian i16 instance slots (-1 = none).

All multi-byte integers are little-endian. Loading never mutates files.
The manifest schema is versioned; see the README for the field reference.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable

import numpy as np
from PIL import Image

from .errors import FormatError, ManifestError
from .fusion import QualityScore, RawInstanceScores
from .types import ImageCanvas, InstanceRecord, LabelMap, ProbabilityMap, ProbabilityTensor

MANIFEST_VERSION = 1
SCORES_VERSION = 1
_TENSOR_MAGIC = b"PQT1"
_PROBMAP_MAGIC = b"PQM1"
_CANVAS_MAGIC = b"PQC1"


# ---------------------------------------------------------------------------
# Binary payload formats


def _read_exact(path: Path, fh, size: int) -> bytes:
    data = fh.read(size)
    if len(data) != size:
        raise FormatError(f"{path}: truncated payload (wanted {size} bytes, got {len(data)})")
    return data


def write_tensor_file(path: Path | str, tensor: ProbabilityTensor) -> None:
    path = Path(path)
    values = np.ascontiguousarray(tensor.values, dtype="<f4")
    c, h, w = values.shape
    with open(path, "wb") as fh:
        fh.write(_TENSOR_MAGIC)
        fh.write(struct.pack("<III", c, h, w))
        fh.write(values.tobytes())


def read_tensor_file(path: Path | str) -> ProbabilityTensor:
    path = Path(path)
    with open(path, "rb") as fh:
        magic = _read_exact(path, fh, 4)
        if magic != _TENSOR_MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}, expected {_TENSOR_MAGIC!r}")
        c, h, w = struct.unpack("<III", _read_exact(path, fh, 12))
        payload = _read_exact(path, fh, 4 * c * h * w)
        if fh.read(1):
            raise FormatError(f"{path}: trailing bytes after tensor payload")
    values = np.frombuffer(payload, dtype="<f4").reshape(c, h, w)
    try:
        return ProbabilityTensor(values)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc


def write_prob_map_file(path: Path | str, prob_map: ProbabilityMap) -> None:
    path = Path(path)
    values = np.ascontiguousarray(prob_map.values, dtype="<f4")
    h, w = values.shape
    with open(path, "wb") as fh:
        fh.write(_PROBMAP_MAGIC)
        fh.write(struct.pack("<II", h, w))
        fh.write(values.tobytes())


def read_prob_map_file(path: Path | str) -> ProbabilityMap:
    path = Path(path)
    with open(path, "rb") as fh:
        magic = _read_exact(path, fh, 4)
        if magic != _PROBMAP_MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}, expected {_PROBMAP_MAGIC!r}")
        h, w = struct.unpack("<II", _read_exact(path, fh, 8))
        payload = _read_exact(path, fh, 4 * h * w)
        if fh.read(1):
            raise FormatError(f"{path}: trailing bytes after probability map payload")
    values = np.frombuffer(payload, dtype="<f4").reshape(h, w)
    try:
        return ProbabilityMap(values)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc


def write_label_map_png(path: Path | str, label_map: LabelMap) -> None:
    values = label_map.values
    if int(values.max()) > 255:
        raise FormatError(f"{path}: label maps support at most 256 categories")
    Image.fromarray(values.astype(np.uint8), mode="L").save(Path(path), format="PNG")


def read_label_map_png(path: Path | str) -> LabelMap:
    path = Path(path)
    try:
        with Image.open(path) as img:
            if img.mode != "L":
                raise FormatError(f"{path}: label map must be 8-bit single-channel, got {img.mode}")
            values = np.asarray(img, dtype=np.uint8)
    except FileNotFoundError:
        raise
    except FormatError:
        raise
    except Exception as exc:
        raise FormatError(f"{path}: cannot decode label map image: {exc}") from exc
    return LabelMap(values.astype(np.int32))


def write_gt_canvas(path: Path | str, canvas: ImageCanvas) -> None:
    path = Path(path)
    if int(canvas.semantic.max()) > 255:
        raise FormatError(f"{path}: reference canvases support at most 256 categories")
    if int(canvas.instance_index.max()) > np.iinfo(np.int16).max:
        raise FormatError(f"{path}: too many instances for i16 slots")
    with open(path, "wb") as fh:
        fh.write(_CANVAS_MAGIC)
        fh.write(struct.pack("<II", canvas.height, canvas.width))
        fh.write(canvas.semantic.astype(np.uint8).tobytes())
        fh.write(canvas.instance_index.astype("<i2").tobytes())


def read_gt_canvas(path: Path | str, image_id: str) -> ImageCanvas:
    path = Path(path)
    with open(path, "rb") as fh:
        magic = _read_exact(path, fh, 4)
        if magic != _CANVAS_MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}, expected {_CANVAS_MAGIC!r}")
        h, w = struct.unpack("<II", _read_exact(path, fh, 8))
        semantic = np.frombuffer(_read_exact(path, fh, h * w), dtype=np.uint8).reshape(h, w)
        index = np.frombuffer(_read_exact(path, fh, 2 * h * w), dtype="<i2").reshape(h, w)
        if fh.read(1):
            raise FormatError(f"{path}: trailing bytes after canvas payload")
    try:
        return ImageCanvas(
            image_id=image_id,
            semantic=semantic.astype(np.int32),
            instance_index=index.astype(np.int32),
        )
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc


# ---------------------------------------------------------------------------
# Manifest


@dataclass(frozen=True)
class ManifestImage:
    image_id: str
    height: int
    width: int
    gt_path: str | None = None


@dataclass(frozen=True)
class ManifestInstance:
    instance_id: str
    image_id: str
    box: tuple[int, int, int, int]
    box_score: float
    iou_score: float | None = None
    probvals_path: str | None = None
    labelmap_path: str | None = None
    probmap_path: str | None = None


@dataclass(frozen=True)
class Manifest:
    categories: tuple[str, ...]
    images: tuple[ManifestImage, ...]
    instances: tuple[ManifestInstance, ...]
    root: Path
    version: int = MANIFEST_VERSION

    @property
    def num_categories(self) -> int:
        return len(self.categories)

    def image(self, image_id: str) -> ManifestImage:
        for img in self.images:
            if img.image_id == image_id:
                return img
        raise ManifestError(f"unknown image id {image_id!r}")

    def instances_for(self, image_id: str) -> list[ManifestInstance]:
        return sorted(
            (inst for inst in self.instances if inst.image_id == image_id),
            key=lambda inst: inst.instance_id,
        )


def _as_str(value: Any, ctx: str) -> str:
    if not isinstance(value, str) or not value:
        raise ManifestError(f"{ctx}: expected a non-empty string, got {value!r}")
    return value


def _as_int(value: Any, ctx: str, minimum: int | None = None) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ManifestError(f"{ctx}: expected an integer, got {value!r}")
    if minimum is not None and value < minimum:
        raise ManifestError(f"{ctx}: expected >= {minimum}, got {value}")
    return value


def _as_float(value: Any, ctx: str, lo: float, hi: float) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ManifestError(f"{ctx}: expected a number, got {value!r}")
    value = float(value)
    if not np.isfinite(value) or not lo <= value <= hi:
        raise ManifestError(f"{ctx}: expected a value in [{lo}, {hi}], got {value}")
    return value


def load_manifest(path: Path | str) -> Manifest:
    """Parse and validate a manifest; payload files are checked for
    existence here and loaded lazily afterwards."""
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"manifest not found: {path}")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ManifestError(f"{path}: manifest must be a JSON object")
    root = path.parent

    version = _as_int(raw.get("version"), "version", minimum=1)
    if version != MANIFEST_VERSION:
        raise ManifestError(f"version: unsupported manifest version {version}")
    categories = raw.get("categories")
    if not isinstance(categories, list) or len(categories) < 2:
        raise ManifestError("categories: expected a list of at least 2 category names")
    categories = tuple(_as_str(c, f"categories[{i}]") for i, c in enumerate(categories))
    if len(categories) > 256:
        raise ManifestError("categories: at most 256 categories are supported")

    images_raw = raw.get("images")
    if not isinstance(images_raw, list):
        raise ManifestError("images: expected a list")
    images = []
    seen_images: set[str] = set()
    for i, item in enumerate(images_raw):
        ctx = f"images[{i}]"
        if not isinstance(item, dict):
            raise ManifestError(f"{ctx}: expected an object")
        image_id = _as_str(item.get("image_id"), f"{ctx}.image_id")
        if image_id in seen_images:
            raise ManifestError(f"{ctx}.image_id: duplicate id {image_id!r}")
        seen_images.add(image_id)
        gt_path = item.get("gt_path")
        if gt_path is not None:
            gt_path = _as_str(gt_path, f"{ctx}.gt_path")
            if not (root / gt_path).is_file():
                raise ManifestError(f"{ctx}.gt_path: file not found: {root / gt_path}")
        images.append(
            ManifestImage(
                image_id=image_id,
                height=_as_int(item.get("height"), f"{ctx}.height", minimum=1),
                width=_as_int(item.get("width"), f"{ctx}.width", minimum=1),
                gt_path=gt_path,
            )
        )

    instances_raw = raw.get("instances")
    if not isinstance(instances_raw, list):
        raise ManifestError("instances: expected a list")
    instances = []
    seen_instances: set[str] = set()
    for i, item in enumerate(instances_raw):
        ctx = f"instances[{i}]"
        if not isinstance(item, dict):
            raise ManifestError(f"{ctx}: expected an object")
        instance_id = _as_str(item.get("instance_id"), f"{ctx}.instance_id")
        if instance_id in seen_instances:
            raise ManifestError(f"{ctx}.instance_id: duplicate id {instance_id!r}")
        seen_instances.add(instance_id)
        image_id = _as_str(item.get("image_id"), f"{ctx}.image_id")
        if image_id not in seen_images:
            raise ManifestError(f"{ctx}.image_id: unknown image {image_id!r}")
        box_raw = item.get("box")
        if not isinstance(box_raw, list) or len(box_raw) != 4:
            raise ManifestError(f"{ctx}.box: expected [x, y, w, h], got {box_raw!r}")
        box = tuple(_as_int(v, f"{ctx}.box[{j}]") for j, v in enumerate(box_raw))
        if box[2] <= 0 or box[3] <= 0:
            raise ManifestError(f"{ctx}.box: width and height must be positive, got {box}")
        box_score = _as_float(item.get("box_score"), f"{ctx}.box_score", 0.0, 1.0)
        iou_score = item.get("iou_score")
        if iou_score is not None:
            iou_score = _as_float(iou_score, f"{ctx}.iou_score", 0.0, 1.0)

        paths = {}
        for key in ("probvals_path", "labelmap_path", "probmap_path"):
            value = item.get(key)
            if value is not None:
                value = _as_str(value, f"{ctx}.{key}")
                if not (root / value).is_file():
                    raise ManifestError(f"{ctx}.{key}: file not found: {root / value}")
            paths[key] = value
        has_tensor = paths["probvals_path"] is not None
        has_maps = paths["labelmap_path"] is not None and paths["probmap_path"] is not None
        if has_tensor == has_maps or (
            not has_tensor and (paths["labelmap_path"] is None) != (paths["probmap_path"] is None)
        ):
            raise ManifestError(
                f"{ctx}: expected exactly one storage form, either probvals_path or "
                f"labelmap_path + probmap_path"
            )
        instances.append(
            ManifestInstance(
                instance_id=instance_id,
                image_id=image_id,
                box=box,  # type: ignore[arg-type]
                box_score=box_score,
                iou_score=iou_score,
                **paths,
            )
        )

    return Manifest(
        categories=categories,
        images=tuple(images),
        instances=tuple(instances),
        root=root,
        version=version,
    )


def save_manifest(manifest: Manifest, path: Path | str) -> None:
    """Serialize a manifest as deterministic JSON (paths stay relative to
    the manifest location)."""
    path = Path(path)
    doc = {
        "version": manifest.version,
        "categories": list(manifest.categories),
        "images": [
            {
                "image_id": img.image_id,
                "height": img.height,
                "width": img.width,
                **({"gt_path": img.gt_path} if img.gt_path is not None else {}),
            }
            for img in manifest.images
        ],
        "instances": [
            {
                "instance_id": inst.instance_id,
                "image_id": inst.image_id,
                "box": list(inst.box),
                "box_score": inst.box_score,
                **({"iou_score": inst.iou_score} if inst.iou_score is not None else {}),
                **({"probvals_path": inst.probvals_path} if inst.probvals_path else {}),
                **({"labelmap_path": inst.labelmap_path} if inst.labelmap_path else {}),
                **({"probmap_path": inst.probmap_path} if inst.probmap_path else {}),
            }
            for inst in manifest.instances
        ],
    }
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_instance_record(manifest: Manifest, inst: ManifestInstance) -> InstanceRecord:
    """Load one instance's payload, clipping its box to the image bounds.

    A missing iou_score loads as the neutral 1.0; pair it with a zero IoU
    weight unless the corpus really carries predicted-IoU information.
    """
    image = manifest.image(inst.image_id)
    x, y, w, h = inst.box
    x0, y0 = max(x, 0), max(y, 0)
    x1, y1 = min(x + w, image.width), min(y + h, image.height)
    if x1 <= x0 or y1 <= y0:
        raise ManifestError(
            f"instance {inst.instance_id}: box {inst.box} lies outside image "
            f"{image.image_id} ({image.width}x{image.height})"
        )
    rows = slice(y0 - y, y1 - y)
    cols = slice(x0 - x, x1 - x)

    kwargs: dict[str, Any] = {}
    try:
        if inst.probvals_path is not None:
            tensor = read_tensor_file(manifest.root / inst.probvals_path)
            if tensor.num_categories != manifest.num_categories:
                raise ManifestError(
                    f"instance {inst.instance_id}: tensor has {tensor.num_categories} "
                    f"categories, manifest declares {manifest.num_categories}"
                )
            _check_payload_shape(inst, tensor.height, tensor.width)
            kwargs["tensor"] = ProbabilityTensor(tensor.values[:, rows, cols])
        else:
            label_map = read_label_map_png(manifest.root / inst.labelmap_path)
            prob_map = read_prob_map_file(manifest.root / inst.probmap_path)
            if int(label_map.values.max()) >= manifest.num_categories:
                raise ManifestError(
                    f"instance {inst.instance_id}: label map uses category "
                    f"{int(label_map.values.max())} but manifest declares "
                    f"{manifest.num_categories} categories"
                )
            _check_payload_shape(inst, label_map.height, label_map.width)
            if (prob_map.height, prob_map.width) != (label_map.height, label_map.width):
                raise ManifestError(
                    f"instance {inst.instance_id}: probability map size differs from label map"
                )
            kwargs["label_map"] = LabelMap(label_map.values[rows, cols])
            kwargs["prob_map"] = ProbabilityMap(prob_map.values[rows, cols])
    except FileNotFoundError as exc:
        raise ManifestError(f"instance {inst.instance_id}: missing payload file: {exc}") from exc

    return InstanceRecord(
        inst.instance_id,
        inst.image_id,
        (x0, y0, x1 - x0, y1 - y0),
        inst.box_score,
        1.0 if inst.iou_score is None else inst.iou_score,
        **kwargs,
    )


def _check_payload_shape(inst: ManifestInstance, height: int, width: int) -> None:
    if (height, width) != (inst.box[3], inst.box[2]):
        raise ManifestError(
            f"instance {inst.instance_id}: payload is {width}x{height} but box "
            f"{inst.box} implies {inst.box[2]}x{inst.box[3]}"
        )


def load_gt_canvas(manifest: Manifest, image: ManifestImage) -> ImageCanvas:
    if image.gt_path is None:
        raise ManifestError(f"image {image.image_id} has no gt_path; cannot evaluate")
    canvas = read_gt_canvas(manifest.root / image.gt_path, image.image_id)
    if (canvas.height, canvas.width) != (image.height, image.width):
        raise ManifestError(
            f"image {image.image_id}: reference canvas is {canvas.width}x{canvas.height}, "
            f"manifest declares {image.width}x{image.height}"
        )
    if int(canvas.semantic.max()) >= manifest.num_categories:
        raise ManifestError(
            f"image {image.image_id}: reference canvas uses category "
            f"{int(canvas.semantic.max())}, manifest declares {manifest.num_categories}"
        )
    return canvas


def instances_by_image(manifest: Manifest) -> dict[str, list[ManifestInstance]]:
    grouped: dict[str, list[ManifestInstance]] = {img.image_id: [] for img in manifest.images}
    for inst in manifest.instances:
        grouped[inst.image_id].append(inst)
    for lst in grouped.values():
        lst.sort(key=lambda i: i.instance_id)
    return grouped


# ---------------------------------------------------------------------------
# Score files


@dataclass(frozen=True)
class ScoreRow:
    image_id: str
    instance_id: str
    quality: QualityScore
    raw: RawInstanceScores


@dataclass(frozen=True)
class ScoresFile:
    threshold: float
    weights: tuple[float, float, float]
    rows: tuple[ScoreRow, ...]

    def quality_by_instance(self) -> dict[str, QualityScore]:
        return {row.instance_id: row.quality for row in self.rows}

    def raw_by_instance(self) -> dict[str, RawInstanceScores]:
        return {row.instance_id: row.raw for row in self.rows}


def write_scores_file(path: Path | str, scores: ScoresFile) -> None:
    rows = sorted(scores.rows, key=lambda r: (r.image_id, r.instance_id))
    doc = {
        "version": SCORES_VERSION,
        "threshold": scores.threshold,
        "weights": {
            "box": scores.weights[0],
            "iou": scores.weights[1],
            "pixel": scores.weights[2],
        },
        "scores": [
            {
                "image_id": row.image_id,
                "instance_id": row.instance_id,
                "instance_score": row.quality.instance_score,
                "part_scores": {str(c): v for c, v in sorted(row.quality.part_scores.items())},
                "components": {
                    "box_score": row.raw.box_score,
                    "iou_score": row.raw.iou_score,
                    "instance_pixel_score": row.raw.instance_pixel_score,
                    "category_pixel_scores": {
                        str(c): v for c, v in sorted(row.raw.category_pixel_scores.items())
                    },
                },
            }
            for row in rows
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_scores_file(path: Path | str) -> ScoresFile:
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"scores file not found: {path}")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(raw, dict) or raw.get("version") != SCORES_VERSION:
        raise ManifestError(f"{path}: not a version-{SCORES_VERSION} scores file")
    weights_raw = raw.get("weights")
    if not isinstance(weights_raw, dict):
        raise ManifestError(f"{path}: weights: expected an object")
    weights = tuple(
        _as_float(weights_raw.get(k), f"weights.{k}", 0.0, float("inf")) for k in ("box", "iou", "pixel")
    )
    rows = []
    entries = raw.get("scores")
    if not isinstance(entries, list):
        raise ManifestError(f"{path}: scores: expected a list")
    for i, item in enumerate(entries):
        ctx = f"scores[{i}]"
        if not isinstance(item, dict):
            raise ManifestError(f"{path}: {ctx}: expected an object")
        comp = item.get("components")
        if not isinstance(comp, dict):
            raise ManifestError(f"{path}: {ctx}.components: expected an object")
        part_scores = item.get("part_scores")
        cat_pixel = comp.get("category_pixel_scores")
        if not isinstance(part_scores, dict) or not isinstance(cat_pixel, dict):
            raise ManifestError(f"{path}: {ctx}: part score maps must be objects")
        instance_id = _as_str(item.get("instance_id"), f"{ctx}.instance_id")
        image_id = _as_str(item.get("image_id"), f"{ctx}.image_id")
        quality = QualityScore(
            instance_score=_as_float(item.get("instance_score"), f"{ctx}.instance_score", 0.0, 1.0),
            part_scores={
                int(c): _as_float(v, f"{ctx}.part_scores[{c}]", 0.0, 1.0)
                for c, v in part_scores.items()
            },
        )
        raw_scores = RawInstanceScores(
            instance_id=instance_id,
            image_id=image_id,
            box_score=_as_float(comp.get("box_score"), f"{ctx}.box_score", 0.0, 1.0),
            iou_score=_as_float(comp.get("iou_score"), f"{ctx}.iou_score", 0.0, 1.0),
            instance_pixel_score=_as_float(
                comp.get("instance_pixel_score"), f"{ctx}.instance_pixel_score", 0.0, 1.0
            ),
            category_pixel_scores={
                int(c): _as_float(v, f"{ctx}.category_pixel_scores[{c}]", 0.0, 1.0)
                for c, v in cat_pixel.items()
            },
        )
        rows.append(
            ScoreRow(image_id=image_id, instance_id=instance_id, quality=quality, raw=raw_scores)
        )
    threshold = _as_float(raw.get("threshold"), "threshold", 0.0, 1.0)
    return ScoresFile(threshold=threshold, weights=weights, rows=tuple(rows))  # type: ignore[arg-type]


# ---------------------------------------------------------------------------
# Truth sidecar (synthetic corpora)


@dataclass(frozen=True)
class TruthRecord:
    """Generation-time quality of one synthetic prediction against its
    source reference human."""

    instance_id: str
    gt_instance_id: str
    box_iou: float
    miou: float
    part_iou: dict[int, float]


def write_truth_sidecar(path: Path | str, records: Iterable[TruthRecord]) -> None:
    doc = {
        "version": 1,
        "instances": {
            rec.instance_id: {
                "gt_instance_id": rec.gt_instance_id,
                "box_iou": rec.box_iou,
                "miou": rec.miou,
                "part_iou": {str(c): v for c, v in sorted(rec.part_iou.items())},
            }
            for rec in sorted(records, key=lambda r: r.instance_id)
        },
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_truth_sidecar(path: Path | str) -> dict[str, TruthRecord]:
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"truth sidecar not found: {path}")
    raw = json.loads(path.read_text(encoding="utf-8"))
    if not isinstance(raw, dict) or raw.get("version") != 1:
        raise ManifestError(f"{path}: not a version-1 truth sidecar")
    out = {}
    for instance_id, item in raw.get("instances", {}).items():
        out[instance_id] = TruthRecord(
            instance_id=instance_id,
            gt_instance_id=item["gt_instance_id"],
            box_iou=float(item["box_iou"]),
            miou=float(item["miou"]),
            part_iou={int(c): float(v) for c, v in item["part_iou"].items()},
        )
    return out
