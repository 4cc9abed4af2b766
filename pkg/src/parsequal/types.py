"""Core domain types shared by every stage of the toolkit.

All types are immutable after construction (arrays are frozen via the
writeable flag) and therefore safe to share across threads and processes.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field

import numpy as np

# Probability columns serialized at reduced precision must still validate.
PROB_SUM_TOLERANCE = 1e-4
PROB_VALUE_TOLERANCE = 1e-6

BACKGROUND = 0


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class ProbabilityTensor:
    """Dense per-instance class-probability volume shaped (C, H, W).

    Category 0 is background. Every pixel column must be a normalized
    probability distribution (sum within ``PROB_SUM_TOLERANCE`` of 1).
    Callers holding raw network logits must apply their own softmax first.
    """

    values: np.ndarray

    def __post_init__(self):
        v = np.ascontiguousarray(np.asarray(self.values, dtype=np.float64))
        if v.ndim != 3:
            raise ValueError(f"probability tensor must be (C, H, W), got shape {v.shape}")
        c, h, w = v.shape
        if c < 2:
            raise ValueError(f"need at least 2 categories (background + 1 part), got {c}")
        if h < 1 or w < 1:
            raise ValueError(f"empty spatial dims in tensor shape {v.shape}")
        if not np.isfinite(v).all():
            raise ValueError("probability tensor contains non-finite values")
        if float(v.min()) < 0.0 or float(v.max()) > 1.0 + PROB_VALUE_TOLERANCE:
            raise ValueError("probability values must lie in [0, 1]")
        dev = float(np.abs(v.sum(axis=0) - 1.0).max())
        if dev > PROB_SUM_TOLERANCE:
            raise ValueError(
                f"per-pixel probabilities must sum to 1 within {PROB_SUM_TOLERANCE:g} "
                f"(worst deviation {dev:.3e})"
            )
        object.__setattr__(self, "values", _frozen(v))

    @property
    def num_categories(self) -> int:
        return self.values.shape[0]

    @property
    def height(self) -> int:
        return self.values.shape[1]

    @property
    def width(self) -> int:
        return self.values.shape[2]


@dataclass(frozen=True, eq=False)
class LabelMap:
    """Per-pixel argmax category indices, shaped (H, W)."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 2 or v.size == 0:
            raise ValueError(f"label map must be non-empty (H, W), got shape {v.shape}")
        if not np.issubdtype(v.dtype, np.integer):
            raise ValueError(f"label map must be integer-typed, got {v.dtype}")
        if int(v.min()) < 0:
            raise ValueError("label map contains negative category indices")
        object.__setattr__(self, "values", _frozen(np.ascontiguousarray(v, dtype=np.int32)))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True, eq=False)
class ProbabilityMap:
    """Per-pixel maximum class confidence, shaped (H, W), values in [0, 1]."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or v.size == 0:
            raise ValueError(f"probability map must be non-empty (H, W), got shape {v.shape}")
        if not np.isfinite(v).all():
            raise ValueError("probability map contains non-finite values")
        if float(v.min()) < 0.0 or float(v.max()) > 1.0 + PROB_VALUE_TOLERANCE:
            raise ValueError("probability map values must lie in [0, 1]")
        v = np.minimum(np.ascontiguousarray(v), 1.0)
        object.__setattr__(self, "values", _frozen(v))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True, eq=False)
class HighConfidenceMask:
    """Boolean mask of pixels whose confidence reaches a threshold."""

    bits: np.ndarray
    threshold: float

    def __post_init__(self):
        b = np.asarray(self.bits)
        if b.ndim != 2 or b.dtype != np.bool_:
            raise ValueError("mask bits must be a 2-d boolean array")
        if not 0.0 <= self.threshold < 1.0:
            raise ValueError(f"threshold must lie in [0, 1), got {self.threshold}")
        object.__setattr__(self, "bits", _frozen(np.ascontiguousarray(b)))

    @classmethod
    def from_probabilities(
        cls,
        prob_map: ProbabilityMap,
        threshold: float,
        restrict: np.ndarray | None = None,
    ) -> "HighConfidenceMask":
        """Mask of pixels with confidence >= threshold, optionally restricted
        to a pixel selection (e.g. one predicted category)."""
        bits = prob_map.values >= threshold
        if restrict is not None:
            bits = bits & restrict
        return cls(bits, threshold)

    @property
    def count(self) -> int:
        return int(self.bits.sum())


def derive_maps(tensor: ProbabilityTensor) -> tuple[LabelMap, ProbabilityMap]:
    """Per-pixel argmax category and maximum confidence of a tensor.

    Argmax ties are broken toward the lowest category index.
    """
    labels = np.argmax(tensor.values, axis=0).astype(np.int32)
    probs = np.max(tensor.values, axis=0)
    return LabelMap(labels), ProbabilityMap(probs)


def _check_score(name: str, value: float) -> float:
    value = float(value)
    if not np.isfinite(value) or not 0.0 <= value <= 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {value!r}")
    return value


def _check_box(box: tuple[int, int, int, int]) -> tuple[int, int, int, int]:
    if len(box) != 4:
        raise ValueError(f"box must be (x, y, w, h), got {box!r}")
    x, y, w, h = (int(v) for v in box)
    if w <= 0 or h <= 0:
        raise ValueError(f"box must have positive size, got {box!r}")
    if x < 0 or y < 0:
        raise ValueError(f"box origin must be non-negative, got {box!r}")
    return (x, y, w, h)


class InstanceRecord:
    """One detected human: box, detector score, predicted-IoU score, and the
    parsing output as either a full probability tensor or a pre-argmaxed
    (label map, probability map) pair.

    When constructed from a tensor, the derived pair is computed lazily and
    cached under a lock; records are immutable otherwise.
    """

    __slots__ = (
        "instance_id",
        "image_id",
        "box",
        "box_score",
        "iou_score",
        "tensor",
        "_label_map",
        "_prob_map",
        "_lock",
    )

    def __init__(
        self,
        instance_id: str,
        image_id: str,
        box: tuple[int, int, int, int],
        box_score: float,
        iou_score: float,
        *,
        tensor: ProbabilityTensor | None = None,
        label_map: LabelMap | None = None,
        prob_map: ProbabilityMap | None = None,
    ):
        self.instance_id = str(instance_id)
        self.image_id = str(image_id)
        self.box = _check_box(box)
        self.box_score = _check_score("box_score", box_score)
        self.iou_score = _check_score("iou_score", iou_score)

        has_tensor = tensor is not None
        has_maps = label_map is not None or prob_map is not None
        if has_tensor == has_maps:
            raise ValueError(
                "instance needs exactly one storage form: a tensor, or a "
                "(label_map, prob_map) pair"
            )
        if has_maps and (label_map is None or prob_map is None):
            raise ValueError("label_map and prob_map must be supplied together")

        x, y, w, h = self.box
        src = tensor if tensor is not None else label_map
        if (src.height, src.width) != (h, w):
            raise ValueError(
                f"instance {self.instance_id}: box size ({w}x{h}) does not match "
                f"map size ({src.width}x{src.height})"
            )
        if has_maps and (label_map.height, label_map.width) != (prob_map.height, prob_map.width):
            raise ValueError(f"instance {self.instance_id}: label/prob map size mismatch")

        self.tensor = tensor
        self._label_map = label_map
        self._prob_map = prob_map
        self._lock = threading.Lock()

    def maps(self) -> tuple[LabelMap, ProbabilityMap]:
        """The (label map, probability map) pair, derived on demand."""
        if self._label_map is None:
            with self._lock:
                if self._label_map is None:
                    lm, pm = derive_maps(self.tensor)
                    self._prob_map = pm
                    self._label_map = lm
        return self._label_map, self._prob_map

    @property
    def label_map(self) -> LabelMap:
        return self.maps()[0]

    @property
    def prob_map(self) -> ProbabilityMap:
        return self.maps()[1]

    def clip_to(self, image_height: int, image_width: int) -> "InstanceRecord":
        """Clip the box to image bounds, cropping stored arrays to match.

        Returns self when already inside bounds; raises when the box has no
        overlap with the image at all.
        """
        x, y, w, h = self.box
        x0, y0 = max(x, 0), max(y, 0)
        x1, y1 = min(x + w, image_width), min(y + h, image_height)
        if x1 <= x0 or y1 <= y0:
            raise ValueError(
                f"instance {self.instance_id}: box {self.box} lies outside the "
                f"{image_width}x{image_height} image"
            )
        if (x0, y0, x1 - x0, y1 - y0) == self.box:
            return self
        rows = slice(y0 - y, y1 - y)
        cols = slice(x0 - x, x1 - x)
        kwargs = {}
        if self.tensor is not None:
            kwargs["tensor"] = ProbabilityTensor(self.tensor.values[:, rows, cols])
        else:
            kwargs["label_map"] = LabelMap(self._label_map.values[rows, cols])
            kwargs["prob_map"] = ProbabilityMap(self._prob_map.values[rows, cols])
        return InstanceRecord(
            self.instance_id,
            self.image_id,
            (x0, y0, x1 - x0, y1 - y0),
            self.box_score,
            self.iou_score,
            **kwargs,
        )

    def with_box_score(self, box_score: float) -> "InstanceRecord":
        """Copy of this record with a replaced detector score."""
        kwargs = (
            {"tensor": self.tensor}
            if self.tensor is not None
            else {"label_map": self._label_map, "prob_map": self._prob_map}
        )
        return InstanceRecord(
            self.instance_id, self.image_id, self.box, box_score, self.iou_score, **kwargs
        )

    def __repr__(self):
        return (
            f"InstanceRecord({self.instance_id!r}, image={self.image_id!r}, "
            f"box={self.box}, box_score={self.box_score:.4f}, iou_score={self.iou_score:.4f})"
        )

    # The cache lock cannot cross process boundaries; rebuild it on load.
    def __getstate__(self):
        return {name: getattr(self, name) for name in self.__slots__ if name != "_lock"}

    def __setstate__(self, state):
        for name, value in state.items():
            setattr(self, name, value)
        self._lock = threading.Lock()


@dataclass(frozen=True)
class QualityWeights:
    """Exponents weighting the detector, predicted-IoU, and pixel scores in
    the fused quality score. Non-negative, not all zero; the fusion
    normalizes by their sum, so only ratios matter."""

    box: float = 1.0
    iou: float = 1.0
    pixel: float = 1.0

    def __post_init__(self):
        for name, v in (("box", self.box), ("iou", self.iou), ("pixel", self.pixel)):
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"{name} weight must be finite and >= 0, got {v!r}")
        if self.total == 0.0:
            raise ValueError("at least one weight must be positive")

    @property
    def total(self) -> float:
        return self.box + self.iou + self.pixel

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.box, self.iou, self.pixel)


@dataclass(frozen=True, eq=False)
class GroundTruthInstance:
    """Reference human: a label map over its tight bounding box, 0 marking
    pixels that do not belong to this person."""

    instance_id: str
    image_id: str
    label_map: LabelMap
    box: tuple[int, int, int, int]

    def __post_init__(self):
        object.__setattr__(self, "box", _check_box(self.box))
        x, y, w, h = self.box
        if (self.label_map.height, self.label_map.width) != (h, w):
            raise ValueError(f"gt instance {self.instance_id}: box/label map size mismatch")
        if not (self.label_map.values != BACKGROUND).any():
            raise ValueError(f"gt instance {self.instance_id} has no foreground pixels")


@dataclass(frozen=True, eq=False)
class ImageCanvas:
    """Image-level composite of instance predictions (or ground truth):
    per-pixel semantic category plus the owning instance slot (-1 = none)."""

    image_id: str
    semantic: np.ndarray
    instance_index: np.ndarray

    def __post_init__(self):
        sem = np.ascontiguousarray(np.asarray(self.semantic), dtype=np.int32)
        idx = np.ascontiguousarray(np.asarray(self.instance_index), dtype=np.int32)
        if sem.ndim != 2 or sem.shape != idx.shape or sem.size == 0:
            raise ValueError(
                f"canvas arrays must share a non-empty (H, W) shape, got "
                f"{sem.shape} vs {idx.shape}"
            )
        if int(sem.min()) < 0:
            raise ValueError("canvas semantic values must be >= 0")
        if int(idx.min()) < -1:
            raise ValueError("canvas instance indices must be >= -1")
        if (sem[idx == -1] != BACKGROUND).any():
            raise ValueError("unowned canvas pixels must be background")
        if (sem[idx >= 0] == BACKGROUND).any():
            raise ValueError("owned canvas pixels must carry a non-background category")
        object.__setattr__(self, "semantic", _frozen(sem))
        object.__setattr__(self, "instance_index", _frozen(idx))

    @property
    def height(self) -> int:
        return self.semantic.shape[0]

    @property
    def width(self) -> int:
        return self.semantic.shape[1]


def gt_instances_from_canvas(canvas: ImageCanvas) -> list[GroundTruthInstance]:
    """Split a ground-truth canvas into per-human instances.

    Instance ids are synthesized as "<image_id>#g<slot>" so extraction is
    deterministic; humans with no visible pixels are skipped.
    """
    out = []
    slots = np.unique(canvas.instance_index)
    for slot in slots:
        if slot < 0:
            continue
        mask = canvas.instance_index == slot
        ys, xs = np.nonzero(mask)
        y0, y1 = int(ys.min()), int(ys.max()) + 1
        x0, x1 = int(xs.min()), int(xs.max()) + 1
        crop = np.where(mask[y0:y1, x0:x1], canvas.semantic[y0:y1, x0:x1], BACKGROUND)
        out.append(
            GroundTruthInstance(
                instance_id=f"{canvas.image_id}#g{int(slot)}",
                image_id=canvas.image_id,
                label_map=LabelMap(crop),
                box=(x0, y0, x1 - x0, y1 - y0),
            )
        )
    return out
