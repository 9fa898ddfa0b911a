"""Face localization: pluggable detector, confidence gate, IoU, NMS.

The detector itself is an external artifact: anything with a
`predict(image) -> list[Detection]` method (boxes in the given image's
coordinates). This module owns the surrounding contract: letterboxing to
the square input size, confidence thresholding, NMS, and mapping boxes
back to original coordinates, keeping at most one face per image.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, runtime_checkable

import numpy as np
from PIL import Image

from . import kernels
from .errors import DetectorError, RejectedInputError
from .geometry import BoundingBox

LETTERBOX_FILL = 114  # conventional mid-gray padding


@dataclass(frozen=True)
class Detection:
    box: BoundingBox
    confidence: float
    class_id: int = 0

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise RejectedInputError(f"confidence must be in [0, 1], got {self.confidence}")


@dataclass
class DetectorConfig:
    input_size: int = 640
    conf_threshold: float = 0.8
    iou_threshold: float = 0.5
    model_ref: object | None = None

    def __post_init__(self):
        if self.input_size <= 0:
            raise RejectedInputError(f"input_size must be positive, got {self.input_size}")
        for name in ("conf_threshold", "iou_threshold"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise RejectedInputError(f"{name} must be in (0, 1], got {v}")


@runtime_checkable
class DetectorModel(Protocol):
    def predict(self, image: np.ndarray) -> list[Detection]: ...


@dataclass
class StubDetector:
    """Fixed-output detector for tests and dry runs."""

    detections: list[Detection] = field(default_factory=list)
    name: str = "stub"

    def predict(self, image: np.ndarray) -> list[Detection]:
        return list(self.detections)


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection-over-union of two boxes; 0 when disjoint."""
    ix = max(0.0, min(a.x2, b.x2) - max(a.x, b.x))
    iy = max(0.0, min(a.y2, b.y2) - max(a.y, b.y))
    inter = ix * iy
    union = a.w * a.h + b.w * b.h - inter
    return inter / union if union > 0 else 0.0


def nms(dets: list[Detection], iou_threshold: float) -> list[Detection]:
    """Greedy NMS by descending confidence, ties broken by input order.

    A detection is suppressed only when its IoU with an already-kept one is
    strictly greater than the threshold.
    """
    if not dets:
        return []
    boxes = np.array([[d.box.x, d.box.y, d.box.w, d.box.h] for d in dets], dtype=np.float64)
    scores = np.array([d.confidence for d in dets], dtype=np.float64)
    kept = kernels.nms_keep(boxes, scores, float(iou_threshold))
    return [dets[i] for i in kept]


def letterbox(image: np.ndarray, size: int) -> tuple[np.ndarray, float, tuple[float, float]]:
    """Resize to fit a size x size square, preserving aspect, gray padding.

    Returns (square image, scale, (dx, dy)); original = (resized - pad) / scale.
    """
    img = np.asarray(image)
    h, w = img.shape[:2]
    if h == 0 or w == 0:
        raise RejectedInputError("empty image")
    scale = size / max(h, w)
    new_w = int(round(w * scale))
    new_h = int(round(h * scale))
    resized = np.asarray(Image.fromarray(img).resize((new_w, new_h), Image.BILINEAR))
    dx = round((size - new_w) / 2)
    dy = round((size - new_h) / 2)
    if img.ndim == 3:
        canvas = np.full((size, size, img.shape[2]), LETTERBOX_FILL, dtype=img.dtype)
        canvas[dy : dy + new_h, dx : dx + new_w, :] = resized
    else:
        canvas = np.full((size, size), LETTERBOX_FILL, dtype=img.dtype)
        canvas[dy : dy + new_h, dx : dx + new_w] = resized
    return canvas, scale, (float(dx), float(dy))


def detect_face(image: np.ndarray, cfg: DetectorConfig) -> Detection | None:
    """Run the pluggable detector and return the single best face, if any.

    Letterboxes to cfg.input_size, drops detections below the confidence
    threshold, applies NMS, maps the surviving boxes back to original
    coordinates and keeps the highest-confidence one.
    """
    model = cfg.model_ref
    if model is None or not isinstance(model, DetectorModel):
        raise DetectorError(f"model_ref {model!r} does not provide predict()")
    square, scale, (dx, dy) = letterbox(image, cfg.input_size)
    try:
        raw = model.predict(square)
    except Exception as exc:
        name = getattr(model, "name", type(model).__name__)
        raise DetectorError(f"detector {name!r} failed: {exc}") from exc

    confident = [d for d in raw if d.confidence >= cfg.conf_threshold]
    kept = nms(confident, cfg.iou_threshold)
    if not kept:
        return None
    best = kept[0]  # nms output is ordered by descending confidence
    box = BoundingBox(
        x=(best.box.x - dx) / scale,
        y=(best.box.y - dy) / scale,
        w=best.box.w / scale,
        h=best.box.h / scale,
    )
    return Detection(box=box, confidence=best.confidence, class_id=best.class_id)


# --- detector fine-tuning export ----------------------------------------------


def export_training_boxes(
    records: list[tuple[str, BoundingBox, tuple[int, int]]], out_dir: str | Path
) -> list[Path]:
    """One text file per image: `class cx cy w h` normalized to [0, 1].

    `records` are (image_stem, box, (image_h, image_w)) tuples; the format is
    the usual one-object-per-line detector annotation.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for stem, box, (h, w) in records:
        cx = (box.x + box.w / 2.0) / w
        cy = (box.y + box.h / 2.0) / h
        path = out_dir / f"{stem}.txt"
        path.write_text(f"0 {cx:.6f} {cy:.6f} {box.w / w:.6f} {box.h / h:.6f}\n")
        written.append(path)
    return written


def save_detections(dets: dict[str, Detection | None], path: str | Path) -> None:
    doc = {
        fid: None
        if d is None
        else {"box": d.box.to_dict(), "confidence": d.confidence, "class_id": d.class_id}
        for fid, d in sorted(dets.items())
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def load_detections(path: str | Path) -> dict[str, Detection | None]:
    doc = json.loads(Path(path).read_text())
    out: dict[str, Detection | None] = {}
    for fid, d in doc.items():
        out[fid] = (
            None
            if d is None
            else Detection(
                box=BoundingBox.from_dict(d["box"]),
                confidence=float(d["confidence"]),
                class_id=int(d.get("class_id", 0)),
            )
        )
    return out
