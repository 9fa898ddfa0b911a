"""Keypoint schema, face alignment geometry, and the pose visibility gate.

The alignment rotates the face about the eye midpoint so the eye line
becomes horizontal. Coordinates are image coordinates: x right, y down.
A positive measured eye tilt (image-right eye lower) is cancelled by the
rotation matrix built here.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .errors import DegenerateGeometryError, FlaggedFrameError, PoseError, RejectedInputError

# Canonical keypoint names, fixed order. "left"/"right" are anatomical.
KEYPOINT_NAMES = (
    "upper_nose",
    "middle_nose",
    "right_eye",
    "right_beak",
    "middle_beak",
    "left_beak",
    "left_eye",
)

# Yaw gate: frames where any of these is invisible are excluded.
GATE_POINTS = ("left_eye", "right_eye", "left_beak", "right_beak")

# Eyes closer than this are numerically unstable for the angle estimate.
COINCIDENT_EYE_PX = 2.0


@dataclass(frozen=True)
class Point2:
    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise RejectedInputError(f"non-finite point ({self.x}, {self.y})")

    def as_tuple(self) -> tuple[float, float]:
        return (self.x, self.y)


@dataclass(frozen=True)
class BoundingBox:
    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.x, self.y, self.w, self.h)):
            raise RejectedInputError("non-finite bounding box")
        if self.w <= 0 or self.h <= 0:
            raise RejectedInputError(f"bounding box needs positive size, got w={self.w} h={self.h}")

    @property
    def x2(self) -> float:
        return self.x + self.w

    @property
    def y2(self) -> float:
        return self.y + self.h

    def corners(self) -> list[tuple[float, float]]:
        return [(self.x, self.y), (self.x2, self.y), (self.x2, self.y2), (self.x, self.y2)]

    def contains(self, p: Point2, tol: float = 1e-6) -> bool:
        return (self.x - tol) <= p.x <= (self.x2 + tol) and (self.y - tol) <= p.y <= (self.y2 + tol)

    def intersect(self, other: "BoundingBox") -> "BoundingBox":
        x1 = max(self.x, other.x)
        y1 = max(self.y, other.y)
        x2 = min(self.x2, other.x2)
        y2 = min(self.y2, other.y2)
        if x2 <= x1 or y2 <= y1:
            raise FlaggedFrameError("boxes do not overlap")
        return BoundingBox(x1, y1, x2 - x1, y2 - y1)

    def to_dict(self) -> dict:
        return {"x": self.x, "y": self.y, "w": self.w, "h": self.h}

    @classmethod
    def from_dict(cls, d: dict) -> "BoundingBox":
        return cls(float(d["x"]), float(d["y"]), float(d["w"]), float(d["h"]))


@dataclass
class KeypointSet:
    """The seven named facial landmarks with per-point visibility."""

    points: dict[str, Point2]
    visible: dict[str, bool] = field(default_factory=dict)

    def __post_init__(self):
        if set(self.points.keys()) != set(KEYPOINT_NAMES):
            raise RejectedInputError(
                f"keypoints must be exactly {list(KEYPOINT_NAMES)}, got {list(self.points.keys())}"
            )
        self.points = {name: self.points[name] for name in KEYPOINT_NAMES}
        self.visible = {name: bool(self.visible.get(name, True)) for name in KEYPOINT_NAMES}

    def __getitem__(self, name: str) -> Point2:
        return self.points[name]

    def is_visible(self, name: str) -> bool:
        return self.visible[name]

    def as_array(self) -> np.ndarray:
        return np.array([[p.x, p.y] for p in self.points.values()], dtype=np.float64)

    def visible_array(self) -> np.ndarray:
        return np.array([self.visible[n] for n in KEYPOINT_NAMES], dtype=bool)

    @classmethod
    def from_arrays(cls, xy: np.ndarray, visible=None) -> "KeypointSet":
        xy = np.asarray(xy, dtype=np.float64)
        if xy.shape != (7, 2):
            raise RejectedInputError(f"expected (7, 2) keypoint array, got {xy.shape}")
        vis = [True] * 7 if visible is None else [bool(v) for v in visible]
        return cls(
            points={n: Point2(float(x), float(y)) for n, (x, y) in zip(KEYPOINT_NAMES, xy)},
            visible=dict(zip(KEYPOINT_NAMES, vis)),
        )

    def translate(self, dx: float, dy: float) -> "KeypointSet":
        return KeypointSet(
            points={n: Point2(p.x + dx, p.y + dy) for n, p in self.points.items()},
            visible=dict(self.visible),
        )

    def transform(self, t: "AffineTransform") -> "KeypointSet":
        return KeypointSet(
            points={n: apply_to_point(t, p) for n, p in self.points.items()},
            visible=dict(self.visible),
        )

    def to_dict(self) -> dict:
        return {
            "points": {n: [p.x, p.y] for n, p in self.points.items()},
            "visible": dict(self.visible),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "KeypointSet":
        pts = d.get("points", {})
        missing = [n for n in KEYPOINT_NAMES if n not in pts]
        if missing:
            raise RejectedInputError(f"keypoint dict missing {missing}")
        return cls(
            points={n: Point2(*map(float, pts[n])) for n in KEYPOINT_NAMES},
            visible={n: bool(d.get("visible", {}).get(n, True)) for n in KEYPOINT_NAMES},
        )


@dataclass(frozen=True)
class AffineTransform:
    """2x3 row-major affine matrix mapping source points to output points."""

    m: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.m, dtype=np.float64)
        if m.shape != (2, 3):
            raise RejectedInputError(f"affine matrix must be 2x3, got {m.shape}")
        if not np.all(np.isfinite(m)):
            raise RejectedInputError("non-finite affine matrix")
        object.__setattr__(self, "m", m)

    @classmethod
    def identity(cls) -> "AffineTransform":
        return cls(np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]))

    def inverse(self) -> "AffineTransform":
        a = self.m[:, :2]
        t = self.m[:, 2]
        det = a[0, 0] * a[1, 1] - a[0, 1] * a[1, 0]
        if abs(det) < 1e-12:
            raise DegenerateGeometryError("affine matrix is singular")
        ainv = np.array([[a[1, 1], -a[0, 1]], [-a[1, 0], a[0, 0]]]) / det
        return AffineTransform(np.hstack([ainv, (-ainv @ t)[:, None]]))


def eye_midpoint(left_eye: Point2, right_eye: Point2) -> Point2:
    """Component-wise mean of the two eye keypoints."""
    return Point2((left_eye.x + right_eye.x) / 2.0, (left_eye.y + right_eye.y) / 2.0)


def adjust_to_box(m1: Point2, box: BoundingBox) -> Point2:
    """Express a point relative to the box top-left corner (the rotation pivot)."""
    return Point2(m1.x - box.x, m1.y - box.y)


def rotation_angle(left_eye: Point2, right_eye: Point2) -> float:
    """Eye-line tilt in degrees, range (-180, 180].

    Point 1 is the image-left eye (smaller x; ties keep the given order) so
    a frontal upright face measures 0. Raises for near-coincident eyes.
    """
    if math.dist(left_eye.as_tuple(), right_eye.as_tuple()) < COINCIDENT_EYE_PX:
        raise DegenerateGeometryError(
            f"eyes {left_eye.as_tuple()} / {right_eye.as_tuple()} closer than {COINCIDENT_EYE_PX} px"
        )
    p1, p2 = (left_eye, right_eye) if left_eye.x <= right_eye.x else (right_eye, left_eye)
    return math.degrees(math.atan2(p2.y - p1.y, p2.x - p1.x))


def rotation_matrix(center: Point2, angle_deg: float, scale: float = 1.0) -> AffineTransform:
    """Rotation (plus uniform scale) about `center` that cancels a measured tilt.

    With alpha = scale*cos(theta), beta = scale*sin(theta) the matrix is
        [ alpha   beta   (1-alpha)*cx - beta*cy ]
        [ -beta   alpha  beta*cx + (1-alpha)*cy ]
    so `center` is a fixed point and applying it to a segment tilted by
    `angle_deg` (y-down coordinates) makes the segment horizontal.
    """
    if scale <= 0:
        raise RejectedInputError(f"scale must be positive, got {scale}")
    theta = math.radians(angle_deg)
    alpha = scale * math.cos(theta)
    beta = scale * math.sin(theta)
    cx, cy = center.x, center.y
    return AffineTransform(
        np.array(
            [
                [alpha, beta, (1.0 - alpha) * cx - beta * cy],
                [-beta, alpha, beta * cx + (1.0 - alpha) * cy],
            ]
        )
    )


def apply_to_point(t: AffineTransform, p: Point2) -> Point2:
    x = t.m[0, 0] * p.x + t.m[0, 1] * p.y + t.m[0, 2]
    y = t.m[1, 0] * p.x + t.m[1, 1] * p.y + t.m[1, 2]
    return Point2(float(x), float(y))


def warp_image(image: np.ndarray, t: AffineTransform, out_size: tuple[int, int]) -> np.ndarray:
    """Apply the affine transform to an image; bilinear sampling, black fill.

    `out_size` is (height, width). Integer images round-trip through float32
    and come back in their own dtype.
    """
    out_h, out_w = int(out_size[0]), int(out_size[1])
    if out_h <= 0 or out_w <= 0:
        raise RejectedInputError(f"output size must be positive, got {out_size}")
    inv = t.inverse().m.ravel()
    src = np.asarray(image)
    was_int = np.issubdtype(src.dtype, np.integer)
    warped = kernels.warp_affine_bilinear(src.astype(np.float32), inv, out_h, out_w)
    if was_int:
        info = np.iinfo(src.dtype)
        return np.clip(np.rint(warped), info.min, info.max).astype(src.dtype)
    return warped.astype(src.dtype)


def enclosing_box(t: AffineTransform, box: BoundingBox) -> BoundingBox:
    """Axis-aligned box through the min/max of the four transformed corners."""
    pts = [apply_to_point(t, Point2(x, y)) for x, y in box.corners()]
    xs = [p.x for p in pts]
    ys = [p.y for p in pts]
    return BoundingBox(min(xs), min(ys), max(xs) - min(xs), max(ys) - min(ys))


def pose_gate(kps: KeypointSet) -> str:
    """'reject' iff any of the four yaw-gating points is invisible."""
    return "reject" if any(not kps.is_visible(n) for n in GATE_POINTS) else "accept"


def align_face(
    image: np.ndarray, box: BoundingBox, kps: KeypointSet
) -> tuple[np.ndarray, BoundingBox, KeypointSet]:
    """Rotate the face about the eye midpoint so the eye line is horizontal.

    Returns (aligned image on the same canvas, transformed box clipped to the
    canvas, transformed keypoints). The pivot is the eye midpoint adjusted to
    the bounding box; since the whole canvas is warped the pivot is expressed
    back in image coordinates, which leaves the face content in place.
    """
    for name in ("left_eye", "right_eye"):
        if not kps.is_visible(name):
            raise PoseError(f"{name} is not visible; cannot align")
    m1 = eye_midpoint(kps["left_eye"], kps["right_eye"])
    pivot_in_box = adjust_to_box(m1, box)
    pivot = Point2(pivot_in_box.x + box.x, pivot_in_box.y + box.y)
    theta = rotation_angle(kps["left_eye"], kps["right_eye"])
    t = rotation_matrix(pivot, theta, 1.0)

    h, w = image.shape[:2]
    aligned_image = warp_image(image, t, (h, w))
    aligned_kps = kps.transform(t)
    canvas = BoundingBox(0.0, 0.0, float(w), float(h))
    aligned_box = enclosing_box(t, box).intersect(canvas)

    for name in KEYPOINT_NAMES:
        if aligned_kps.is_visible(name) and not aligned_box.contains(aligned_kps[name], tol=1e-6):
            raise FlaggedFrameError(
                f"aligned box does not contain visible keypoint {name} at "
                f"{aligned_kps[name].as_tuple()}"
            )
    return aligned_image, aligned_box, aligned_kps


# --- LabelMe-compatible annotation interchange ------------------------------

FACE_BOX_LABEL = "face"


def to_labelme(
    box: BoundingBox | None,
    kps: KeypointSet | None,
    image_path: str = "",
    image_size: tuple[int, int] | None = None,
) -> dict:
    """Serialize a box + keypoints as a LabelMe-style JSON document.

    The box becomes a `rectangle` shape labelled "face"; each keypoint a
    `point` shape labelled with its canonical name. Visibility is carried in
    the shape's flags (LabelMe keeps unknown flags intact).
    """
    shapes = []
    if box is not None:
        shapes.append(
            {
                "label": FACE_BOX_LABEL,
                "points": [[box.x, box.y], [box.x2, box.y2]],
                "shape_type": "rectangle",
                "group_id": None,
                "flags": {},
            }
        )
    if kps is not None:
        for name in KEYPOINT_NAMES:
            p = kps[name]
            shapes.append(
                {
                    "label": name,
                    "points": [[p.x, p.y]],
                    "shape_type": "point",
                    "group_id": None,
                    "flags": {"visible": kps.is_visible(name)},
                }
            )
    h, w = image_size if image_size is not None else (None, None)
    return {
        "version": "5.2.1",
        "flags": {},
        "shapes": shapes,
        "imagePath": image_path,
        "imageData": None,
        "imageHeight": h,
        "imageWidth": w,
    }


def from_labelme(doc: dict) -> tuple[BoundingBox | None, KeypointSet | None]:
    """Parse a LabelMe document back into (box, keypoints).

    Points missing from the document are treated as invisible (placed at the
    origin). Returns None for a missing box or a document with no keypoints.
    """
    box = None
    pts: dict[str, Point2] = {}
    vis: dict[str, bool] = {}
    for shape in doc.get("shapes", []):
        label = shape.get("label")
        if shape.get("shape_type") == "rectangle" and label == FACE_BOX_LABEL:
            (x1, y1), (x2, y2) = shape["points"]
            box = BoundingBox(min(x1, x2), min(y1, y2), abs(x2 - x1), abs(y2 - y1))
        elif shape.get("shape_type") == "point" and label in KEYPOINT_NAMES:
            (x, y) = shape["points"][0]
            pts[label] = Point2(float(x), float(y))
            vis[label] = bool(shape.get("flags", {}).get("visible", True))
    if not pts:
        return box, None
    full_pts = {n: pts.get(n, Point2(0.0, 0.0)) for n in KEYPOINT_NAMES}
    full_vis = {n: vis.get(n, n in pts) for n in KEYPOINT_NAMES}
    return box, KeypointSet(points=full_pts, visible=full_vis)


def save_labelme(path: str | Path, doc: dict) -> None:
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def load_labelme(path: str | Path) -> dict:
    return json.loads(Path(path).read_text())
