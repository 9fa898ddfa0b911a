"""The two evaluated inputs: Cropped Full Face and Cropped Middle Face.

The middle crop narrows the full crop to the informative center of the
face: eye extremes (found by thresholding inside eye masks) plus a dynamic
symmetric margin sideways, the upper-nose keypoint on top, and the lowest
beak keypoint at the bottom.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .dataset import to_grayscale
from .errors import FlaggedFrameError, PoseError, RejectedInputError
from .geometry import KEYPOINT_NAMES, BoundingBox, KeypointSet, pose_gate

log = logging.getLogger(__name__)

BEAK_POINTS = ("middle_beak", "left_beak", "right_beak")
DEFAULT_MASK_RADIUS_FACTOR = 0.25
DEFAULT_MARGIN_SCALE = 1.0


@dataclass
class FaceCrop:
    image: np.ndarray
    kind: str  # "full" | "middle"
    source_box: BoundingBox  # in the coordinates of the image it was cut from
    keypoints: KeypointSet  # in crop coordinates

    def __post_init__(self):
        if self.kind not in ("full", "middle"):
            raise RejectedInputError(f"crop kind must be 'full' or 'middle', got {self.kind!r}")

    @property
    def width(self) -> int:
        return self.image.shape[1]

    @property
    def height(self) -> int:
        return self.image.shape[0]


@dataclass
class EyeExtremes:
    left_x: int
    right_x: int
    left_fallback: bool = False
    right_fallback: bool = False


def rasterize_box(box: BoundingBox, bounds: tuple[int, int]) -> tuple[int, int, int, int]:
    """Continuous box -> inclusive pixel range [x0, x1) x [y0, y1), clipped.

    The min corner is floored; the max corner maps to floor(max)+1 so the
    pixel containing the max edge is kept. Keeping that boundary pixel is
    what makes a zero-margin middle crop a fixed point of re-cropping.
    """
    h, w = bounds
    x0 = max(0, int(math.floor(box.x)))
    y0 = max(0, int(math.floor(box.y)))
    x1 = min(w, int(math.floor(box.x2)) + 1)
    y1 = min(h, int(math.floor(box.y2)) + 1)
    if x1 <= x0 or y1 <= y0:
        raise FlaggedFrameError(f"box {box.to_dict()} rasterizes to nothing within bounds {bounds}")
    return x0, y0, x1, y1


def crop_full_face(
    aligned_image: np.ndarray, aligned_box: BoundingBox, aligned_kps: KeypointSet
) -> FaceCrop:
    """Pixel-exact crop of the aligned bounding box, keypoints moved along.

    The crop frame's origin is the rasterized top-left pixel of the box.
    """
    h, w = aligned_image.shape[:2]
    if aligned_box.x < -1e-6 or aligned_box.y < -1e-6 or aligned_box.x2 > w + 1e-6 or aligned_box.y2 > h + 1e-6:
        raise FlaggedFrameError(
            f"aligned box {aligned_box.to_dict()} exceeds image bounds {w}x{h}"
        )
    x0, y0, x1, y1 = rasterize_box(aligned_box, (h, w))
    crop = np.ascontiguousarray(aligned_image[y0:y1, x0:x1])
    kps = aligned_kps.translate(-x0, -y0)
    _check_visible_inside(kps, crop.shape[1], crop.shape[0], "full crop")
    return FaceCrop(image=crop, kind="full", source_box=aligned_box, keypoints=kps)


def otsu_threshold(values: np.ndarray) -> int:
    """Otsu's threshold over uint8 values; foreground is strictly below it.

    Sweeps the class boundary and keeps the first maximizer of between-class
    variance, so a constant region yields threshold 0 (empty foreground).
    """
    hist = np.bincount(values.ravel().astype(np.uint8), minlength=256).astype(np.float64)
    total = hist.sum()
    if total == 0:
        return 0
    omega = np.cumsum(hist) / total  # P(class0) for boundary t: class0 = [0, t)
    mu = np.cumsum(hist * np.arange(256)) / total
    mu_t = mu[-1]
    best_t, best_var = 0, 0.0
    for t in range(1, 256):
        w0 = omega[t - 1]
        w1 = 1.0 - w0
        if w0 <= 0.0 or w1 <= 0.0:
            continue
        mu0 = mu[t - 1] / w0
        mu1 = (mu_t - mu[t - 1]) / w1
        var = w0 * w1 * (mu0 - mu1) ** 2
        if var > best_var + 1e-12:
            best_var = var
            best_t = t
    return best_t


def eye_extremes(full_crop: FaceCrop, mask_radius_factor: float = DEFAULT_MASK_RADIUS_FACTOR) -> EyeExtremes:
    """Leftmost dark pixel of the image-left eye, rightmost of the image-right eye.

    Binarizes the grayscale crop with Otsu's method restricted to discs of
    radius mask_radius_factor * eye distance around the two eye keypoints;
    eyes are the dark class. A disc without foreground falls back to its eye
    keypoint x (flagged on the result).
    """
    kps = full_crop.keypoints
    for name in ("left_eye", "right_eye"):
        if not kps.is_visible(name):
            raise PoseError(f"{name} must be visible to locate eye extremes")
    e1, e2 = kps["left_eye"], kps["right_eye"]
    left_eye_pt, right_eye_pt = (e1, e2) if e1.x <= e2.x else (e2, e1)
    d_eye = math.dist(left_eye_pt.as_tuple(), right_eye_pt.as_tuple())
    radius = mask_radius_factor * d_eye

    gray = to_grayscale(full_crop.image)
    h, w = gray.shape
    yy, xx = np.mgrid[0:h, 0:w]
    left_mask = (xx - left_eye_pt.x) ** 2 + (yy - left_eye_pt.y) ** 2 <= radius**2
    right_mask = (xx - right_eye_pt.x) ** 2 + (yy - right_eye_pt.y) ** 2 <= radius**2
    union = left_mask | right_mask
    if not union.any():
        return EyeExtremes(
            left_x=int(round(left_eye_pt.x)),
            right_x=int(round(right_eye_pt.x)),
            left_fallback=True,
            right_fallback=True,
        )

    thr = otsu_threshold(np.clip(gray[union], 0, 255).astype(np.uint8))
    dark = gray < thr

    left_xs = xx[left_mask & dark]
    right_xs = xx[right_mask & dark]
    left_fallback = left_xs.size == 0
    right_fallback = right_xs.size == 0
    if left_fallback:
        log.warning("no foreground in left eye mask; falling back to keypoint x")
    if right_fallback:
        log.warning("no foreground in right eye mask; falling back to keypoint x")
    left_x = int(round(left_eye_pt.x)) if left_fallback else int(left_xs.min())
    right_x = int(round(right_eye_pt.x)) if right_fallback else int(right_xs.max())
    if left_x >= right_x:
        raise FlaggedFrameError(f"eye extremes collapsed: left_x={left_x} right_x={right_x}")
    return EyeExtremes(left_x=left_x, right_x=right_x, left_fallback=left_fallback, right_fallback=right_fallback)


def middle_face_box(
    full_crop: FaceCrop, extremes: EyeExtremes, margin_scale: float = DEFAULT_MARGIN_SCALE
) -> BoundingBox:
    """Middle-face box: eye extremes plus a symmetric dynamic margin.

    margin = margin_scale * eye_distance / (0.5 * (slack_left + slack_right))
    where the slacks are the distances from the extremes to the crop edges.
    Top is the upper_nose keypoint, bottom the lowest visible beak keypoint.
    The result is clamped to the crop bounds.
    """
    kps = full_crop.keypoints
    if not kps.is_visible("upper_nose"):
        raise PoseError("upper_nose must be visible for the middle-face box")
    beak_ys = [kps[n].y for n in BEAK_POINTS if kps.is_visible(n)]
    if not beak_ys:
        raise PoseError("at least one beak keypoint must be visible for the middle-face box")

    d_eye = math.dist(kps["left_eye"].as_tuple(), kps["right_eye"].as_tuple())
    s_l = float(extremes.left_x)
    s_r = float(full_crop.width - extremes.right_x)
    denom = 0.5 * (s_l + s_r)
    if denom <= 0:
        log.warning("degenerate eye-extreme slack (s_l + s_r = 0); using zero margin")
        margin = 0.0
    else:
        margin = margin_scale * d_eye / denom

    left = extremes.left_x - margin
    right = extremes.right_x + margin
    top = kps["upper_nose"].y
    bottom = max(beak_ys)

    left = max(0.0, left)
    right = min(float(full_crop.width), right)
    top = max(0.0, top)
    bottom = min(float(full_crop.height), bottom)
    if right <= left or bottom <= top:
        raise FlaggedFrameError(
            f"middle-face box degenerate: x [{left}, {right}], y [{top}, {bottom}]"
        )
    return BoundingBox(left, top, right - left, bottom - top)


def crop_middle_face(
    full_crop: FaceCrop,
    margin_scale: float = DEFAULT_MARGIN_SCALE,
    mask_radius_factor: float = DEFAULT_MASK_RADIUS_FACTOR,
) -> FaceCrop:
    """Cut the middle-face region out of a full-face crop.

    Requires an accepted pose (all four gate points visible) plus the
    upper_nose and at least one beak point. The returned keypoints are in
    middle-crop coordinates.
    """
    if pose_gate(full_crop.keypoints) != "accept":
        raise PoseError("pose gate rejected the frame; cannot build middle crop")
    extremes = eye_extremes(full_crop, mask_radius_factor=mask_radius_factor)
    box = middle_face_box(full_crop, extremes, margin_scale=margin_scale)
    x0, y0, x1, y1 = rasterize_box(box, (full_crop.height, full_crop.width))
    crop = np.ascontiguousarray(full_crop.image[y0:y1, x0:x1])
    kps = full_crop.keypoints.translate(-x0, -y0)

    for name in ("upper_nose", "middle_nose", "middle_beak"):
        if kps.is_visible(name):
            p = kps[name]
            if not (-1e-6 <= p.x < crop.shape[1] + 1e-6 and -1e-6 <= p.y < crop.shape[0] + 1e-6):
                raise FlaggedFrameError(
                    f"middle crop lost required keypoint {name} at ({p.x:.2f}, {p.y:.2f})"
                )
    return FaceCrop(image=crop, kind="middle", source_box=box, keypoints=kps)


def _check_visible_inside(kps: KeypointSet, w: int, h: int, what: str) -> None:
    for name in KEYPOINT_NAMES:
        if kps.is_visible(name):
            p = kps[name]
            if not (-1e-6 <= p.x < w + 1e-6 and -1e-6 <= p.y < h + 1e-6):
                raise FlaggedFrameError(f"{what} excludes visible keypoint {name} at ({p.x:.2f}, {p.y:.2f})")


# --- disk interchange --------------------------------------------------------


def save_crop(crop: FaceCrop, image_path: str | Path) -> Path:
    """Write the crop as PNG plus a JSON sidecar (kind, box, keypoints)."""
    image_path = Path(image_path)
    Image.fromarray(crop.image).save(image_path)
    sidecar = image_path.with_suffix(".json")
    sidecar.write_text(
        json.dumps(
            {
                "kind": crop.kind,
                "source_box": crop.source_box.to_dict(),
                "keypoints": crop.keypoints.to_dict(),
            },
            indent=2,
        )
        + "\n"
    )
    return sidecar


def load_crop(image_path: str | Path) -> FaceCrop:
    image_path = Path(image_path)
    img = np.asarray(Image.open(image_path).convert("RGB"))
    meta = json.loads(image_path.with_suffix(".json").read_text())
    return FaceCrop(
        image=img,
        kind=meta["kind"],
        source_box=BoundingBox.from_dict(meta["source_box"]),
        keypoints=KeypointSet.from_dict(meta["keypoints"]),
    )
