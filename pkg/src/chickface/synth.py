"""Procedural chick-face generator with exact ground truth.

Faces are drawn from implicit shapes (elliptical head, two dark eye discs,
triangular beak, comb blob) on a light background, with per-frame tilt and
position jitter. Gender is encoded by the comb height ratio drawn from two
distributions whose overlap is controlled by a separability knob: 0 means
identical distributions (pure chance), 1 means disjoint.

Every frame ships a LabelMe sidecar with the face box and the seven
keypoints, so detector/keypoint stages can run in replay (stub) mode and
training stages have exact supervision.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .dataset import ChickRecord, DatasetManifest, FrameRecord
from .errors import RejectedInputError
from .geometry import BoundingBox, KeypointSet, Point2, save_labelme, to_labelme

BG_COLOR = np.array([205.0, 203.0, 198.0])
HEAD_COLOR = np.array([230.0, 205.0, 120.0])
BEAK_COLOR = np.array([235.0, 160.0, 60.0])
EYE_COLOR = np.array([25.0, 20.0, 18.0])
COMB_COLOR = np.array([200.0, 40.0, 35.0])

# Local face geometry in units of the head half-axes (a horizontal, b vertical).
EYE_X = 0.45
EYE_Y = -0.18
EYE_RADIUS = 0.13  # of a
BEAK_TOP = 0.05
BEAK_BOTTOM = 0.55
BEAK_HALF_WIDTH = 0.32


@dataclass
class SynthConfig:
    n_ids: int = 40
    frames_per_id: int = 8
    seed: int = 0
    separability: float = 0.9
    image_size: int = 256
    max_tilt_deg: float = 25.0
    occlude_prob: float = 0.0  # chance to mark one gate point invisible

    def __post_init__(self):
        if self.n_ids < 2:
            raise RejectedInputError("need at least 2 chick IDs")
        if not 0.0 <= self.separability <= 1.0:
            raise RejectedInputError(f"separability must be in [0, 1], got {self.separability}")


def comb_ratio_for(gender: str, separability: float, rng: np.random.Generator) -> float:
    """Comb height / head height; the gender signal.

    Gender means move apart with separability: identical distributions at 0
    (pure chance), far beyond the spread at 1 (disjoint).
    """
    gap = 0.45 * separability
    mean = 0.55 + (gap / 2.0 if gender == "male" else -gap / 2.0)
    r = float(rng.normal(mean, 0.03))
    return float(np.clip(r, 0.08, 0.95))


def _rotate(points: np.ndarray, theta_deg: float) -> np.ndarray:
    t = math.radians(theta_deg)
    c, s = math.cos(t), math.sin(t)
    rot = np.array([[c, -s], [s, c]])
    return points @ rot.T


def render_face(
    size: int,
    center: tuple[float, float],
    a: float,
    b: float,
    tilt_deg: float,
    comb_ratio: float,
    head_tint: np.ndarray,
    brightness: float,
    noise: np.ndarray,
) -> tuple[np.ndarray, KeypointSet, BoundingBox]:
    """Draw one face; returns (image, keypoints in image coords, face box)."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    dx = xx - center[0]
    dy = yy - center[1]
    t = math.radians(tilt_deg)
    c, s = math.cos(t), math.sin(t)
    # inverse rotation into the face-local frame
    lx = c * dx + s * dy
    ly = -s * dx + c * dy

    comb_h = comb_ratio * b
    canvas = np.ones((size, size, 3)) * BG_COLOR + noise[..., None]

    comb_cy = -b - comb_h / 2.0
    comb_ry = comb_h / 2.0 + 0.06 * b
    comb = (lx / (0.32 * a)) ** 2 + ((ly - comb_cy) / comb_ry) ** 2 <= 1.0
    canvas[comb] = COMB_COLOR

    head = (lx / a) ** 2 + (ly / b) ** 2 <= 1.0
    canvas[head] = HEAD_COLOR + head_tint

    v0 = np.array([0.0, BEAK_TOP * b])
    v1 = np.array([-BEAK_HALF_WIDTH * a, BEAK_BOTTOM * b])
    v2 = np.array([BEAK_HALF_WIDTH * a, BEAK_BOTTOM * b])
    beak = _triangle_mask(lx, ly, v0, v1, v2)
    canvas[beak] = BEAK_COLOR

    for ex in (-EYE_X, EYE_X):
        eye = (lx - ex * a) ** 2 + (ly - EYE_Y * b) ** 2 <= (EYE_RADIUS * a) ** 2
        canvas[eye] = EYE_COLOR

    canvas = np.clip(canvas * brightness, 0, 255).astype(np.uint8)

    # anatomical left = image right for a camera-facing chick; the upper nose
    # ridge sits just above the eye line so middle crops keep the eyes
    local_pts = {
        "upper_nose": (0.0, -0.25 * b),
        "middle_nose": (0.0, BEAK_TOP * b),
        "right_eye": (-EYE_X * a, EYE_Y * b),
        "right_beak": (-0.30 * a, 0.52 * b),
        "middle_beak": (0.0, 0.60 * b),
        "left_beak": (0.30 * a, 0.52 * b),
        "left_eye": (EYE_X * a, EYE_Y * b),
    }
    names = list(local_pts)
    world = _rotate(np.array([local_pts[n] for n in names]), tilt_deg) + np.array(center)
    kps = KeypointSet(
        points={n: Point2(float(x), float(y)) for n, (x, y) in zip(names, world)},
    )

    extent = np.array(
        [
            [-1.15 * a, -b - comb_h - 0.10 * b],
            [1.15 * a, -b - comb_h - 0.10 * b],
            [1.15 * a, b + 0.10 * b],
            [-1.15 * a, b + 0.10 * b],
        ]
    )
    corners = _rotate(extent, tilt_deg) + np.array(center)
    x0, y0 = corners.min(axis=0)
    x1, y1 = corners.max(axis=0)
    box = BoundingBox(float(x0), float(y0), float(x1 - x0), float(y1 - y0))
    return canvas, kps, box


def _triangle_mask(lx, ly, v0, v1, v2) -> np.ndarray:
    def side(px, py, p1, p2):
        return (p2[0] - p1[0]) * (py - p1[1]) - (p2[1] - p1[1]) * (px - p1[0])

    d1 = side(lx, ly, v0, v1)
    d2 = side(lx, ly, v1, v2)
    d3 = side(lx, ly, v2, v0)
    neg = (d1 < 0) | (d2 < 0) | (d3 < 0)
    pos = (d1 > 0) | (d2 > 0) | (d3 > 0)
    return ~(neg & pos)


def generate_dataset(out_dir: str | Path, cfg: SynthConfig) -> DatasetManifest:
    """Write images/, annotations/ and manifest.json; returns the manifest.

    Deterministic for a fixed config (byte-identical output trees).
    """
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    (out_dir / "annotations").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(cfg.seed)
    size = cfg.image_size

    chicks: list[ChickRecord] = []
    frames: list[FrameRecord] = []
    for idx in range(cfg.n_ids):
        gender = "female" if idx % 2 == 0 else "male"
        chick_id = f"chick{idx:04d}"
        chicks.append(ChickRecord(chick_id=chick_id, gender=gender))
        ratio = comb_ratio_for(gender, cfg.separability, rng)
        tint = rng.uniform(-10, 10, size=3)

        for fi in range(cfg.frames_per_id):
            a = rng.uniform(0.13, 0.16) * size
            b = 1.25 * a
            tilt = rng.uniform(-cfg.max_tilt_deg, cfg.max_tilt_deg)
            brightness = rng.uniform(0.92, 1.08)
            noise = rng.uniform(-4, 4, size=(size, size))
            image = kps = box = None
            for _ in range(50):
                center = (rng.uniform(0.42, 0.58) * size, rng.uniform(0.55, 0.65) * size)
                image, kps, box = render_face(size, center, a, b, tilt, ratio, tint, brightness, noise)
                if box.x >= 0 and box.y >= 0 and box.x2 <= size and box.y2 <= size:
                    break
            else:
                raise RejectedInputError("could not place face inside canvas; shrink the face scale")

            if cfg.occlude_prob > 0 and rng.random() < cfg.occlude_prob:
                victim = str(rng.choice(["left_eye", "right_eye", "left_beak", "right_beak"]))
                kps.visible[victim] = False

            frame_id = f"{chick_id}_{fi}"
            img_name = f"{frame_id}.png"
            Image.fromarray(image).save(out_dir / "images" / img_name)
            doc = to_labelme(box, kps, image_path=f"../images/{img_name}", image_size=(size, size))
            save_labelme(out_dir / "annotations" / f"{frame_id}.json", doc)
            frames.append(
                FrameRecord(
                    frame_id=frame_id,
                    chick_id=chick_id,
                    view_index=fi % 3,
                    image_ref=f"images/{img_name}",
                    quality="accepted",
                )
            )

    manifest = DatasetManifest(chicks=chicks, frames=frames, crop_kind="none")
    manifest.save(out_dir / "manifest.json")
    return manifest


def annotation_path_for(dataset_dir: str | Path, frame_id: str) -> Path:
    return Path(dataset_dir) / "annotations" / f"{frame_id}.json"
