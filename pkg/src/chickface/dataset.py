"""Dataset manifest, stacked-view splitting, and grouped fold planning.

The manifest is a single JSON document; images stay on disk and are
referenced by relative path. Manifests are treated as immutable after load
and fold planning is pure, so everything here is safe to share across
parallel workers.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .errors import PlanningError, RejectedInputError

GENDERS = ("female", "male")
QUALITY_STATES = ("unreviewed", "accepted", "rejected")
CROP_KINDS = ("full", "middle", "none")


@dataclass(frozen=True)
class ChickRecord:
    chick_id: str
    gender: str

    def __post_init__(self):
        if self.gender not in GENDERS:
            raise RejectedInputError(f"gender must be one of {GENDERS}, got {self.gender!r}")


@dataclass
class FrameRecord:
    frame_id: str
    chick_id: str
    view_index: int
    image_ref: str
    quality: str = "unreviewed"

    def __post_init__(self):
        if self.view_index not in (0, 1, 2):
            raise RejectedInputError(f"view_index must be 0, 1 or 2, got {self.view_index}")
        if self.quality not in QUALITY_STATES:
            raise RejectedInputError(f"quality must be one of {QUALITY_STATES}, got {self.quality!r}")


@dataclass
class DatasetManifest:
    chicks: list[ChickRecord] = field(default_factory=list)
    frames: list[FrameRecord] = field(default_factory=list)
    crop_kind: str = "none"

    def __post_init__(self):
        if self.crop_kind not in CROP_KINDS:
            raise RejectedInputError(f"crop_kind must be one of {CROP_KINDS}, got {self.crop_kind!r}")
        ids = [c.chick_id for c in self.chicks]
        if len(ids) != len(set(ids)):
            raise RejectedInputError("duplicate chick_id in manifest")
        known = set(ids)
        for f in self.frames:
            if f.chick_id not in known:
                raise RejectedInputError(f"frame {f.frame_id} references unknown chick {f.chick_id}")

    def chick_by_id(self, chick_id: str) -> ChickRecord:
        for c in self.chicks:
            if c.chick_id == chick_id:
                return c
        raise KeyError(chick_id)

    def gender_of(self, chick_id: str) -> str:
        return self.chick_by_id(chick_id).gender

    def accepted_frames(self) -> list[FrameRecord]:
        return [f for f in self.frames if f.quality == "accepted"]

    def to_dict(self) -> dict:
        return {
            "chicks": [{"chick_id": c.chick_id, "gender": c.gender} for c in self.chicks],
            "frames": [
                {
                    "frame_id": f.frame_id,
                    "chick_id": f.chick_id,
                    "view_index": f.view_index,
                    "image_ref": f.image_ref,
                    "quality": f.quality,
                }
                for f in self.frames
            ],
            "crop_kind": self.crop_kind,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetManifest":
        return cls(
            chicks=[ChickRecord(c["chick_id"], c["gender"]) for c in d.get("chicks", [])],
            frames=[
                FrameRecord(
                    frame_id=f["frame_id"],
                    chick_id=f["chick_id"],
                    view_index=int(f.get("view_index", 0)),
                    image_ref=f["image_ref"],
                    quality=f.get("quality", "unreviewed"),
                )
                for f in d.get("frames", [])
            ],
            crop_kind=d.get("crop_kind", "none"),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "DatasetManifest":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class FoldPlan:
    k: int
    assignment: dict[str, int]

    def __post_init__(self):
        if self.k < 2:
            raise PlanningError(f"k must be >= 2, got {self.k}")
        for cid, fold in self.assignment.items():
            if not 0 <= fold < self.k:
                raise PlanningError(f"chick {cid} assigned to fold {fold} outside [0, {self.k})")

    def chicks_in_fold(self, fold: int) -> set[str]:
        return {cid for cid, f in self.assignment.items() if f == fold}

    def to_dict(self) -> dict:
        return {"k": self.k, "assignment": dict(sorted(self.assignment.items()))}

    @classmethod
    def from_dict(cls, d: dict) -> "FoldPlan":
        return cls(k=int(d["k"]), assignment={k: int(v) for k, v in d["assignment"].items()})


def split_views(stacked_image: np.ndarray) -> list[np.ndarray]:
    """Split a vertically stacked 3-camera frame into top/middle/bottom views.

    Re-concatenating the outputs reproduces the input bit-exactly.
    """
    img = np.asarray(stacked_image)
    if img.ndim < 2 or img.shape[0] == 0:
        raise RejectedInputError("empty image")
    h = img.shape[0]
    if h % 3 != 0:
        raise RejectedInputError(f"stacked frame height {h} is not divisible by 3")
    third = h // 3
    return [img[i * third : (i + 1) * third].copy() for i in range(3)]


def assign_folds(chicks: list[ChickRecord], k: int, seed: int) -> FoldPlan:
    """Plan gender-balanced, ID-grouped folds.

    Per gender: shuffle the IDs with the seed, deal round-robin into the k
    folds. Per-gender ID counts then differ by at most 1 across folds, and
    no chick ever lands in two folds.
    """
    if k < 2:
        raise PlanningError(f"k must be >= 2, got {k}")
    by_gender: dict[str, list[str]] = {g: [] for g in GENDERS}
    for c in chicks:
        by_gender[c.gender].append(c.chick_id)
    for gender, ids in by_gender.items():
        if len(ids) < k:
            raise PlanningError(f"need at least {k} {gender} chick IDs, got {len(ids)}")

    rng = random.Random(seed)
    assignment: dict[str, int] = {}
    for gender in GENDERS:
        ids = sorted(by_gender[gender])
        rng.shuffle(ids)
        for i, cid in enumerate(ids):
            assignment[cid] = i % k
    return FoldPlan(k=k, assignment=assignment)


def blur_score(image: np.ndarray) -> float:
    """Sharpness score: variance of the Laplacian of the grayscale image.

    Constant images score 0; Gaussian blurring lowers the score. Higher
    means sharper. Assists the manual quality review, it does not replace it.
    """
    img = np.asarray(image)
    if img.size == 0:
        raise RejectedInputError("empty image")
    gray = to_grayscale(img)
    return kernels.laplacian_variance(gray.astype(np.float32))


def to_grayscale(image: np.ndarray) -> np.ndarray:
    """Luma conversion (Rec. 601 weights) for RGB input; pass-through for 2-D."""
    img = np.asarray(image)
    if img.ndim == 2:
        return img.astype(np.float32)
    if img.ndim == 3 and img.shape[2] >= 3:
        rgb = img[:, :, :3].astype(np.float32)
        return rgb[:, :, 0] * 0.299 + rgb[:, :, 1] * 0.587 + rgb[:, :, 2] * 0.114
    if img.ndim == 3 and img.shape[2] == 1:
        return img[:, :, 0].astype(np.float32)
    raise RejectedInputError(f"cannot convert shape {img.shape} to grayscale")
