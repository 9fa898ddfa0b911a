"""Stage functions wiring the modules into the end-to-end pipeline.

Each stage reads/writes a dataset-shaped directory (manifest.json,
images/, annotations/) so stages compose: detect -> align -> crop ->
evaluate. Frames that fail a gate are dropped from the stage output and
recorded in flagged.json with the reason, keeping runs auditable.
"""

from __future__ import annotations

import csv
import importlib
import json
import logging
from pathlib import Path

import numpy as np
from PIL import Image

from .cropping import (
    crop_full_face,
    crop_middle_face,
    rasterize_box,
    save_crop,
)
from .dataset import DatasetManifest, FrameRecord, assign_folds
from .detection import Detection, DetectorConfig, detect_face, load_detections, save_detections
from .errors import ChickfaceError, RejectedInputError
from .geometry import (
    BoundingBox,
    KeypointSet,
    align_face,
    from_labelme,
    load_labelme,
    pose_gate,
    save_labelme,
    to_labelme,
)
from .keypoints import (
    KeypointModelConfig,
    StubKeypointModel,
    load_keypoint_model,
    predict_keypoints,
    render_targets,
)

log = logging.getLogger(__name__)


def load_image(path: str | Path) -> np.ndarray:
    return np.asarray(Image.open(path).convert("RGB"))


def load_annotation(dataset_dir: Path, frame: FrameRecord) -> tuple[BoundingBox | None, KeypointSet | None]:
    ann = dataset_dir / "annotations" / f"{frame.frame_id}.json"
    if not ann.exists():
        ann = (dataset_dir / frame.image_ref).with_suffix(".json")
    if not ann.exists():
        return None, None
    return from_labelme(load_labelme(ann))


def _write_flagged(out_dir: Path, flagged: list[dict]) -> None:
    (out_dir / "flagged.json").write_text(json.dumps(flagged, indent=2) + "\n")


# --- detect -----------------------------------------------------------------


def build_detector(spec: str, dataset_dir: Path):
    """Resolve a detector spec: 'replay' or 'import:module:attr'."""
    if spec == "replay":
        return None  # handled inline: ground-truth sidecar replay
    if spec.startswith("import:"):
        _, module_name, attr = spec.split(":", 2)
        factory = getattr(importlib.import_module(module_name), attr)
        return factory()
    raise RejectedInputError(f"unknown detector spec {spec!r} (use 'replay' or 'import:mod:attr')")


def run_detect(dataset_dir: str | Path, out_path: str | Path, detector: str, cfg: DetectorConfig) -> dict:
    """Detect one face per accepted frame; writes a detections JSON."""
    dataset_dir = Path(dataset_dir)
    manifest = DatasetManifest.load(dataset_dir / "manifest.json")
    model = build_detector(detector, dataset_dir)
    results: dict[str, Detection | None] = {}
    for frame in manifest.accepted_frames():
        if model is None:  # replay ground truth
            box, _ = load_annotation(dataset_dir, frame)
            results[frame.frame_id] = None if box is None else Detection(box=box, confidence=1.0)
        else:
            image = load_image(dataset_dir / frame.image_ref)
            results[frame.frame_id] = detect_face(image, DetectorConfig(**{**_cfg_dict(cfg), "model_ref": model}))
    save_detections(results, out_path)
    found = sum(1 for d in results.values() if d is not None)
    return {"frames": len(results), "detected": found}


def _cfg_dict(cfg: DetectorConfig) -> dict:
    return {
        "input_size": cfg.input_size,
        "conf_threshold": cfg.conf_threshold,
        "iou_threshold": cfg.iou_threshold,
    }


# --- keypoints + align ---------------------------------------------------------


class ReplayKeypointSource:
    """Stub source: renders the ground-truth heatmaps and decodes them back.

    Runs the real render/decode machinery per frame, so replay results carry
    the same quantization as a perfect model would.
    """

    def __init__(self, dataset_dir: Path, cfg: KeypointModelConfig):
        self.dataset_dir = dataset_dir
        self.cfg = cfg

    def keypoints_for(self, frame: FrameRecord, image: np.ndarray, box: BoundingBox) -> KeypointSet | None:
        _, gt = load_annotation(self.dataset_dir, frame)
        if gt is None:
            return None
        x0, y0, x1, y1 = rasterize_box(box, image.shape[:2])
        face = image[y0:y1, x0:x1]
        in_h, in_w = self.cfg.input_size
        scale = np.array([in_w / face.shape[1], in_h / face.shape[0]])
        scaled = KeypointSet.from_arrays(
            np.clip(gt.translate(-x0, -y0).as_array() * scale, 0, [in_w, in_h]),
            gt.visible_array(),
        )
        maps = render_targets(scaled, self.cfg).data
        stub = StubKeypointModel(maps)
        kps = predict_keypoints(face, stub, self.cfg)
        return kps.translate(x0, y0)


class ModelKeypointSource:
    def __init__(self, model_path: Path):
        self.model, self.cfg = load_keypoint_model(model_path)

    def keypoints_for(self, frame: FrameRecord, image: np.ndarray, box: BoundingBox) -> KeypointSet:
        x0, y0, x1, y1 = rasterize_box(box, image.shape[:2])
        face = image[y0:y1, x0:x1]
        kps = predict_keypoints(face, self.model, self.cfg)
        return kps.translate(x0, y0)


def build_keypoint_source(spec: str, dataset_dir: Path, cfg: KeypointModelConfig):
    if spec == "replay":
        return ReplayKeypointSource(dataset_dir, cfg)
    if spec.startswith("model:"):
        return ModelKeypointSource(Path(spec.split(":", 1)[1]))
    raise RejectedInputError(f"unknown keypoints spec {spec!r} (use 'replay' or 'model:PATH')")


def run_align(
    dataset_dir: str | Path,
    detections_path: str | Path,
    out_dir: str | Path,
    keypoints: str = "replay",
    kp_cfg: KeypointModelConfig | None = None,
) -> dict:
    """Predict keypoints, gate the pose, align; writes an aligned dataset dir."""
    dataset_dir = Path(dataset_dir)
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    (out_dir / "annotations").mkdir(parents=True, exist_ok=True)
    manifest = DatasetManifest.load(dataset_dir / "manifest.json")
    detections = load_detections(detections_path)
    source = build_keypoint_source(keypoints, dataset_dir, kp_cfg or KeypointModelConfig())

    kept_frames: list[FrameRecord] = []
    flagged: list[dict] = []
    for frame in manifest.accepted_frames():
        det = detections.get(frame.frame_id)
        if det is None:
            flagged.append({"frame_id": frame.frame_id, "reason": "no_detection"})
            continue
        image = load_image(dataset_dir / frame.image_ref)
        try:
            kps = source.keypoints_for(frame, image, det.box)
            if kps is None:
                flagged.append({"frame_id": frame.frame_id, "reason": "no_keypoints"})
                continue
            if pose_gate(kps) != "accept":
                flagged.append({"frame_id": frame.frame_id, "reason": "pose_gate"})
                continue
            aligned_image, aligned_box, aligned_kps = align_face(image, det.box, kps)
        except ChickfaceError as exc:
            flagged.append({"frame_id": frame.frame_id, "reason": exc.code, "detail": str(exc)})
            continue
        img_name = f"{frame.frame_id}.png"
        Image.fromarray(aligned_image).save(out_dir / "images" / img_name)
        save_labelme(
            out_dir / "annotations" / f"{frame.frame_id}.json",
            to_labelme(aligned_box, aligned_kps, image_path=f"../images/{img_name}",
                       image_size=aligned_image.shape[:2]),
        )
        kept_frames.append(
            FrameRecord(
                frame_id=frame.frame_id,
                chick_id=frame.chick_id,
                view_index=frame.view_index,
                image_ref=f"images/{img_name}",
                quality="accepted",
            )
        )

    kept_ids = {f.chick_id for f in kept_frames}
    aligned_manifest = DatasetManifest(
        chicks=[c for c in manifest.chicks if c.chick_id in kept_ids],
        frames=kept_frames,
        crop_kind="none",
    )
    aligned_manifest.save(out_dir / "manifest.json")
    _write_flagged(out_dir, flagged)
    return {"frames": len(manifest.accepted_frames()), "aligned": len(kept_frames), "flagged": len(flagged)}


# --- crop -----------------------------------------------------------------------


def run_crop(
    aligned_dir: str | Path,
    out_dir: str | Path,
    kind: str,
    margin_scale: float = 1.0,
    mask_radius_factor: float = 0.25,
) -> dict:
    """Cut full or middle crops from an aligned dataset dir."""
    if kind not in ("full", "middle"):
        raise RejectedInputError(f"crop kind must be 'full' or 'middle', got {kind!r}")
    aligned_dir = Path(aligned_dir)
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    manifest = DatasetManifest.load(aligned_dir / "manifest.json")

    kept_frames: list[FrameRecord] = []
    flagged: list[dict] = []
    for frame in manifest.accepted_frames():
        box, kps = load_annotation(aligned_dir, frame)
        if box is None or kps is None:
            flagged.append({"frame_id": frame.frame_id, "reason": "missing_annotation"})
            continue
        image = load_image(aligned_dir / frame.image_ref)
        try:
            crop = crop_full_face(image, box, kps)
            if kind == "middle":
                crop = crop_middle_face(crop, margin_scale=margin_scale, mask_radius_factor=mask_radius_factor)
        except ChickfaceError as exc:
            flagged.append({"frame_id": frame.frame_id, "reason": exc.code, "detail": str(exc)})
            continue
        img_name = f"{frame.frame_id}.png"
        save_crop(crop, out_dir / "images" / img_name)
        kept_frames.append(
            FrameRecord(
                frame_id=frame.frame_id,
                chick_id=frame.chick_id,
                view_index=frame.view_index,
                image_ref=f"images/{img_name}",
                quality="accepted",
            )
        )

    kept_ids = {f.chick_id for f in kept_frames}
    crop_manifest = DatasetManifest(
        chicks=[c for c in manifest.chicks if c.chick_id in kept_ids],
        frames=kept_frames,
        crop_kind=kind,
    )
    crop_manifest.save(out_dir / "manifest.json")
    _write_flagged(out_dir, flagged)
    return {"frames": len(manifest.accepted_frames()), "cropped": len(kept_frames), "flagged": len(flagged)}


# --- evaluate ---------------------------------------------------------------------


def run_evaluate(crops_dir: str | Path, k: int, seed: int, classifier_cfg, out_dir: str | Path):
    """Grouped k-fold CV over a crops directory; writes result JSON + tables."""
    from .evaluation import run_cross_validation, samples_from_manifest, write_report

    crops_dir = Path(crops_dir)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = DatasetManifest.load(crops_dir / "manifest.json")
    if manifest.crop_kind not in ("full", "middle"):
        raise RejectedInputError("evaluate needs a crops manifest (crop_kind full or middle)")
    samples = samples_from_manifest(manifest, crops_dir)
    plan = assign_folds(manifest.chicks, k=k, seed=seed)
    result = run_cross_validation(samples, plan, classifier_cfg, crop_kind=manifest.crop_kind)
    result.save(out_dir / f"cv_{classifier_cfg.backbone}_{manifest.crop_kind}.json")
    write_report([result], out_dir)
    return result


# --- train-classifier ---------------------------------------------------------------


def run_train_classifier(crops_dir: str | Path, out_model: str | Path, classifier_cfg, val_fraction: float = 0.2):
    """Grouped holdout train; saves the best snapshot and the history CSV."""
    import random as _random

    from .classifier import save_classifier, save_history_csv, train_classifier
    from .evaluation import samples_from_manifest

    crops_dir = Path(crops_dir)
    manifest = DatasetManifest.load(crops_dir / "manifest.json")
    samples = samples_from_manifest(manifest, crops_dir)
    ids = sorted({s.chick_id for s in samples})
    rng = _random.Random(classifier_cfg.seed)
    rng.shuffle(ids)
    n_val = max(1, int(len(ids) * val_fraction))
    val_ids = set(ids[:n_val])
    train = [s for s in samples if s.chick_id not in val_ids]
    val = [s for s in samples if s.chick_id in val_ids]
    result = train_classifier(train, val, classifier_cfg)
    save_classifier(result.model, classifier_cfg, out_model)
    save_history_csv(result.history, Path(out_model).with_suffix(".history.csv"))
    return result


# --- explain -------------------------------------------------------------------------


def run_explain(crops_dir: str | Path, model_path: str | Path, out_dir: str | Path, limit: int = 8,
                target_layer: str | None = None) -> list[dict]:
    from .classifier import load_classifier
    from .explain import export_explanation

    crops_dir = Path(crops_dir)
    manifest = DatasetManifest.load(crops_dir / "manifest.json")
    model, cfg = load_classifier(model_path)
    records = []
    for frame in manifest.accepted_frames()[:limit]:
        image = load_image(crops_dir / frame.image_ref)
        records.append(
            export_explanation(image, frame.frame_id, model, cfg, out_dir, target_layer=target_layer)
        )
    return records


# --- ingest ---------------------------------------------------------------------------


def run_ingest(
    frames_dir: str | Path,
    chicks_csv: str | Path,
    out_dir: str | Path,
    split_stacked_views: bool = False,
) -> DatasetManifest:
    """Build a manifest from `<video_id>_<frame_idx>.png` files + a chick CSV.

    The CSV has a `chick_id,gender` header; the video id doubles as the
    chick id. With split_stacked_views, each stacked frame becomes three
    view images `<stem>_v{0,1,2}.png`.
    """
    from .dataset import ChickRecord, split_views

    frames_dir = Path(frames_dir)
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)

    chicks: list[ChickRecord] = []
    with open(chicks_csv, newline="") as fh:
        for row in csv.DictReader(fh):
            chicks.append(ChickRecord(chick_id=row["chick_id"], gender=row["gender"]))
    known = {c.chick_id for c in chicks}

    frames: list[FrameRecord] = []
    for path in sorted(frames_dir.glob("*.png")):
        stem = path.stem
        video_id, _, frame_idx = stem.rpartition("_")
        if not video_id or video_id not in known:
            log.warning("skipping %s: no chick record for video id %r", path.name, video_id)
            continue
        if split_stacked_views:
            stacked = np.asarray(Image.open(path))
            for vi, view in enumerate(split_views(stacked)):
                name = f"{stem}_v{vi}.png"
                Image.fromarray(view).save(out_dir / "images" / name)
                frames.append(
                    FrameRecord(
                        frame_id=f"{stem}_v{vi}",
                        chick_id=video_id,
                        view_index=vi,
                        image_ref=f"images/{name}",
                        quality="unreviewed",
                    )
                )
        else:
            name = f"{stem}.png"
            Image.fromarray(np.asarray(Image.open(path))).save(out_dir / "images" / name)
            frames.append(
                FrameRecord(
                    frame_id=stem,
                    chick_id=video_id,
                    view_index=0,
                    image_ref=f"images/{name}",
                    quality="unreviewed",
                )
            )

    manifest = DatasetManifest(chicks=chicks, frames=frames, crop_kind="none")
    manifest.save(out_dir / "manifest.json")
    return manifest


# --- keypoint training -------------------------------------------------------------------


def run_train_keypoints(dataset_dir: str | Path, out_model: str | Path, cfg: KeypointModelConfig,
                        epochs: int, seed: int, lr: float = 1e-3) -> list[float]:
    from .keypoints import save_keypoint_model, train_keypoint_model

    dataset_dir = Path(dataset_dir)
    manifest = DatasetManifest.load(dataset_dir / "manifest.json")
    model, history = train_keypoint_model(manifest, cfg, epochs, data_root=dataset_dir, seed=seed, lr=lr)
    save_keypoint_model(model, cfg, out_model)
    with open(Path(out_model).with_suffix(".loss.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_loss"])
        for i, loss in enumerate(history):
            w.writerow([i, repr(loss)])
    return history
