"""Command line for every pipeline stage.

Each subcommand reads an optional JSON config (--config FILE, or the
PIPELINE_CONFIG environment variable) and applies flag overrides on top.
Exit codes: 0 success, 1 stage failure (structured error on stderr),
2 usage/config errors.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .errors import ChickfaceError

DEFAULT_CONFIG = {
    "paths": {"data_root": ".", "output_root": "out"},
    "detector": {"input_size": 640, "conf_threshold": 0.8, "iou_threshold": 0.5},
    "keypoints": {"input_size": [256, 256], "stride": 4, "sigma": 2.0},
    "classifier": {
        "backbone": "resnet50",
        "head_dims": [512, 128, 1],
        "lr": 1e-5,
        "epochs": 50,
        "threshold": 0.5,
        "batch_size": 32,
        "finetune": "full",
    },
    "cropping": {"margin_scale": 1.0, "mask_radius_factor": 0.25},
    "fold_seed": 0,
}


def load_config(path: str | None) -> dict:
    cfg = json.loads(json.dumps(DEFAULT_CONFIG))  # deep copy
    source = path or os.environ.get("PIPELINE_CONFIG")
    if source:
        try:
            user = json.loads(Path(source).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise SystemExit(f"error: cannot read config {source!r}: {exc}")
        for key, value in user.items():
            if isinstance(value, dict) and isinstance(cfg.get(key), dict):
                cfg[key].update(value)
            else:
                cfg[key] = value
    return cfg


def _classifier_cfg(cfg: dict, args) -> "object":
    from .classifier import ClassifierConfig

    c = dict(cfg["classifier"])
    if getattr(args, "backbone", None):
        c["backbone"] = args.backbone
    if getattr(args, "epochs", None) is not None:
        c["epochs"] = args.epochs
    if getattr(args, "lr", None) is not None:
        c["lr"] = args.lr
    if getattr(args, "batch_size", None) is not None:
        c["batch_size"] = args.batch_size
    if getattr(args, "finetune", None):
        c["finetune"] = args.finetune
    c["head_dims"] = tuple(c["head_dims"])
    c["seed"] = args.seed
    return ClassifierConfig(**c)


def _keypoint_cfg(cfg: dict):
    from .keypoints import KeypointModelConfig

    k = cfg["keypoints"]
    return KeypointModelConfig(
        input_size=tuple(k["input_size"]), stride=int(k["stride"]), sigma=float(k["sigma"])
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="chickface", description=__doc__)
    parser.add_argument("--config", help="JSON pipeline config file")
    parser.add_argument("--seed", type=int, default=0, help="seed for all stochastic stages")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="build a manifest from raw frame images")
    p.add_argument("--frames-dir", required=True)
    p.add_argument("--chicks", required=True, help="CSV with chick_id,gender")
    p.add_argument("--out", required=True)
    p.add_argument("--split-views", action="store_true", help="split stacked 3-view frames")

    p = sub.add_parser("split-views", help="split one stacked frame into 3 view images")
    p.add_argument("--image", required=True)
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("synth-data", help="generate a synthetic dataset with ground truth")
    p.add_argument("--out", required=True)
    p.add_argument("--ids", type=int, default=40)
    p.add_argument("--frames-per-id", type=int, default=8)
    p.add_argument("--separability", type=float, default=0.9)
    p.add_argument("--image-size", type=int, default=256)
    p.add_argument("--occlude-prob", type=float, default=0.0)

    p = sub.add_parser("detect", help="run face detection over a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True, help="detections JSON path")
    p.add_argument("--detector", default="replay", help="'replay' or 'import:module:attr'")

    p = sub.add_parser("align", help="keypoints + pose gate + alignment")
    p.add_argument("--dataset", required=True)
    p.add_argument("--detections", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--keypoints", default="replay", help="'replay' or 'model:PATH'")

    p = sub.add_parser("crop", help="cut full or middle face crops")
    p.add_argument("--aligned", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--kind", choices=["full", "middle"], required=True)
    p.add_argument("--margin-scale", type=float, default=None)
    p.add_argument("--mask-radius-factor", type=float, default=None)

    p = sub.add_parser("train-keypoints", help="train the keypoint heatmap model")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True, help="model file path")
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--lr", type=float, default=1e-3)

    p = sub.add_parser("train-classifier", help="train a gender classifier on crops")
    p.add_argument("--crops", required=True)
    p.add_argument("--out", required=True, help="model file path")
    p.add_argument("--backbone")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--finetune", choices=["full", "head"])

    p = sub.add_parser("evaluate", help="grouped k-fold cross-validation")
    p.add_argument("--crops", required=True)
    p.add_argument("--out", required=True, help="report directory")
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--crop", choices=["full", "middle"], default=None,
                   help="assert the crops manifest carries this kind")
    p.add_argument("--backbone")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--finetune", choices=["full", "head"])

    p = sub.add_parser("explain", help="Grad-CAM++ maps for sample crops")
    p.add_argument("--crops", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--limit", type=int, default=8)
    p.add_argument("--target-layer", default=None)

    p = sub.add_parser("report", help="re-render tables from saved CV results")
    p.add_argument("--results", nargs="+", required=True, help="cv_*.json files")
    p.add_argument("--out", required=True)

    p = sub.add_parser("serve-annotations", help="run the annotation service + UI")
    p.add_argument("--dataset", required=True)
    p.add_argument("--db", default=None, help="sqlite path (default: <dataset>/annotations.db)")
    p.add_argument("--ui-dir", default=None, help="built frontend directory to serve")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    cfg = load_config(args.config)
    try:
        return _dispatch(args, cfg)
    except ChickfaceError as exc:
        print(json.dumps({"error": exc.code, "message": str(exc)}), file=sys.stderr)
        return 1


def _dispatch(args, cfg: dict) -> int:
    if args.command == "ingest":
        from .pipeline import run_ingest

        manifest = run_ingest(args.frames_dir, args.chicks, args.out, split_stacked_views=args.split_views)
        print(f"ingested {len(manifest.frames)} frames from {len(manifest.chicks)} chicks -> {args.out}")
        return 0

    if args.command == "split-views":
        import numpy as np
        from PIL import Image

        from .dataset import split_views

        out_dir = Path(args.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        stem = Path(args.image).stem
        views = split_views(np.asarray(Image.open(args.image)))
        for i, view in enumerate(views):
            Image.fromarray(view).save(out_dir / f"{stem}_v{i}.png")
        print(f"wrote 3 views to {out_dir}")
        return 0

    if args.command == "synth-data":
        from .synth import SynthConfig, generate_dataset

        manifest = generate_dataset(
            args.out,
            SynthConfig(
                n_ids=args.ids,
                frames_per_id=args.frames_per_id,
                seed=args.seed,
                separability=args.separability,
                image_size=args.image_size,
                occlude_prob=args.occlude_prob,
            ),
        )
        print(f"generated {len(manifest.frames)} frames for {len(manifest.chicks)} chicks -> {args.out}")
        return 0

    if args.command == "detect":
        from .detection import DetectorConfig
        from .pipeline import run_detect

        d = cfg["detector"]
        stats = run_detect(
            args.dataset,
            args.out,
            args.detector,
            DetectorConfig(
                input_size=int(d["input_size"]),
                conf_threshold=float(d["conf_threshold"]),
                iou_threshold=float(d["iou_threshold"]),
            ),
        )
        print(f"detected faces in {stats['detected']}/{stats['frames']} frames -> {args.out}")
        return 0

    if args.command == "align":
        from .pipeline import run_align

        stats = run_align(args.dataset, args.detections, args.out, keypoints=args.keypoints,
                          kp_cfg=_keypoint_cfg(cfg))
        print(f"aligned {stats['aligned']}/{stats['frames']} frames ({stats['flagged']} flagged) -> {args.out}")
        return 0

    if args.command == "crop":
        from .pipeline import run_crop

        crop_cfg = cfg["cropping"]
        margin = args.margin_scale if args.margin_scale is not None else float(crop_cfg["margin_scale"])
        mask = (
            args.mask_radius_factor
            if args.mask_radius_factor is not None
            else float(crop_cfg["mask_radius_factor"])
        )
        stats = run_crop(args.aligned, args.out, args.kind, margin_scale=margin, mask_radius_factor=mask)
        print(f"cropped {stats['cropped']}/{stats['frames']} frames ({stats['flagged']} flagged) -> {args.out}")
        return 0

    if args.command == "train-keypoints":
        from .pipeline import run_train_keypoints

        history = run_train_keypoints(
            args.dataset, args.out, _keypoint_cfg(cfg), epochs=args.epochs, seed=args.seed, lr=args.lr
        )
        final = history[-1] if history else float("nan")
        print(f"trained keypoint model for {len(history)} epochs (final loss {final:.6f}) -> {args.out}")
        return 0

    if args.command == "train-classifier":
        from .pipeline import run_train_classifier

        result = run_train_classifier(args.crops, args.out, _classifier_cfg(cfg, args))
        best = result.best
        print(f"trained classifier; best val_accuracy {best['val_accuracy']} at epoch {best['epoch']} -> {args.out}")
        return 0

    if args.command == "evaluate":
        from .pipeline import run_evaluate

        if args.crop is not None:
            from .dataset import DatasetManifest
            from .errors import RejectedInputError

            kind = DatasetManifest.load(Path(args.crops) / "manifest.json").crop_kind
            if kind != args.crop:
                raise RejectedInputError(f"--crop {args.crop} but the manifest carries {kind!r} crops")
        result = run_evaluate(args.crops, k=args.k, seed=args.seed, classifier_cfg=_classifier_cfg(args=args, cfg=cfg),
                              out_dir=args.out)
        avg = result.report.averages
        print(
            f"cv done: accuracy {avg['accuracy']:.4f} precision {avg['precision']:.4f} "
            f"recall {avg['recall']:.4f} f1 {avg['f1']:.4f} auc {avg['auc']:.4f} -> {args.out}"
        )
        return 0

    if args.command == "explain":
        from .pipeline import run_explain

        records = run_explain(args.crops, args.model, args.out, limit=args.limit, target_layer=args.target_layer)
        print(f"wrote {len(records)} saliency overlays -> {args.out}")
        return 0

    if args.command == "report":
        from .evaluation import CVResult, write_report

        results = [CVResult.load(p) for p in args.results]
        paths = write_report(results, args.out)
        print(f"wrote {', '.join(p.name for p in paths)} -> {args.out}")
        return 0

    if args.command == "serve-annotations":
        import uvicorn

        from .annotation_service import create_app
        from .annotation_store import AnnotationStore
        from .dataset import DatasetManifest

        dataset_dir = Path(args.dataset)
        db_path = args.db or str(dataset_dir / "annotations.db")
        store = AnnotationStore(db_path, images_root=dataset_dir)
        store.load_manifest(DatasetManifest.load(dataset_dir / "manifest.json"))
        app = create_app(store, ui_dir=args.ui_dir)
        uvicorn.run(app, host=args.host, port=args.port)
        return 0

    raise SystemExit(2)


if __name__ == "__main__":
    sys.exit(main())
