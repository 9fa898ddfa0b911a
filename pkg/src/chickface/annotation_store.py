"""Persistence and state machine for the semi-automatic annotation cycle.

A single-file sqlite database holds chicks, frames, tasks, rounds and an
append-only audit log; images stay on the filesystem. Task writes are
guarded by optimistic versioning, so concurrent editors cannot clobber
each other: a stale submit raises VersionConflictError.
"""

from __future__ import annotations

import hashlib
import io
import json
import sqlite3
import threading
import zipfile
from datetime import datetime, timezone
from pathlib import Path

from .dataset import DatasetManifest, GENDERS
from .errors import (
    IllegalTransitionError,
    RejectedInputError,
    UnknownTaskError,
    VersionConflictError,
)
from .geometry import BoundingBox, KeypointSet, to_labelme

SCHEMA_VERSION = 1

STATUSES = ("unlabeled", "predicted", "revised", "accepted", "rejected_quality")

# unlabeled -> predicted (propose); predicted/revised -> submit outcomes;
# accepted / rejected_quality are terminal. Seeding creates accepted tasks
# directly (creation, not a transition).
LEGAL_TRANSITIONS: dict[str, set[str]] = {
    "unlabeled": {"predicted"},
    "predicted": {"revised", "accepted", "rejected_quality"},
    "revised": {"revised", "accepted", "rejected_quality"},
    "accepted": set(),
    "rejected_quality": set(),
}

_SCHEMA = """
CREATE TABLE IF NOT EXISTS meta (key TEXT PRIMARY KEY, value TEXT);
CREATE TABLE IF NOT EXISTS chicks (chick_id TEXT PRIMARY KEY, gender TEXT NOT NULL);
CREATE TABLE IF NOT EXISTS frames (
    frame_id TEXT PRIMARY KEY,
    chick_id TEXT NOT NULL REFERENCES chicks(chick_id),
    view_index INTEGER NOT NULL,
    image_ref TEXT NOT NULL,
    quality TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS rounds (
    round INTEGER PRIMARY KEY,
    detector_version TEXT,
    keypoints_version TEXT,
    created_at TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS tasks (
    task_id TEXT PRIMARY KEY,
    frame_id TEXT UNIQUE NOT NULL REFERENCES frames(frame_id),
    status TEXT NOT NULL,
    round INTEGER NOT NULL,
    editor TEXT,
    draft_box TEXT,
    draft_keypoints TEXT,
    revised_box TEXT,
    revised_keypoints TEXT,
    version INTEGER NOT NULL DEFAULT 1,
    created_at TEXT NOT NULL,
    updated_at TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS audit (
    seq INTEGER PRIMARY KEY AUTOINCREMENT,
    task_id TEXT,
    at TEXT NOT NULL,
    editor TEXT,
    action TEXT NOT NULL,
    payload TEXT NOT NULL
);
"""


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


def _dump(obj) -> str | None:
    return None if obj is None else json.dumps(obj, sort_keys=True)


def _load(text: str | None):
    return None if text is None else json.loads(text)


class AnnotationStore:
    """All reads/writes go through one connection guarded by a lock."""

    def __init__(self, db_path: str | Path = ":memory:", images_root: str | Path = "."):
        self.db_path = str(db_path)
        self.images_root = Path(images_root)
        self._lock = threading.RLock()
        self.retrain_lock = threading.Lock()
        self._conn = sqlite3.connect(self.db_path, check_same_thread=False)
        self._conn.row_factory = sqlite3.Row
        with self._lock, self._conn:
            self._conn.executescript(_SCHEMA)
            self._conn.execute(
                "INSERT OR IGNORE INTO meta (key, value) VALUES ('schema_version', ?)",
                (str(SCHEMA_VERSION),),
            )

    def close(self) -> None:
        self._conn.close()

    # --- manifest ---------------------------------------------------------

    def load_manifest(self, manifest: DatasetManifest) -> None:
        with self._lock, self._conn:
            for c in manifest.chicks:
                self._conn.execute(
                    "INSERT OR REPLACE INTO chicks (chick_id, gender) VALUES (?, ?)",
                    (c.chick_id, c.gender),
                )
            for f in manifest.frames:
                self._conn.execute(
                    "INSERT OR IGNORE INTO frames (frame_id, chick_id, view_index, image_ref, quality)"
                    " VALUES (?, ?, ?, ?, ?)",
                    (f.frame_id, f.chick_id, f.view_index, f.image_ref, f.quality),
                )

    def manifest(self) -> DatasetManifest:
        from .dataset import ChickRecord, FrameRecord

        with self._lock:
            chicks = [
                ChickRecord(r["chick_id"], r["gender"])
                for r in self._conn.execute("SELECT * FROM chicks ORDER BY chick_id")
            ]
            frames = [
                FrameRecord(r["frame_id"], r["chick_id"], r["view_index"], r["image_ref"], r["quality"])
                for r in self._conn.execute("SELECT * FROM frames ORDER BY frame_id")
            ]
        return DatasetManifest(chicks=chicks, frames=frames, crop_kind="none")

    def image_path(self, frame_id: str) -> Path:
        with self._lock:
            row = self._conn.execute(
                "SELECT image_ref FROM frames WHERE frame_id = ?", (frame_id,)
            ).fetchone()
        if row is None:
            raise UnknownTaskError(f"unknown frame {frame_id!r}")
        return self.images_root / row["image_ref"]

    # --- rounds -----------------------------------------------------------

    def current_round(self) -> int:
        with self._lock:
            row = self._conn.execute("SELECT MAX(round) AS r FROM rounds").fetchone()
        return -1 if row["r"] is None else int(row["r"])

    def rounds(self) -> list[dict]:
        with self._lock:
            rows = self._conn.execute("SELECT * FROM rounds ORDER BY round").fetchall()
        return [
            {
                "round": r["round"],
                "model_versions": {
                    "detector": r["detector_version"],
                    "keypoints": r["keypoints_version"],
                },
                "counts": self.round_counts(r["round"]),
                "created_at": r["created_at"],
            }
            for r in rows
        ]

    def round_counts(self, round_no: int) -> dict:
        with self._lock:
            rows = self._conn.execute(
                "SELECT status, COUNT(*) AS n FROM tasks WHERE round = ? GROUP BY status",
                (round_no,),
            ).fetchall()
            by_status = {r["status"]: r["n"] for r in rows}
            # manual seeds only ever exist in round 0
            seeded = (
                self._conn.execute("SELECT COUNT(*) AS n FROM audit WHERE action = 'seed'").fetchone()["n"]
                if round_no == 0
                else 0
            )
        return {
            "seeded": seeded,
            "predicted": by_status.get("predicted", 0),
            "revised": by_status.get("revised", 0),
            "accepted": by_status.get("accepted", 0),
            "rejected": by_status.get("rejected_quality", 0),
        }

    def _open_round(self, round_no: int, detector_version: str | None, keypoints_version: str | None) -> None:
        self._conn.execute(
            "INSERT INTO rounds (round, detector_version, keypoints_version, created_at) VALUES (?, ?, ?, ?)",
            (round_no, detector_version, keypoints_version, _now()),
        )

    # --- seeding ----------------------------------------------------------

    def seed_round(self, seeds: list[dict]) -> dict:
        """Store manual annotations as accepted round-0 tasks.

        Each seed is {frame_id, box: dict, keypoints: dict}. Invalid entries
        land in the rejection list; the round is created regardless.
        Re-seeding a frame is a no-op (keyed by frame_id).
        """
        rejected: list[dict] = []
        accepted = 0
        with self._lock, self._conn:
            if self.current_round() < 0:
                self._open_round(0, None, None)
            for seed in seeds:
                frame_id = seed.get("frame_id")
                try:
                    row = self._conn.execute(
                        "SELECT frame_id FROM frames WHERE frame_id = ?", (frame_id,)
                    ).fetchone()
                    if row is None:
                        raise UnknownTaskError(f"unknown frame {frame_id!r}")
                    box = BoundingBox.from_dict(seed["box"])
                    kps = KeypointSet.from_dict(seed["keypoints"])
                except Exception as exc:
                    rejected.append({"frame_id": frame_id, "error": str(exc)})
                    continue
                existing = self._conn.execute(
                    "SELECT task_id FROM tasks WHERE frame_id = ?", (frame_id,)
                ).fetchone()
                if existing is not None:
                    continue  # idempotent re-seed
                now = _now()
                self._conn.execute(
                    "INSERT INTO tasks (task_id, frame_id, status, round, draft_box, draft_keypoints,"
                    " revised_box, revised_keypoints, version, created_at, updated_at)"
                    " VALUES (?, ?, 'accepted', 0, NULL, NULL, ?, ?, 1, ?, ?)",
                    (f"t-{frame_id}", frame_id, _dump(box.to_dict()), _dump(kps.to_dict()), now, now),
                )
                self._append_audit(f"t-{frame_id}", None, "seed", {"round": 0, "frame_id": frame_id})
                accepted += 1
        return {"round": 0, "seeded": accepted, "rejected": rejected}

    # --- proposing --------------------------------------------------------

    def unlabeled_frames(self) -> list[str]:
        with self._lock:
            rows = self._conn.execute(
                "SELECT f.frame_id FROM frames f LEFT JOIN tasks t ON t.frame_id = f.frame_id"
                " WHERE t.task_id IS NULL ORDER BY f.frame_id"
            ).fetchall()
        return [r["frame_id"] for r in rows]

    def create_predicted_tasks(self, drafts: list[dict]) -> dict:
        """Store model drafts: each {frame_id, box: dict|None, keypoints: dict|None}.

        Frames that already have a task are skipped and reported.
        """
        created, skipped = [], []
        with self._lock, self._conn:
            round_no = max(self.current_round(), 0)
            if self.current_round() < 0:
                self._open_round(0, None, None)
            for d in drafts:
                frame_id = d["frame_id"]
                row = self._conn.execute(
                    "SELECT frame_id FROM frames WHERE frame_id = ?", (frame_id,)
                ).fetchone()
                if row is None:
                    skipped.append({"frame_id": frame_id, "reason": "unknown_frame"})
                    continue
                existing = self._conn.execute(
                    "SELECT status FROM tasks WHERE frame_id = ?", (frame_id,)
                ).fetchone()
                if existing is not None:
                    skipped.append({"frame_id": frame_id, "reason": f"already_{existing['status']}"})
                    continue
                now = _now()
                task_id = f"t-{frame_id}"
                self._conn.execute(
                    "INSERT INTO tasks (task_id, frame_id, status, round, draft_box, draft_keypoints,"
                    " version, created_at, updated_at) VALUES (?, ?, 'predicted', ?, ?, ?, 1, ?, ?)",
                    (task_id, frame_id, round_no, _dump(d.get("box")), _dump(d.get("keypoints")), now, now),
                )
                self._append_audit(task_id, None, "propose", {"round": round_no, "frame_id": frame_id})
                created.append(task_id)
        return {"created": created, "skipped": skipped}

    # --- tasks ------------------------------------------------------------

    def _row_to_task(self, row: sqlite3.Row) -> dict:
        return {
            "task_id": row["task_id"],
            "frame_id": row["frame_id"],
            "status": row["status"],
            "round": row["round"],
            "editor": row["editor"],
            "draft_box": _load(row["draft_box"]),
            "draft_keypoints": _load(row["draft_keypoints"]),
            "revised_box": _load(row["revised_box"]),
            "revised_keypoints": _load(row["revised_keypoints"]),
            "version": row["version"],
            "created_at": row["created_at"],
            "updated_at": row["updated_at"],
        }

    def get_task(self, task_id: str) -> dict:
        with self._lock:
            row = self._conn.execute("SELECT * FROM tasks WHERE task_id = ?", (task_id,)).fetchone()
        if row is None:
            raise UnknownTaskError(f"unknown task {task_id!r}")
        return self._row_to_task(row)

    def next_task(self, editor: str) -> dict | None:
        """Claim the oldest predicted task for this editor."""
        with self._lock, self._conn:
            row = self._conn.execute(
                "SELECT * FROM tasks WHERE status = 'predicted'"
                " ORDER BY created_at, task_id LIMIT 1"
            ).fetchone()
            if row is None:
                return None
            self._conn.execute(
                "UPDATE tasks SET editor = ?, updated_at = ? WHERE task_id = ?",
                (editor, _now(), row["task_id"]),
            )
            self._append_audit(row["task_id"], editor, "claim", {})
        return self.get_task(row["task_id"])

    def submit_correction(
        self,
        task_id: str,
        *,
        version: int,
        editor: str,
        revised_box: dict | None = None,
        revised_keypoints: dict | None = None,
        quality: str = "ok",
        accept: bool = False,
        gender_confirmation: str | None = None,
    ) -> dict:
        """Persist a human revision with optimistic version checking.

        quality="reject" marks the task rejected_quality and flags the frame;
        accept=True adopts the (possibly untouched) geometry as accepted;
        otherwise the task becomes/stays revised. All prior versions remain
        reconstructible from the audit log.
        """
        if quality not in ("ok", "reject"):
            raise RejectedInputError(f"quality must be 'ok' or 'reject', got {quality!r}")
        with self._lock, self._conn:
            row = self._conn.execute("SELECT * FROM tasks WHERE task_id = ?", (task_id,)).fetchone()
            if row is None:
                raise UnknownTaskError(f"unknown task {task_id!r}")
            if int(version) != row["version"]:
                raise VersionConflictError(
                    f"task {task_id} is at version {row['version']}, submit carried {version}"
                )
            new_status = "rejected_quality" if quality == "reject" else ("accepted" if accept else "revised")
            if new_status not in LEGAL_TRANSITIONS[row["status"]]:
                raise IllegalTransitionError(f"cannot go {row['status']} -> {new_status} on {task_id}")

            if quality == "reject":
                box_json = row["revised_box"]
                kps_json = row["revised_keypoints"]
            else:
                box = BoundingBox.from_dict(revised_box) if revised_box else None
                kps = KeypointSet.from_dict(revised_keypoints) if revised_keypoints else None
                if box is None:
                    box_json = row["revised_box"] or row["draft_box"]
                else:
                    box_json = _dump(box.to_dict())
                if kps is None:
                    kps_json = row["revised_keypoints"] or row["draft_keypoints"]
                else:
                    kps_json = _dump(kps.to_dict())
                if box_json is None or kps_json is None:
                    raise RejectedInputError("revision needs both a box and keypoints (none drafted)")

            self._conn.execute(
                "UPDATE tasks SET status = ?, revised_box = ?, revised_keypoints = ?,"
                " editor = ?, version = version + 1, updated_at = ? WHERE task_id = ?",
                (new_status, box_json, kps_json, editor, _now(), task_id),
            )
            self._append_audit(
                task_id,
                editor,
                "reject_quality" if quality == "reject" else ("accept" if accept else "submit"),
                {
                    "from_status": row["status"],
                    "to_status": new_status,
                    "revised_box": _load(box_json),
                    "revised_keypoints": _load(kps_json),
                },
            )
            if quality == "reject":
                self._conn.execute(
                    "UPDATE frames SET quality = 'rejected' WHERE frame_id = ?", (row["frame_id"],)
                )
            if gender_confirmation is not None:
                if gender_confirmation not in GENDERS:
                    raise RejectedInputError(f"gender must be one of {GENDERS}")
                chick = self._conn.execute(
                    "SELECT chick_id, gender FROM chicks WHERE chick_id ="
                    " (SELECT chick_id FROM frames WHERE frame_id = ?)",
                    (row["frame_id"],),
                ).fetchone()
                if chick is not None and chick["gender"] != gender_confirmation:
                    self._conn.execute(
                        "UPDATE chicks SET gender = ? WHERE chick_id = ?",
                        (gender_confirmation, chick["chick_id"]),
                    )
                    self._append_audit(
                        task_id,
                        editor,
                        "gender_confirm",
                        {"chick_id": chick["chick_id"], "from": chick["gender"], "to": gender_confirmation},
                    )
        return self.get_task(task_id)

    # --- audit --------------------------------------------------------------

    def _append_audit(self, task_id: str | None, editor: str | None, action: str, payload: dict) -> None:
        self._conn.execute(
            "INSERT INTO audit (task_id, at, editor, action, payload) VALUES (?, ?, ?, ?, ?)",
            (task_id, _now(), editor, action, json.dumps(payload, sort_keys=True)),
        )

    def audit_log(self, task_id: str | None = None) -> list[dict]:
        q = "SELECT * FROM audit" + (" WHERE task_id = ?" if task_id else "") + " ORDER BY seq"
        with self._lock:
            rows = self._conn.execute(q, (task_id,) if task_id else ()).fetchall()
        return [
            {
                "seq": r["seq"],
                "task_id": r["task_id"],
                "at": r["at"],
                "editor": r["editor"],
                "action": r["action"],
                "payload": json.loads(r["payload"]),
            }
            for r in rows
        ]

    # --- export -------------------------------------------------------------

    def ground_truth_tasks(self, rounds: list[int] | None = None) -> list[dict]:
        """Accepted/revised tasks (never rejected_quality), oldest round first."""
        q = "SELECT * FROM tasks WHERE status IN ('accepted', 'revised')"
        params: tuple = ()
        if rounds is not None:
            placeholders = ",".join("?" * len(rounds))
            q += f" AND round IN ({placeholders})"
            params = tuple(int(r) for r in rounds)
        q += " ORDER BY frame_id"
        with self._lock:
            rows = self._conn.execute(q, params).fetchall()
        return [self._row_to_task(r) for r in rows]

    def export_ground_truth(self, rounds: list[int] | None = None) -> bytes:
        """Deterministic zip: LabelMe JSONs, detector boxes, manifest slice."""
        tasks = self.ground_truth_tasks(rounds)
        manifest = self.manifest()
        frames_by_id = {f.frame_id: f for f in manifest.frames}
        chick_ids = set()
        entries: list[tuple[str, bytes]] = []
        slice_frames = []
        for t in tasks:
            frame = frames_by_id[t["frame_id"]]
            if frame.quality == "rejected":
                continue
            box = BoundingBox.from_dict(t["revised_box"]) if t["revised_box"] else None
            kps = KeypointSet.from_dict(t["revised_keypoints"]) if t["revised_keypoints"] else None
            doc = to_labelme(box, kps, image_path=f"../{frame.image_ref}")
            entries.append(
                (f"annotations/{t['frame_id']}.json", (json.dumps(doc, indent=2) + "\n").encode())
            )
            if box is not None:
                from PIL import Image as PILImage

                img_path = self.images_root / frame.image_ref
                try:
                    with PILImage.open(img_path) as im:
                        w, h = im.size
                except Exception:
                    w = h = None
                if w and h:
                    cx = (box.x + box.w / 2) / w
                    cy = (box.y + box.h / 2) / h
                    entries.append(
                        (
                            f"boxes/{t['frame_id']}.txt",
                            f"0 {cx:.6f} {cy:.6f} {box.w / w:.6f} {box.h / h:.6f}\n".encode(),
                        )
                    )
            chick_ids.add(frame.chick_id)
            slice_frames.append(frame)

        slice_manifest = DatasetManifest(
            chicks=[c for c in manifest.chicks if c.chick_id in chick_ids],
            frames=slice_frames,
            crop_kind="none",
        )
        entries.append(
            ("manifest.json", (json.dumps(slice_manifest.to_dict(), indent=2) + "\n").encode())
        )

        buf = io.BytesIO()
        with zipfile.ZipFile(buf, "w", zipfile.ZIP_DEFLATED) as zf:
            for name, data in sorted(entries):
                info = zipfile.ZipInfo(name, date_time=(1980, 1, 1, 0, 0, 0))
                info.compress_type = zipfile.ZIP_DEFLATED
                info.external_attr = 0o644 << 16
                zf.writestr(info, data)
        return buf.getvalue()

    # --- round advancement ----------------------------------------------------

    def advance_round(self, retrain) -> dict:
        """Retrain on all accumulated ground truth and open the next round.

        `retrain(export_zip_bytes, store) -> (detector_version, keypoints_version)`.
        No new revised/accepted work in the current round -> warning no-op.
        """
        current = self.current_round()
        if current < 0:
            raise RejectedInputError("no rounds yet; seed round 0 first")
        with self._lock:
            new_gt = self._conn.execute(
                "SELECT COUNT(*) AS n FROM tasks WHERE round = ? AND status IN ('accepted', 'revised')",
                (current,),
            ).fetchone()["n"]
        if new_gt == 0:
            return {"round": current, "advanced": False, "warning": "no new revised/accepted tasks"}

        export = self.export_ground_truth()
        detector_version, keypoints_version = retrain(export, self)
        with self._lock, self._conn:
            self._open_round(current + 1, detector_version, keypoints_version)
            self._append_audit(None, None, "advance", {"round": current + 1})
        return {
            "round": current + 1,
            "advanced": True,
            "model_versions": {"detector": detector_version, "keypoints": keypoints_version},
        }


def propose(
    store: AnnotationStore,
    frame_ids: list[str],
    detector,
    keypoint_predictor=None,
) -> dict:
    """Draft annotations for unlabeled frames by running the models.

    `detector(image) -> Detection | None`; `keypoint_predictor(image, box)
    -> KeypointSet | None`. Frames with no detected face get empty drafts
    but still become predicted tasks; frames that already have a task are
    skipped and reported.
    """
    import numpy as np
    from PIL import Image

    drafts = []
    for frame_id in frame_ids:
        box_dict = kps_dict = None
        img_path = store.image_path(frame_id)
        if img_path.exists():
            image = np.asarray(Image.open(img_path).convert("RGB"))
            det = detector(image)
            if det is not None:
                box_dict = det.box.to_dict()
                if keypoint_predictor is not None:
                    kps = keypoint_predictor(image, det.box)
                    kps_dict = kps.to_dict() if kps is not None else None
        drafts.append({"frame_id": frame_id, "box": box_dict, "keypoints": kps_dict})
    return store.create_predicted_tasks(drafts)


def default_retrain(training_config: dict):
    """Build a retrain callback: tiny keypoint model on the exported GT.

    The detector is an external artifact, so its "training" here is the
    deterministic export consumed by it; its version is the export hash.
    """

    def retrain(export_zip: bytes, store: AnnotationStore) -> tuple[str, str]:
        import numpy as np
        from PIL import Image

        from .cropping import rasterize_box
        from .geometry import from_labelme
        from .keypoints import KeypointModelConfig, model_version_hash, train_on_samples

        detector_version = hashlib.sha256(export_zip).hexdigest()[:16]

        samples = []
        with zipfile.ZipFile(io.BytesIO(export_zip)) as zf:
            for name in sorted(zf.namelist()):
                if not name.startswith("annotations/"):
                    continue
                doc = json.loads(zf.read(name))
                box, kps = from_labelme(doc)
                if box is None or kps is None:
                    continue
                frame_id = Path(name).stem
                img_path = store.image_path(frame_id)
                if not img_path.exists():
                    continue
                image = np.asarray(Image.open(img_path).convert("RGB"))
                x0, y0, x1, y1 = rasterize_box(box, image.shape[:2])
                samples.append((image[y0:y1, x0:x1], kps.translate(-x0, -y0)))
        if not samples:
            raise RejectedInputError("no trainable ground truth in the export")
        cfg = KeypointModelConfig(
            input_size=tuple(training_config.get("input_size", (64, 64))),
            stride=int(training_config.get("stride", 4)),
            sigma=float(training_config.get("sigma", 2.0)),
        )
        model, _ = train_on_samples(
            samples,
            cfg,
            epochs=int(training_config.get("epochs", 2)),
            seed=int(training_config.get("seed", 0)),
            lr=float(training_config.get("lr", 1e-3)),
        )
        return detector_version, model_version_hash(model)

    return retrain
