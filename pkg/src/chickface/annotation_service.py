"""HTTP JSON API for the annotation cycle, plus static hosting for the UI.

Thin layer over AnnotationStore: every error is {code, message}, version
conflicts answer 409 with code "version_conflict" so clients can reload
and retry without losing local edits. The OpenAPI document FastAPI emits
at /openapi.json is the schema shared with the browser tool.
"""

from __future__ import annotations

import threading
from pathlib import Path

from fastapi import FastAPI, Query, Request
from fastapi.responses import FileResponse, JSONResponse, Response
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from .annotation_store import AnnotationStore, default_retrain
from .errors import (
    ChickfaceError,
    IllegalTransitionError,
    RejectedInputError,
    UnknownTaskError,
    VersionConflictError,
)

_STATUS_FOR = {
    UnknownTaskError: 404,
    VersionConflictError: 409,
    IllegalTransitionError: 409,
    RejectedInputError: 422,
}


class SeedEntry(BaseModel):
    frame_id: str
    box: dict
    keypoints: dict


class SeedRequest(BaseModel):
    frames: list[SeedEntry]


class CorrectionRequest(BaseModel):
    version: int
    editor: str = "anonymous"
    revised_box: dict | None = None
    revised_keypoints: dict | None = None
    quality: str = "ok"
    accept: bool = False
    gender_confirmation: str | None = None


class AdvanceRequest(BaseModel):
    keypoints: dict = {}


def create_app(store: AnnotationStore, ui_dir: str | Path | None = None) -> FastAPI:
    app = FastAPI(title="chickface annotation service", version="1.0")
    retrain_busy = threading.Lock()

    @app.exception_handler(ChickfaceError)
    async def _chickface_error(request: Request, exc: ChickfaceError):
        status = 500
        for klass, code in _STATUS_FOR.items():
            if isinstance(exc, klass):
                status = code
                break
        return JSONResponse(status_code=status, content={"code": exc.code, "message": str(exc)})

    @app.get("/api/rounds")
    def list_rounds():
        return {"rounds": store.rounds(), "current": store.current_round()}

    @app.post("/api/rounds/seed")
    def seed(req: SeedRequest):
        return store.seed_round([e.model_dump() for e in req.frames])

    @app.post("/api/rounds/advance")
    def advance(req: AdvanceRequest):
        if not retrain_busy.acquire(blocking=False):
            return JSONResponse(
                status_code=409,
                content={"code": "retraining_busy", "message": "a retraining job is already running"},
            )
        try:
            return store.advance_round(default_retrain(req.keypoints))
        finally:
            retrain_busy.release()

    @app.get("/api/tasks/next")
    def next_task(editor: str = Query(...)):
        task = store.next_task(editor)
        if task is None:
            return JSONResponse(
                status_code=404, content={"code": "no_tasks", "message": "no predicted tasks available"}
            )
        return _with_image_url(task)

    @app.get("/api/tasks/{task_id}")
    def get_task(task_id: str):
        return _with_image_url(store.get_task(task_id))

    @app.post("/api/tasks/{task_id}/correction")
    def correct(task_id: str, req: CorrectionRequest):
        task = store.submit_correction(
            task_id,
            version=req.version,
            editor=req.editor,
            revised_box=req.revised_box,
            revised_keypoints=req.revised_keypoints,
            quality=req.quality,
            accept=req.accept,
            gender_confirmation=req.gender_confirmation,
        )
        return _with_image_url(task)

    @app.get("/api/export")
    def export(rounds: str | None = Query(default=None)):
        round_list = None
        if rounds:
            round_list = [int(r) for r in rounds.split(",") if r.strip() != ""]
        data = store.export_ground_truth(round_list)
        return Response(
            content=data,
            media_type="application/zip",
            headers={"Content-Disposition": "attachment; filename=ground_truth.zip"},
        )

    @app.get("/images/{frame_id}")
    def image(frame_id: str):
        path = store.image_path(frame_id)
        if not path.exists():
            return JSONResponse(
                status_code=404, content={"code": "missing_image", "message": f"no file at {path}"}
            )
        return FileResponse(path)

    def _with_image_url(task: dict) -> dict:
        task = dict(task)
        task["image_url"] = f"/images/{task['frame_id']}"
        return task

    if ui_dir is not None and Path(ui_dir).is_dir():
        app.mount("/", StaticFiles(directory=str(ui_dir), html=True), name="ui")
    return app
