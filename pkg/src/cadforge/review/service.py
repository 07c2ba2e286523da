"""HTTP API for the review workflow.

All responses are JSON except ``GET /images/{name}`` (PNG) and
``GET /export`` (JSONL).  Annotators are identified by the id returned
at registration; there is no further auth, this is a deployment-local
tool.  When a built UI bundle is supplied it is served at the root.
"""

from __future__ import annotations

import json
from pathlib import Path

from fastapi import FastAPI, HTTPException, Query
from fastapi.responses import FileResponse, PlainTextResponse, Response
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from cadforge.review.db import (
    DuplicateDecision,
    MissingReason,
    ReviewDb,
    TaskAlreadyResolved,
    UnknownAnnotator,
    UnknownTask,
)


class RegisterBody(BaseModel):
    name: str


class DecisionBody(BaseModel):
    annotator: str
    verdict: str
    reason: str | None = None


def _image_urls(task: dict) -> dict:
    task = dict(task)
    task["image_urls"] = [f"/images/{Path(rel).name}" for rel in task.pop("images")]
    return task


def create_app(db_path: str, images_root: str = ".", static_dir: str | None = None) -> FastAPI:
    app = FastAPI(title="cadforge review service")
    db = ReviewDb(db_path)
    images_dir = Path(images_root) / "images"

    @app.post("/annotators")
    def register(body: RegisterBody):
        if not body.name.strip():
            raise HTTPException(status_code=422, detail="annotator name must be non-empty")
        return {"annotator_id": db.register_annotator(body.name.strip())}

    @app.get("/tasks/next")
    def next_task(annotator: str = Query(...)):
        try:
            task = db.next_task(annotator)
        except UnknownAnnotator:
            raise HTTPException(status_code=404, detail=f"unknown annotator {annotator!r}")
        if task is None:
            return Response(status_code=204)
        return _image_urls(task)

    @app.post("/tasks/{pair_id}/decision")
    def decide(pair_id: str, body: DecisionBody):
        try:
            task = db.record_decision(body.annotator, pair_id, body.verdict, body.reason)
        except UnknownAnnotator:
            raise HTTPException(status_code=404, detail=f"unknown annotator {body.annotator!r}")
        except UnknownTask:
            raise HTTPException(status_code=404, detail=f"unknown pair {pair_id!r}")
        except DuplicateDecision as exc:
            raise HTTPException(status_code=409, detail=str(exc))
        except TaskAlreadyResolved as exc:
            raise HTTPException(status_code=409, detail=f"task already resolved: {exc}")
        except MissingReason as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        return _image_urls(task)

    @app.get("/pairs/{pair_id}")
    def get_pair(pair_id: str):
        try:
            return _image_urls(db.task_view(pair_id))
        except UnknownTask:
            raise HTTPException(status_code=404, detail=f"unknown pair {pair_id!r}")

    @app.get("/images/{name}")
    def get_image(name: str):
        if "/" in name or ".." in name or not name.endswith(".png"):
            raise HTTPException(status_code=404, detail="not found")
        path = images_dir / name
        if not path.is_file():
            raise HTTPException(status_code=404, detail="not found")
        return FileResponse(path, media_type="image/png")

    @app.get("/stats/agreement")
    def agreement():
        return db.agreement()

    @app.get("/export")
    def export():
        lines = "".join(
            json.dumps(record, sort_keys=True, separators=(",", ":")) + "\n"
            for record in db.export_curated()
        )
        return PlainTextResponse(lines, media_type="application/jsonl")

    @app.get("/qc/sample")
    def qc_sample(fraction: float = Query(0.3), seed: int = Query(0)):
        try:
            return [_image_urls(t) for t in db.qc_sample(fraction=fraction, seed=seed)]
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=str(exc))

    if static_dir and Path(static_dir).is_dir():
        app.mount("/", StaticFiles(directory=static_dir, html=True), name="ui")

    return app
