"""HTTP/1.1 JSON API over the study store.

Session-facing responses never contain label history, tallies or any other
assessor's data; the only session-dependent value they may carry is the
session's own cursor. The export endpoint is the analysis-side egress and
is the one place labels leave the service.
"""

from __future__ import annotations

import mimetypes
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.responses import FileResponse, JSONResponse, PlainTextResponse

from .errors import (
    AlreadyLabelled,
    GmaBenchError,
    InvalidLabel,
    OutOfOrder,
    PoolTooSmall,
    UnknownSession,
    UnknownStudy,
)
from .study import StudyStore, plan_subsets

_STATUS = {
    UnknownStudy: 404,
    UnknownSession: 404,
    OutOfOrder: 409,
    AlreadyLabelled: 409,
    InvalidLabel: 422,
    PoolTooSmall: 422,
}


def create_app(store: StudyStore, media_root: str | Path | None = None) -> FastAPI:
    app = FastAPI(title="gmabench study service")
    root = Path(media_root) if media_root is not None else None

    @app.exception_handler(GmaBenchError)
    async def _typed_error(request: Request, exc: GmaBenchError):
        status = _STATUS.get(type(exc), 400)
        return JSONResponse(
            status_code=status,
            content={"error": type(exc).__name__, "detail": str(exc)},
        )

    @app.post("/studies")
    async def create_study(body: dict):
        plan = plan_subsets(
            body["pool"],
            count=int(body.get("count", 3)),
            size=int(body.get("size", 280)),
            seed=int(body.get("seed", 0)),
            study_id=body.get("study_id"),
            condition=body.get("condition", "face_blurred"),
        )
        store.create_study(plan)
        return {
            "study_id": plan.study_id,
            "condition": plan.condition,
            "seed": plan.seed,
            "subset_count": len(plan.subsets),
            "subset_size": len(plan.subsets[0]) if plan.subsets else 0,
            "total_items": plan.total_items,
        }

    @app.post("/studies/{study_id}/sessions")
    async def create_session(study_id: str, body: dict):
        assessor = str(body["assessor"])
        session = store.create_session(study_id, assessor)
        total = store.get_study(study_id).total_items
        return {
            "session_id": session.session_id,
            "study_id": session.study_id,
            "assessor": session.assessor,
            "cursor": session.cursor,
            "total": total,
            "state": session.state,
        }

    @app.get("/sessions/{session_id}/next")
    async def next_item(session_id: str):
        item = store.next_item(session_id)
        if item is None:
            total = store.studies[store.get_session(session_id).study_id].total_items
            return {"completed": True, "total": total}
        return {
            "completed": False,
            "snippet_id": item.snippet_id,
            "media": f"/media/{item.snippet_id}",
            "position": item.position,
            "total": item.total,
            "subset": item.subset,
        }

    @app.post("/sessions/{session_id}/labels")
    async def submit_label(session_id: str, body: dict):
        if "snippet_id" not in body or "label" not in body:
            raise InvalidLabel("label submissions need snippet_id and label")
        store.submit_label(
            session_id,
            str(body["snippet_id"]),
            str(body["label"]),
            body.get("reason"),
        )
        session = store.get_session(session_id)
        return {"ok": True, "cursor": session.cursor, "state": session.state}

    @app.get("/studies/{study_id}/export.csv")
    async def export_csv(study_id: str):
        text, complete = store.export_labels(study_id)
        return PlainTextResponse(
            text,
            media_type="text/csv",
            headers={"X-Study-Complete": "true" if complete else "false"},
        )

    @app.get("/media/{snippet_id}")
    async def media(snippet_id: str):
        for plan in store.studies.values():
            path = plan.media.get(snippet_id)
            if path:
                full = Path(path)
                if root is not None and not full.is_absolute():
                    full = root / full
                if full.exists():
                    ctype = mimetypes.guess_type(full.name)[0] or "application/octet-stream"
                    return FileResponse(full, media_type=ctype)
        return JSONResponse(
            status_code=404, content={"error": "UnknownMedia", "detail": snippet_id}
        )

    return app


def serve(
    journal_path: str | Path,
    media_root: str | Path | None = None,
    host: str = "127.0.0.1",
    port: int = 8000,
) -> None:
    """Run the study service under uvicorn (blocking)."""
    import uvicorn

    store = StudyStore(journal_path)
    uvicorn.run(create_app(store, media_root), host=host, port=port, log_level="warning")
