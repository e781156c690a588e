"""Read-only HTTP facade over the query module.

All endpoints share one immutable StoreHandle, so concurrent requests
need no locking and restarting the service never changes an answer.
Patient lists are paginated with a hard cap of 10,000 ids per page.
"""

from __future__ import annotations

import time
from typing import Optional, Union

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from . import query as q
from .model import ModelError, Relation
from .store import StoreError, StoreHandle

PAGE_CAP = 10_000


class WithinBody(BaseModel):
    lo: int
    hi: int


class CoexistBody(BaseModel):
    events: list[Union[int, str]] = Field(min_length=2)
    count_only: bool = False
    limit: int = 1000
    offset: int = 0


class BeforeBody(BaseModel):
    a: Union[int, str]
    b: Union[int, str]
    within: Optional[WithinBody] = None
    count_only: bool = False
    limit: int = 1000
    offset: int = 0


class ExploreBody(BaseModel):
    event: Union[int, str]
    direction: str
    within: Optional[WithinBody] = None
    top_k: int = 15


def _error(code: str, message: str, status: int) -> JSONResponse:
    return JSONResponse(status_code=status, content={"code": code, "message": message})


def _entry_dict(e) -> dict:
    return {
        "event_id": e.event_id,
        "key": e.key.display(),
        "domain": e.key.domain,
        "code": e.key.code,
        "code_type": e.key.code_type,
        "status": e.key.status,
        "patient_count": e.patient_count,
        "label": e.label,
    }


def _day_range(body: Optional[WithinBody]) -> Optional[q.DayRange]:
    return q.DayRange(body.lo, body.hi) if body is not None else None


def create_app(data_dir: str, cors_origin: Optional[str] = None,
               ui_dir: Optional[str] = None) -> FastAPI:
    handle = StoreHandle(data_dir)
    app = FastAPI(title="telii", docs_url=None, redoc_url=None)

    if cors_origin:
        from fastapi.middleware.cors import CORSMiddleware

        app.add_middleware(CORSMiddleware, allow_origins=[cors_origin],
                           allow_methods=["*"], allow_headers=["*"])

    @app.exception_handler(q.EventNotFound)
    async def _not_found(_: Request, exc: q.EventNotFound):
        return _error("NOT_FOUND", str(exc), 404)

    @app.exception_handler(q.InvalidQuery)
    async def _invalid(_: Request, exc: q.InvalidQuery):
        return _error("INVALID_ARGUMENT", str(exc), 400)

    @app.exception_handler(q.CapExceeded)
    async def _capped(_: Request, exc: q.CapExceeded):
        return _error("CAP_EXCEEDED", str(exc), 400)

    @app.exception_handler(ModelError)
    async def _model_err(_: Request, exc: ModelError):
        return _error("INVALID_ARGUMENT", str(exc), 400)

    @app.exception_handler(StoreError)
    async def _store_err(_: Request, exc: StoreError):
        return _error("INTERNAL", str(exc), 500)

    @app.get("/healthz")
    def healthz():
        return {"status": "ok",
                "patients": handle.manifest["counts"]["patients"],
                "events": handle.manifest["counts"]["events"]}

    @app.get("/stats")
    def stats():
        return {"counts": handle.manifest["counts"],
                "build": handle.manifest["build"]}

    @app.get("/events")
    def search_events(request: Request, limit: int = 20):
        # 'q' clashes with the module alias, read it from the raw params
        text = request.query_params.get("q", "")
        hits = q._search_catalog(handle, text) if text else \
            sorted(handle.catalog, key=lambda e: (-e.patient_count, e.event_id))
        return {"events": [_entry_dict(e) for e in hits[:max(0, limit)]]}

    @app.get("/events/{event_id}")
    def get_event(event_id: int):
        entry = handle.by_id.get(event_id)
        if entry is None:
            raise q.EventNotFound(f"no event with id {event_id}")
        return _entry_dict(entry)

    def _page(patients, body) -> dict:
        count = len(patients)
        out = {"count": count}
        if not body.count_only:
            limit = min(max(0, body.limit), PAGE_CAP)
            offset = max(0, body.offset)
            out["patients"] = handle.patient_ids(patients[offset:offset + limit])
            out["offset"] = offset
            out["limit"] = limit
        return out

    @app.post("/query/coexist")
    def coexist(body: CoexistBody):
        t0 = time.perf_counter()
        refs = body.events
        result = q.coexist_two(handle, *refs) if len(refs) == 2 \
            else q.coexist_group(handle, refs)
        payload = _page(result, body)
        payload["elapsed_ms"] = round((time.perf_counter() - t0) * 1000.0, 3)
        return payload

    @app.post("/query/before")
    def before(body: BeforeBody):
        t0 = time.perf_counter()
        result = q.before(handle, body.a, body.b, _day_range(body.within))
        payload = _page(result, body)
        payload["elapsed_ms"] = round((time.perf_counter() - t0) * 1000.0, 3)
        return payload

    @app.post("/query/explore")
    def explore(body: ExploreBody):
        t0 = time.perf_counter()
        rows = q.explore(handle, body.event, Relation.parse(body.direction),
                         _day_range(body.within), body.top_k)
        return {
            "rows": [{
                "event_id": r.related_event,
                "label": handle.by_id[r.related_event].label,
                "patient_count": r.patient_count,
                "pct": round(r.pct * 100.0, 2),
            } for r in rows],
            "elapsed_ms": round((time.perf_counter() - t0) * 1000.0, 3),
        }

    if ui_dir:
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=ui_dir, html=True), name="ui")

    return app
