"""HTTP API over the gateway: sessions, utterances, SSE event stream, catalog."""

from __future__ import annotations

import json

from fastapi import FastAPI, Query, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse, StreamingResponse
from pydantic import BaseModel

from .errors import (
    ActorNotAllowed,
    BackendFailure,
    BackendUnavailable,
    CarebotError,
    UnknownSession,
)
from .gateway import MODE_SCRIPTED_KEEPER, GatewayService
from .world import load_world_config


class CreateSessionRequest(BaseModel):
    mode: str = MODE_SCRIPTED_KEEPER
    backend: str = "scripted"
    world: str | None = None  # optional path override, resolved server-side


class UtteranceRequest(BaseModel):
    actor: str
    text: str


def create_app(service: GatewayService, ui_dir: str | None = None) -> FastAPI:
    app = FastAPI(title="carebot gateway", version="0.1.0")
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )

    def status_for(exc: CarebotError) -> int:
        if isinstance(exc, UnknownSession):
            return 404
        if isinstance(exc, ActorNotAllowed):
            return 403
        if isinstance(exc, (BackendFailure, BackendUnavailable)):
            return 502
        return 400

    @app.exception_handler(CarebotError)
    async def handle_domain_error(request: Request, exc: CarebotError):
        return JSONResponse(
            status_code=status_for(exc),
            content={"error": type(exc).__name__, "detail": str(exc)},
        )

    @app.exception_handler(ValueError)
    async def handle_value_error(request: Request, exc: ValueError):
        return JSONResponse(status_code=400, content={"error": "ValueError", "detail": str(exc)})

    @app.post("/sessions", status_code=201)
    def create_session(body: CreateSessionRequest):
        world = load_world_config(body.world) if body.world else None
        session = service.create_session(
            mode=body.mode, backend=body.backend, world_config=world
        )
        return {"session_id": session.id}

    @app.get("/sessions/{session_id}")
    def session_view(session_id: str):
        return service.get_session_view(session_id)

    @app.delete("/sessions/{session_id}", status_code=204)
    def close_session(session_id: str):
        service.close_session(session_id)

    @app.post("/sessions/{session_id}/utterances")
    def post_utterance(session_id: str, body: UtteranceRequest):
        events = service.post_utterance(session_id, body.actor, body.text)
        return {"events": [e.to_json_obj() for e in events]}

    @app.get("/sessions/{session_id}/events")
    def stream_events(session_id: str, from_seq: int = Query(1, alias="from")):
        service.get_session_view(session_id)  # 404 before the stream starts

        def sse() -> "iter[str]":
            for event in service.stream_events(session_id, from_seq):
                data = json.dumps(event.to_json_obj(), ensure_ascii=False)
                yield f"id: {event.seq}\ndata: {data}\n\n"
            yield "event: end\ndata: {}\n\n"

        return StreamingResponse(sse(), media_type="text/event-stream")

    @app.get("/catalog")
    def catalog():
        return service.get_catalog_snapshot()

    if ui_dir:
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=ui_dir, html=True), name="ui")

    return app
