"""HTTP service: document CRUD, retrieval, streaming chat, agent config, health.

Chat streams server-sent events whose types mirror the pipeline TraceEvents,
closed by exactly one `done` (or `error`) event. Every non-2xx response body
is a single {code, message} object.
"""

from __future__ import annotations

import json
import logging
import threading
import time
import uuid
from dataclasses import dataclass, field, replace
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.concurrency import run_in_threadpool
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse, Response, StreamingResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel
from starlette.exceptions import HTTPException as StarletteHTTPException

from .addrep import PipelineMode, stream_events
from .agents import AgentConfig, AgentRole, BackendError, ChatMessage
from .config import AppConfig, Engine
from .embed import EmbeddingError
from .ingest import DocumentFormat, IngestError, make_document
from .kb import DocumentNotFound

logger = logging.getLogger(__name__)

MAX_HISTORY = 200


class ApiException(Exception):
    """Carried error contract: HTTP status plus {code, message} body."""

    def __init__(self, status: int, code: str, message: str):
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message


_STATUS_CODES = {
    400: "bad_request",
    404: "not_found",
    409: "conflict",
    502: "backend_unavailable",
    503: "backend_unavailable",
}


@dataclass
class SessionState:
    session_id: str
    history: list[ChatMessage] = field(default_factory=list)
    docs_enhanced: bool = True
    created_at: float = field(default_factory=time.time)

    def extend(self, *messages: ChatMessage) -> None:
        self.history.extend(messages)
        if len(self.history) > MAX_HISTORY:
            del self.history[: len(self.history) - MAX_HISTORY]


class SessionStore:
    """In-memory sessions; at most one running pipeline per session."""

    def __init__(self) -> None:
        self._sessions: dict[str, SessionState] = {}
        self._busy: set[str] = set()
        self._lock = threading.Lock()

    def get_or_create(self, session_id: str) -> SessionState:
        with self._lock:
            if session_id not in self._sessions:
                self._sessions[session_id] = SessionState(session_id=session_id)
            return self._sessions[session_id]

    def try_begin(self, session_id: str) -> bool:
        with self._lock:
            if session_id in self._busy:
                return False
            self._busy.add(session_id)
            return True

    def end(self, session_id: str) -> None:
        with self._lock:
            self._busy.discard(session_id)


class DocumentBody(BaseModel):
    title: str
    format: str = "txt"
    text: str


class PatchDocumentBody(BaseModel):
    enabled: bool


class RetrieveBody(BaseModel):
    query: str
    topk: int = 5


class ChatBody(BaseModel):
    session_id: str = ""
    message: str
    docs_enhanced: bool = True
    mode: str | None = None


class AgentConfigBody(BaseModel):
    model_name: str | None = None
    prompt_template: str | None = None
    temperature: float | None = None
    max_output_tokens: int | None = None
    timeout: float | None = None


def _sse(event: str, data: dict) -> str:
    return f"event: {event}\ndata: {json.dumps(data, ensure_ascii=False)}\n\n"


def create_app(engine: Engine) -> FastAPI:
    app = FastAPI(title="ktalk", version="0.1.0")
    sessions = SessionStore()
    app.state.engine = engine
    app.state.sessions = sessions

    # ---------------------------------------------------------------- errors

    @app.exception_handler(ApiException)
    async def _api_error(_req: Request, exc: ApiException):
        return JSONResponse(
            status_code=exc.status, content={"code": exc.code, "message": exc.message}
        )

    @app.exception_handler(RequestValidationError)
    async def _validation_error(_req: Request, exc: RequestValidationError):
        return JSONResponse(
            status_code=400, content={"code": "bad_request", "message": str(exc)}
        )

    @app.exception_handler(StarletteHTTPException)
    async def _http_error(_req: Request, exc: StarletteHTTPException):
        code = _STATUS_CODES.get(exc.status_code, "internal")
        return JSONResponse(
            status_code=exc.status_code,
            content={"code": code, "message": str(exc.detail)},
        )

    @app.exception_handler(Exception)
    async def _unhandled(_req: Request, exc: Exception):
        logger.exception("unhandled error")
        return JSONResponse(
            status_code=500, content={"code": "internal", "message": str(exc)}
        )

    # ------------------------------------------------------------- documents

    @app.post("/api/documents", status_code=201)
    async def create_document(request: Request):
        content_type = request.headers.get("content-type", "")
        if content_type.startswith("multipart/form-data"):
            form = await request.form()
            upload = form.get("file")
            if upload is None:
                raise ApiException(400, "bad_request", "multipart body needs a 'file' part")
            data = await upload.read()
            filename = upload.filename or "upload.txt"
            suffix = Path(filename).suffix.lower()
            fmt = {".md": "markdown", ".markdown": "markdown"}.get(suffix, "txt")
            try:
                text = data.decode("utf-8")
            except UnicodeDecodeError as exc:
                raise ApiException(400, "bad_request", f"file is not UTF-8 text: {exc}")
            title = str(form.get("title") or Path(filename).stem)
            source_id = filename
        else:
            try:
                body = DocumentBody.model_validate(await request.json())
            except ValueError as exc:
                raise ApiException(400, "bad_request", f"invalid document body: {exc}")
            try:
                DocumentFormat(body.format)
            except ValueError:
                raise ApiException(400, "bad_request", f"unknown format {body.format!r}")
            text, title, fmt = body.text, body.title, body.format
            source_id = f"api:{uuid.uuid4().hex[:12]}"
        raw = make_document(source_id=source_id, title=title, fmt=fmt, body=text)
        try:
            record = await run_in_threadpool(engine.ingest, raw)
            await run_in_threadpool(engine.save_kb)
        except (BackendError, EmbeddingError) as exc:
            raise ApiException(503, "backend_unavailable", str(exc))
        except IngestError as exc:
            raise ApiException(400, "bad_request", str(exc))
        return record.to_json()

    @app.get("/api/documents")
    def list_documents():
        return [rec.to_json() for rec in engine.kb.list_documents()]

    @app.patch("/api/documents/{doc_id}")
    def patch_document(doc_id: int, body: PatchDocumentBody):
        try:
            record = engine.kb.set_document_enabled(doc_id, body.enabled)
        except DocumentNotFound as exc:
            raise ApiException(404, "not_found", str(exc))
        engine.save_kb()
        return record.to_json()

    @app.delete("/api/documents/{doc_id}", status_code=204)
    def delete_document(doc_id: int):
        try:
            engine.kb.delete_document(doc_id)
        except DocumentNotFound as exc:
            raise ApiException(404, "not_found", str(exc))
        engine.save_kb()
        return Response(status_code=204)

    # ------------------------------------------------------------- retrieval

    @app.post("/api/retrieve")
    def retrieve(body: RetrieveBody):
        if body.topk < 1:
            raise ApiException(400, "bad_request", "topk must be >= 1")
        if not body.query.strip():
            raise ApiException(400, "bad_request", "query must be non-empty")
        try:
            hits = engine.kb.retrieve(body.query, body.topk)
        except BackendError as exc:
            raise ApiException(503, "backend_unavailable", str(exc))
        return {"hits": [h.to_json() for h in hits]}

    # ------------------------------------------------------------------ chat

    @app.post("/api/chat")
    def chat(body: ChatBody):
        if not body.message.strip():
            raise ApiException(400, "bad_request", "message must be non-empty")
        session_id = body.session_id or uuid.uuid4().hex
        session = sessions.get_or_create(session_id)
        session.docs_enhanced = body.docs_enhanced
        if body.mode is not None:
            try:
                requested = PipelineMode(body.mode)
            except ValueError:
                raise ApiException(400, "bad_request", f"unknown mode {body.mode!r}")
        else:
            requested = PipelineMode.ADDREP
        mode = requested if body.docs_enhanced else PipelineMode.BASELINE
        if not sessions.try_begin(session_id):
            raise ApiException(409, "conflict", f"session {session_id} already has a chat running")

        cfg = replace(engine.config.addrep, mode=mode)
        history_snapshot = list(session.history)

        def event_stream():
            failed = False
            try:
                gen = stream_events(
                    body.message, history_snapshot, engine.kb, engine.agents, cfg
                )
                result = None
                while True:
                    try:
                        event = next(gen)
                    except StopIteration as stop:
                        result = stop.value
                        break
                    if event.type == "error":
                        failed = True
                    yield _sse(event.type, event.data)
                if result is not None and not failed:
                    session.extend(
                        ChatMessage("user", body.message),
                        ChatMessage("assistant", result.answer),
                    )
                    yield _sse("done", {**result.summary(), "session_id": session_id})
            except Exception as exc:  # failure inside an open stream
                logger.exception("chat stream failed")
                yield _sse("error", {"message": str(exc)})
            finally:
                sessions.end(session_id)

        return StreamingResponse(event_stream(), media_type="text/event-stream")

    # ---------------------------------------------------------------- agents

    def _role_or_404(role: str) -> AgentRole:
        try:
            return AgentRole(role)
        except ValueError:
            raise ApiException(404, "not_found", f"unknown agent role {role!r}")

    def _agent_json(cfg: AgentConfig) -> dict:
        return {
            "role": cfg.role.value,
            "model_name": cfg.model_name,
            "prompt_template": cfg.prompt_template,
            "temperature": cfg.temperature,
            "max_output_tokens": cfg.max_output_tokens,
            "timeout": cfg.timeout,
        }

    @app.get("/api/agents/{role}")
    def get_agent(role: str):
        return _agent_json(engine.registry.get(_role_or_404(role)))

    @app.put("/api/agents/{role}")
    def put_agent(role: str, body: AgentConfigBody):
        agent_role = _role_or_404(role)
        current = engine.registry.get(agent_role)
        updates = {k: v for k, v in body.model_dump().items() if v is not None}
        try:
            updated = replace(current, **updates)
        except ValueError as exc:
            raise ApiException(400, "bad_request", str(exc))
        engine.registry.set(updated)
        return _agent_json(updated)

    # ---------------------------------------------------------------- health

    @app.get("/api/health")
    def health():
        return {
            "backend_reachable": engine.backend.health(),
            "embedding_dim": engine.kb.embedding_dim,
            "kb_counts": engine.kb.counts(),
        }

    # ------------------------------------------------------------- static UI

    frontend = engine.config.frontend_dir
    if frontend and Path(frontend).is_dir():
        app.mount("/", StaticFiles(directory=frontend, html=True), name="ui")

    return app


def serve(config: AppConfig) -> None:
    import uvicorn

    engine = Engine(config)
    app = create_app(engine)
    uvicorn.run(app, host=config.host, port=config.port, log_level="info")
