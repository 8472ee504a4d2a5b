"""HTTP session API for interactive disambiguation.

POST /sessions                    create a session around a scene
GET  /sessions/{id}               current session view
POST /sessions/{id}/command       triage a goal (starts a dialogue)
POST /sessions/{id}/answer        answer the pending clarifying question
DELETE /sessions/{id}             drop the session

All bodies are JSON; errors come back as {"code", "message"}. A session's
dialogue is mutated by one request at a time; a second concurrent mutation
gets 409 (or waits, when the config sets busy_policy to "queue").
"""

from __future__ import annotations

import logging
import threading
import time
import uuid
from dataclasses import dataclass, field

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .config import EngineConfig, build_engine
from .prompts import GoalCommand, SceneDescription, parse_scene, render_scene
from .triage import AMBIGUOUS, TriageEngine, TriageResult

logger = logging.getLogger(__name__)

AWAITING_COMMAND = "awaiting_command"
AWAITING_ANSWER = "awaiting_answer"
TERMINAL = "terminal"

DEFAULT_IDLE_TTL_S = 30 * 60


class ApiError(Exception):
    def __init__(self, status: int, code: str, message: str):
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message


@dataclass
class Session:
    session_id: str
    scene: SceneDescription
    created_at: float
    last_touched: float
    goal: GoalCommand | None = None
    rounds_used: int = 0
    history: list[tuple[str, str]] = field(default_factory=list)
    pending_question: str | None = None
    last_result: TriageResult | None = None
    terminal: bool = False
    lock: threading.Lock = field(default_factory=threading.Lock)

    def input_state(self) -> str:
        if self.pending_question is not None:
            return AWAITING_ANSWER
        if self.terminal:
            return TERMINAL
        return AWAITING_COMMAND


def _result_dict(result: TriageResult | None) -> dict | None:
    return result.to_dict() if result else None


def _view(session: Session, epsilon: float) -> dict:
    return {
        "session_id": session.session_id,
        "scene_summary": render_scene(session.scene),
        "robot_type": session.scene.robot_type,
        "input_state": session.input_state(),
        "goal": session.goal.text if session.goal else None,
        "rounds_used": session.rounds_used,
        "history": [{"question": q, "answer": a} for q, a in session.history],
        "pending_question": session.pending_question,
        "last_result": _result_dict(session.last_result),
        "epsilon": epsilon,
    }


class SessionStore:
    def __init__(self, idle_ttl_s: float = DEFAULT_IDLE_TTL_S):
        self._sessions: dict[str, Session] = {}
        self._lock = threading.Lock()
        self._idle_ttl_s = idle_ttl_s

    def create(self, scene: SceneDescription) -> Session:
        session = Session(
            session_id=uuid.uuid4().hex,
            scene=scene,
            created_at=time.monotonic(),
            last_touched=time.monotonic(),
        )
        with self._lock:
            self._sessions[session.session_id] = session
        return session

    def get(self, session_id: str) -> Session:
        self.evict_idle()
        with self._lock:
            session = self._sessions.get(session_id)
        if session is None:
            raise ApiError(404, "unknown_session", f"no session {session_id}")
        session.last_touched = time.monotonic()
        return session

    def delete(self, session_id: str) -> None:
        with self._lock:
            if session_id not in self._sessions:
                raise ApiError(404, "unknown_session", f"no session {session_id}")
            del self._sessions[session_id]

    def evict_idle(self) -> None:
        now = time.monotonic()
        with self._lock:
            expired = [
                sid
                for sid, s in self._sessions.items()
                if now - s.last_touched > self._idle_ttl_s
            ]
            for sid in expired:
                logger.info("evicting idle session %s", sid)
                del self._sessions[sid]


def create_app(
    engine: TriageEngine,
    idle_ttl_s: float = DEFAULT_IDLE_TTL_S,
    busy_policy: str = "reject",
) -> FastAPI:
    """Wire the session API around a triage engine."""
    app = FastAPI(title="cmdtriage session API")
    store = SessionStore(idle_ttl_s=idle_ttl_s)
    app.state.store = store

    @app.exception_handler(ApiError)
    async def _api_error(_request: Request, exc: ApiError) -> JSONResponse:
        return JSONResponse(
            status_code=exc.status, content={"code": exc.code, "message": exc.message}
        )

    def _acquire(session: Session) -> None:
        if busy_policy == "queue":
            session.lock.acquire()
            return
        if not session.lock.acquire(blocking=False):
            raise ApiError(409, "busy", "another request is mutating this session")

    def _classify_round(session: Session) -> dict:
        result = engine.classify(session.goal, session.scene)
        session.last_result = result
        if result.label == AMBIGUOUS and session.rounds_used < engine.config.max_question_rounds:
            session.pending_question = result.question
        else:
            session.pending_question = None
            session.terminal = True
        return _view(session, engine.config.epsilon)

    @app.post("/sessions", status_code=201)
    def create_session(body: dict) -> dict:
        scene_raw = body.get("scene")
        if scene_raw is None:
            raise ApiError(400, "missing_scene", "body needs a scene object")
        try:
            scene = parse_scene(scene_raw)
        except Exception as exc:
            raise ApiError(400, "bad_scene", str(exc)) from None
        session = store.create(scene)
        return {"session_id": session.session_id}

    @app.get("/sessions/{session_id}")
    def get_session(session_id: str) -> dict:
        session = store.get(session_id)
        return _view(session, engine.config.epsilon)

    @app.post("/sessions/{session_id}/command")
    def post_command(session_id: str, body: dict) -> dict:
        session = store.get(session_id)
        goal_text = (body.get("goal") or "").strip()
        if not goal_text:
            raise ApiError(400, "missing_goal", "body needs a non-empty goal")
        _acquire(session)
        try:
            if session.pending_question is not None:
                raise ApiError(
                    409, "question_pending", "answer the pending question first"
                )
            session.goal = GoalCommand(text=goal_text)
            session.rounds_used = 0
            session.history = []
            session.terminal = False
            return _classify_round(session)
        finally:
            session.lock.release()

    @app.post("/sessions/{session_id}/answer")
    def post_answer(session_id: str, body: dict) -> dict:
        session = store.get(session_id)
        answer = (body.get("answer") or "").strip()
        if not answer:
            raise ApiError(400, "missing_answer", "body needs a non-empty answer")
        _acquire(session)
        try:
            if session.pending_question is None:
                raise ApiError(409, "no_pending_question", "no question awaits an answer")
            question = session.pending_question
            session.pending_question = None
            session.goal.augmented_facts.append(answer)
            session.history.append((question, answer))
            session.rounds_used += 1
            return _classify_round(session)
        finally:
            session.lock.release()

    @app.delete("/sessions/{session_id}", status_code=204)
    def delete_session(session_id: str) -> None:
        store.delete(session_id)
        return None

    return app


def create_app_from_config(config: EngineConfig, **kwargs) -> FastAPI:
    return create_app(build_engine(config), **kwargs)


def serve(config: EngineConfig, host: str = "127.0.0.1", port: int = 8000) -> None:
    """Run the session API until interrupted (uvicorn handles signals)."""
    import uvicorn

    busy_policy = config.raw.get("service", {}).get("busy_policy", "reject")
    idle_ttl_s = config.raw.get("service", {}).get("idle_ttl_s", DEFAULT_IDLE_TTL_S)
    app = create_app_from_config(config, idle_ttl_s=idle_ttl_s, busy_policy=busy_policy)
    uvicorn.run(app, host=host, port=port)
