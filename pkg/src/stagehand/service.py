"""HTTP/WS surface for the director console and external sensors.

Connection handlers are stateless: every mutation travels through the
engine's inbox queue and is applied by the tick loop, so no torn state can
reach trigger evaluation. Provider round-trips (framing extraction, free-text
command translation, note summarization) run on the handler thread, off the
tick loop.
"""

from __future__ import annotations

import json
import threading
import time
from concurrent.futures import TimeoutError as FutureTimeout
from pathlib import Path

import anyio
from fastapi import FastAPI, WebSocket, WebSocketDisconnect
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles

from . import heatgrid as hg
from .config import EngineConfig
from .director import CommandError, parse_command
from .dramaturgy import (
    ClarificationQuestion,
    ExtractionError,
    apply_clarification,
    interpret_framing,
)
from .engine import Engine, ReplayConfigMismatch
from .ingest import MessageDecodeError
from .memory import Annotation
from .providers import (
    LanguageModelProvider,
    MockProvider,
    ProviderTransportError,
    RemoteProvider,
    ScriptedProvider,
)
from .runner import replay_session
from .sessionlog import ReplayAlignmentError, SessionLogReader, diff, iter_session_dirs

FUTURE_TIMEOUT_S = 5.0


def provider_from_spec(config: EngineConfig) -> LanguageModelProvider | None:
    spec = config.provider
    if spec.kind == "remote":
        return RemoteProvider(
            base_url=spec.base_url, model=spec.model, api_key_env=spec.api_key_env
        )
    if spec.kind == "mock":
        return MockProvider.from_file(spec.table_path)
    if spec.kind == "scripted":
        return ScriptedProvider.from_file(spec.replies_path)
    return None


def _wait(future):
    try:
        return future.result(timeout=FUTURE_TIMEOUT_S)
    except FutureTimeout:
        raise RuntimeError("engine loop did not answer in time; is it ticking?")


def create_app(engine: Engine, console_dir: Path | None = None) -> FastAPI:
    app = FastAPI(title="stagehand", docs_url=None, redoc_url=None)
    provider = engine.provider

    @app.get("/api/health")
    def health():
        return {"status": "ok", "session": engine.session_id}

    @app.get("/api/state")
    def state():
        return {
            "snapshot": engine.snapshot_wire(),
            "zones": engine.zones_wire(),
            "actuators": engine.actuators_wire(),
            "rules": engine.rules_wire(),
            "traces": engine.trace_wires(50),
        }

    @app.get("/api/heatgrid")
    def heatgrid_state():
        return hg.to_wire(engine.grid, engine.hotspots)

    @app.get("/api/score")
    def score():
        return engine.score_wire()

    @app.post("/api/dramaturgy")
    def dramaturgy(body: dict):
        text = (body or {}).get("text", "")
        if not text.strip():
            return JSONResponse({"error": "framing text must be non-empty"}, status_code=422)
        if provider is None:
            return JSONResponse({"error": "no provider configured"}, status_code=409)
        try:
            profile, questions = interpret_framing(text, provider, now_ms=engine.now)
        except ProviderTransportError as exc:
            return JSONResponse({"error": str(exc), "retriable": True}, status_code=502)
        except ExtractionError as exc:
            return JSONResponse(
                {"error": str(exc), "raw_reply": exc.raw_reply}, status_code=502
            )
        _wait(engine.submit_profile(profile, questions))
        return {
            "profile": engine.score_wire()["profile"],
            "questions": [
                {"id": q.id, "text": q.text, "field": q.field,
                 "options": list(q.options) if q.options else None}
                for q in questions
            ],
        }

    @app.post("/api/dramaturgy/clarify")
    def clarify(body: dict):
        if engine.profile is None:
            return JSONResponse({"error": "no profile to clarify"}, status_code=409)
        if provider is None:
            return JSONResponse({"error": "no provider configured"}, status_code=409)
        q = body.get("question") or {}
        question = ClarificationQuestion(
            id=q.get("id", q.get("field", "")),
            text=q.get("text", ""),
            field=q.get("field", q.get("id", "")),
            options=tuple(q["options"]) if q.get("options") else None,
        )
        answer = body.get("answer", "")
        try:
            updated = apply_clarification(engine.profile, question, answer, provider)
        except ValueError as exc:
            return JSONResponse({"error": str(exc)}, status_code=422)
        except ProviderTransportError as exc:
            return JSONResponse({"error": str(exc), "retriable": True}, status_code=502)
        _wait(engine.submit_profile(updated, reason="clarification"))
        return {"profile": engine.score_wire()["profile"]}

    @app.post("/api/director/commands")
    def director_command(body: dict):
        text = (body or {}).get("text", "")
        try:
            parsed = parse_command(text, provider, engine.command_context())
        except CommandError as exc:
            return JSONResponse({"error": str(exc)}, status_code=422)
        result = _wait(engine.submit_parsed_command(parsed, text))
        return result

    @app.post("/api/annotations")
    def annotate(body: dict):
        try:
            annotation = Annotation(body.get("annotation", ""))
        except ValueError:
            return JSONResponse(
                {"error": f"annotation must be one of {[a.value for a in Annotation]}"},
                status_code=422,
            )
        future = engine.submit_annotation(
            body.get("exchange", ""), annotation, body.get("note")
        )
        try:
            return _wait(future)
        except KeyError as exc:
            return JSONResponse({"error": str(exc)}, status_code=404)

    @app.post("/api/score/consolidate")
    def consolidate():
        inputs = _wait(engine.request_consolidation_inputs())
        notes, summarized = [], False
        if inputs["entries"]:
            from .memory import RehearsalMemory  # summarize via a detached helper

            helper = RehearsalMemory(colors=engine.config.colors)
            helper.longterm = {e.id: e for e in inputs["entries"]}
            helper.top_notes = engine.config.memory.top_notes
            notes, summarized = helper.summarize_notes(provider)
        return _wait(engine.submit_score_notes(notes, summarized))

    @app.get("/api/sessions")
    def sessions():
        out = []
        for session_dir in iter_session_dirs(engine.data_dir):
            try:
                reader = SessionLogReader.load(session_dir / "log.ndjson")
                out.append({
                    "id": reader.header.session_id,
                    "dir": str(session_dir),
                    "entries": len(reader.entries),
                    "complete": reader.complete,
                    "active": reader.header.session_id == engine.session_id,
                })
            except Exception:
                continue
        return {"sessions": out}

    @app.post("/api/replay")
    def replay(body: dict):
        session = (body or {}).get("session", "")
        session_dir = engine.data_dir / "sessions" / session
        if not (session_dir / "log.ndjson").exists():
            return JSONResponse({"error": f"unknown session '{session}'"}, status_code=404)

        def progress(t, end):
            engine._broadcast("replay_progress", {"session": session, "t": t, "end": end})

        try:
            result = replay_session(session_dir, progress=progress)
        except ReplayConfigMismatch as exc:
            return JSONResponse({"error": str(exc)}, status_code=409)
        wire = result.to_wire()
        engine._broadcast("replay_progress", {"session": session, "done": True, **wire})
        return wire

    @app.post("/api/diff")
    def diff_sessions(body: dict):
        try:
            a = SessionLogReader.load(engine.data_dir / "sessions" / body["a"] / "log.ndjson")
            b = SessionLogReader.load(engine.data_dir / "sessions" / body["b"] / "log.ndjson")
        except (KeyError, OSError) as exc:
            return JSONResponse({"error": f"cannot load sessions: {exc}"}, status_code=404)
        try:
            return diff(a, b).to_wire()
        except ReplayAlignmentError as exc:
            return JSONResponse({"error": str(exc)}, status_code=409)

    @app.post("/api/sensors/batch")
    def sensor_batch(body: dict):
        frames = (body or {}).get("frames", [])
        accepted = 0
        for frame in frames:
            payload = frame if isinstance(frame, str) else json.dumps(frame)
            try:
                engine.submit_sensor_payload(payload)
            except MessageDecodeError as exc:
                return JSONResponse(
                    {"error": str(exc), "accepted": accepted}, status_code=422
                )
            accepted += 1
        return {"accepted": accepted}

    @app.post("/api/panic")
    def panic():
        return _wait(engine.submit_panic())

    @app.websocket("/ws/sensors")
    async def ws_sensors(ws: WebSocket):
        await ws.accept()
        try:
            while True:
                payload = await ws.receive_text()
                try:
                    engine.submit_sensor_payload(payload)
                except MessageDecodeError as exc:
                    await ws.send_text(json.dumps({"error": str(exc)}))
        except WebSocketDisconnect:
            pass

    @app.websocket("/ws/console")
    async def ws_console(ws: WebSocket):
        await ws.accept()
        # full-state resync on (re)connect
        await ws.send_text(json.dumps({"frame": "hello", "data": {
            "session": engine.session_id,
            "zones": engine.zones_wire(),
            "actuators": engine.actuators_wire(),
            "room": {"width": engine.config.room.width, "height": engine.config.room.height},
        }}))
        await ws.send_text(json.dumps({"frame": "snapshot", "data": engine.snapshot_wire()}))
        await ws.send_text(json.dumps(
            {"frame": "heatgrid", "data": hg.to_wire(engine.grid, engine.hotspots)}
        ))
        await ws.send_text(json.dumps({"frame": "rules", "data": engine.rules_wire()}))
        await ws.send_text(json.dumps({"frame": "score", "data": engine.score_wire()}))
        for wire in engine.trace_wires(50):
            await ws.send_text(json.dumps({"frame": "trace", "data": wire}))

        frames = engine.subscribe()

        async def pump_out():
            while True:
                frame = await anyio.to_thread.run_sync(frames.get)
                await ws.send_text(json.dumps(frame))

        async def pump_in():
            while True:
                message = json.loads(await ws.receive_text())
                reply = await anyio.to_thread.run_sync(_console_request, message)
                await ws.send_text(json.dumps({
                    "frame": "result",
                    "data": {"request": message.get("type"), **reply},
                }))

        def _console_request(message: dict) -> dict:
            kind = message.get("type")
            try:
                if kind == "command":
                    parsed = parse_command(
                        message.get("text", ""), provider, engine.command_context()
                    )
                    return _wait(engine.submit_parsed_command(parsed, message.get("text", "")))
                if kind == "framing":
                    profile, questions = interpret_framing(
                        message.get("text", ""), provider, now_ms=engine.now
                    )
                    _wait(engine.submit_profile(profile, questions))
                    return {
                        "profile": engine.score_wire()["profile"],
                        "questions": [
                            {"id": q.id, "text": q.text, "field": q.field,
                             "options": list(q.options) if q.options else None}
                            for q in questions
                        ],
                    }
                if kind == "annotation":
                    return _wait(engine.submit_annotation(
                        message.get("exchange", ""),
                        Annotation(message.get("annotation", "none")),
                        message.get("note"),
                    ))
                if kind == "clarify":
                    q = message.get("question") or {}
                    question = ClarificationQuestion(
                        id=q.get("id", q.get("field", "")),
                        text=q.get("text", ""),
                        field=q.get("field", q.get("id", "")),
                        options=tuple(q["options"]) if q.get("options") else None,
                    )
                    updated = apply_clarification(
                        engine.profile, question, message.get("answer", ""), provider
                    )
                    _wait(engine.submit_profile(updated, reason="clarification"))
                    return {"profile": engine.score_wire()["profile"]}
                if kind == "replay":
                    return replay_body(message)
                if kind == "consolidate":
                    return consolidate()
                return {"error": f"unknown request type '{kind}'"}
            except Exception as exc:
                return {"error": str(exc)}

        def replay_body(message: dict) -> dict:
            session = message.get("session", "")
            session_dir = engine.data_dir / "sessions" / session
            if not (session_dir / "log.ndjson").exists():
                return {"error": f"unknown session '{session}'"}

            def progress(t, end):
                engine._broadcast("replay_progress", {"session": session, "t": t, "end": end})

            try:
                result = replay_session(session_dir, progress=progress)
            except ReplayConfigMismatch as exc:
                return {"error": str(exc)}
            wire = result.to_wire()
            engine._broadcast("replay_progress", {"session": session, "done": True, **wire})
            return wire

        try:
            async with anyio.create_task_group() as tg:
                tg.start_soon(pump_out)
                tg.start_soon(pump_in)
        except Exception:
            pass
        finally:
            engine.unsubscribe(frames)

    if console_dir and Path(console_dir).is_dir():
        app.mount("/console", StaticFiles(directory=str(console_dir), html=True),
                  name="console")

    return app


class Ticker(threading.Thread):
    """Real-time tick driver: wall-clock scheduled, logical-time stamped."""

    def __init__(self, engine: Engine, tick_ms: int):
        super().__init__(name="tick-loop", daemon=True)
        self.engine = engine
        self.tick_s = tick_ms / 1000.0
        self.tick_ms = tick_ms
        self._stop = threading.Event()

    def run(self) -> None:
        start = time.monotonic()
        k = 0
        self.engine.tick(0)
        while not self._stop.is_set():
            k += 1
            target = start + k * self.tick_s
            delay = target - time.monotonic()
            if delay > 0:
                time.sleep(delay)
            self.engine.tick(k * self.tick_ms)

    def stop(self) -> None:
        self._stop.set()


def serve(
    config: EngineConfig,
    fake_bridge_port: int | None = None,
    host: str | None = None,
    port: int | None = None,
) -> None:
    """Start the engine, tick loop, optional fake bridge, and HTTP service."""
    from dataclasses import replace as dc_replace

    import uvicorn

    from .actuation import PhysicalBinding
    from .fakebridge import FakeBridge

    bridge = None
    if fake_bridge_port is not None:
        bridge = FakeBridge(fake_bridge_port).start()
        specs = []
        for spec in config.actuators:
            if spec.kind == "light":
                binding = PhysicalBinding(
                    bridge.url,
                    spec.binding.application_key if spec.binding else "fake-key",
                    spec.binding.physical_id if spec.binding else spec.id,
                )
                specs.append(dc_replace(spec, binding=binding))
            else:
                specs.append(dc_replace(spec, webhook_url=f"{bridge.url}/relay/{spec.id}"))
        config = dc_replace(config, actuators=tuple(specs))
        print(f"fake bridge listening on {bridge.url}")

    provider = provider_from_spec(config)
    engine = Engine(config, provider, sync_providers=False)
    ticker = Ticker(engine, config.tick_ms)
    ticker.start()
    app = create_app(engine, console_dir=config.console_dir)
    print(f"session {engine.session_id} -> {engine.session_dir}")
    try:
        uvicorn.run(app, host=host or config.host, port=port or config.port,
                    log_level="warning")
    finally:
        ticker.stop()
        engine.close()
        if bridge is not None:
            bridge.stop()
