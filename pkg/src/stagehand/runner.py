"""Headless scenario runs and deterministic session replay.

``run_scenario`` drives a synchronous engine over a scripted rehearsal on a
virtual clock, so a minute of stage time takes milliseconds. ``replay_session``
re-runs a recorded session from its log alone: sensor frames, director
commands, framing, and annotations re-enter at their logged ticks, provider
completions are replayed verbatim instead of re-queried, and the produced
dispatch sequence is compared byte-for-byte against the original.
"""

from __future__ import annotations

import tempfile
from dataclasses import dataclass, field
from pathlib import Path

from .config import EngineConfig, load_config
from .director import parse_command, parse_grammar_command
from .dramaturgy import interpret_framing, profile_from_dict
from .engine import Engine, ReplayConfigMismatch
from .ingest import ScenarioScript, decode_sensor_message, step_scenario
from .memory import Annotation
from .providers import LanguageModelProvider
from .sessionlog import (
    INPUT_KINDS,
    KIND_ANNOTATION,
    KIND_COMMAND_APPLIED,
    KIND_FRAMING_APPLIED,
    KIND_PANIC_APPLIED,
    KIND_PROMPT_COMPOSED,
    KIND_PROVIDER_FAILURE,
    KIND_PROVIDER_REPLY,
    KIND_SCORE_CONSOLIDATED,
    KIND_SENSOR_IN,
    SessionLogReader,
    dispatched_action_lines,
)


@dataclass
class RunSummary:
    session_id: str
    session_dir: Path
    ticks: int
    sensor_frames: int
    exchanges: int
    dispatched: int
    violations_dropped: int
    traces: list = field(default_factory=list)


def run_scenario(
    config: EngineConfig,
    script: ScenarioScript,
    provider: LanguageModelProvider | None,
    *,
    data_dir: Path | None = None,
    session_id: str | None = None,
    enable_physical: bool = True,
    tick_hook=None,
) -> RunSummary:
    """Run one scripted rehearsal to completion on the virtual clock."""
    script.validate(config.room)
    engine = Engine(
        config, provider,
        session_id=session_id, data_dir=data_dir,
        sync_providers=True, enable_physical=enable_physical,
    )
    try:
        if script.framing:
            if provider is None:
                raise ValueError("scenario has framing text but no provider is configured")
            profile, questions = interpret_framing(script.framing, provider, now_ms=0)
            engine.submit_profile(profile, questions)
        for text in script.commands:
            parsed = parse_command(text, provider, engine.command_context())
            engine.submit_parsed_command(parsed, text)

        sensor_frames = 0
        ticks = 0
        prev_t: int | None = None
        for t in range(0, script.duration_ms + 1, config.tick_ms):
            for msg in step_scenario(script, t, prev_t):
                engine.submit_sensor(msg)
                sensor_frames += 1
            engine.tick(t)
            if tick_hook is not None:
                tick_hook(engine, t)
            prev_t = t
            ticks += 1
    finally:
        engine.close()

    reader = SessionLogReader.load(engine.session_dir / "log.ndjson")
    return RunSummary(
        session_id=engine.session_id,
        session_dir=engine.session_dir,
        ticks=ticks,
        sensor_frames=sensor_frames,
        exchanges=len(reader.of_kind(KIND_PROMPT_COMPOSED)),
        dispatched=len(dispatched_action_lines(reader)),
        violations_dropped=len(reader.of_kind("violation_dropped")),
        traces=[t.to_wire() for t in engine.traces],
    )


class ReplaySource:
    """Recorded provider completions and reply ticks, keyed by exchange id."""

    def __init__(self, reader: SessionLogReader):
        self._completions: dict[str, list[dict]] = {}
        self._reply_t: dict[str, int] = {}
        for entry in reader.entries:
            if entry.kind in (KIND_PROVIDER_REPLY, KIND_PROVIDER_FAILURE):
                exchange = entry.data["exchange"]
                self._completions[exchange] = list(entry.data.get("completions", []))
                self._reply_t[exchange] = entry.t_ms

    def completions_for(self, exchange_id: str) -> list[dict]:
        return self._completions.get(exchange_id, [])

    def reply_tick(self, exchange_id: str, default: int) -> int:
        return self._reply_t.get(exchange_id, default)


@dataclass
class ReplayResult:
    session_id: str
    match: bool
    partial: bool
    prompt_hashes_ok: bool
    actions_original: int
    actions_replayed: int
    first_mismatch: str | None
    replay_dir: Path

    def to_wire(self) -> dict:
        return {
            "session": self.session_id,
            "match": self.match,
            "partial": self.partial,
            "prompt_hashes_ok": self.prompt_hashes_ok,
            "actions_original": self.actions_original,
            "actions_replayed": self.actions_replayed,
            "first_mismatch": self.first_mismatch,
            "replay_dir": str(self.replay_dir),
        }


def replay_session(
    session_dir: Path,
    config: EngineConfig | None = None,
    out_dir: Path | None = None,
    progress=None,
) -> ReplayResult:
    """Re-run a recorded session and compare the dispatched-action sequence.

    Physical endpoints stay untouched: replay is analysis, not re-actuation.
    """
    session_dir = Path(session_dir)
    reader = SessionLogReader.load(session_dir / "log.ndjson")
    if config is None:
        config = load_config(session_dir / "config.json", check_files=False)
    if config.config_hash() != reader.header.config_hash:
        raise ReplayConfigMismatch(
            f"config hash {config.config_hash()[:12]} does not match the log's "
            f"{reader.header.config_hash[:12]}; replay needs identical rules, "
            "constraints and policy"
        )

    if out_dir is None:
        out_dir = Path(tempfile.mkdtemp(prefix="stagehand-replay-"))

    engine = Engine(
        config,
        provider=None,
        session_id=f"replay-{reader.header.session_id}",
        data_dir=out_dir,
        sync_providers=True,
        enable_physical=False,
        longterm_seed=list(reader.header.initial_longterm),
        score_version_seed=reader.header.score_version,
        replay_source=ReplaySource(reader),
    )

    inputs: dict[int, list] = {}
    for entry in reader.entries:
        if entry.kind in INPUT_KINDS:
            inputs.setdefault(entry.t_ms, []).append(entry)

    end_t = reader.last_t()
    ticks = list(range(0, end_t + 1, reader.header.tick_ms))
    try:
        for i, t in enumerate(ticks):
            for entry in inputs.get(t, []):
                _feed(engine, entry)
            engine.tick(t)
            if progress is not None and (i % 20 == 0 or t == end_t):
                progress(t, end_t)
    finally:
        engine.close()

    replay_reader = SessionLogReader.load(engine.session_dir / "log.ndjson")
    original = dispatched_action_lines(reader)
    replayed = dispatched_action_lines(replay_reader)
    first_mismatch = None
    for i, (a, b) in enumerate(zip(original, replayed)):
        if a != b:
            first_mismatch = f"action {i}: {a} != {b}"
            break
    if first_mismatch is None and len(original) != len(replayed):
        first_mismatch = (
            f"action count differs: {len(original)} original vs {len(replayed)} replayed"
        )

    original_hashes = {
        e.data["exchange"]: e.data["prompt_hash"]
        for e in reader.of_kind(KIND_PROMPT_COMPOSED)
    }
    replayed_hashes = {
        e.data["exchange"]: e.data["prompt_hash"]
        for e in replay_reader.of_kind(KIND_PROMPT_COMPOSED)
    }
    prompt_hashes_ok = original_hashes == replayed_hashes

    return ReplayResult(
        session_id=reader.header.session_id,
        match=first_mismatch is None,
        partial=not reader.complete,
        prompt_hashes_ok=prompt_hashes_ok,
        actions_original=len(original),
        actions_replayed=len(replayed),
        first_mismatch=first_mismatch,
        replay_dir=engine.session_dir,
    )


def _feed(engine: Engine, entry) -> None:
    if entry.kind == KIND_SENSOR_IN:
        engine.submit_sensor(decode_sensor_message(entry.data["frame"]))
    elif entry.kind == KIND_COMMAND_APPLIED:
        parsed = parse_grammar_command(
            entry.data["canonical"], engine.command_context(),
            rule_id=entry.data.get("rule_id", ""),
        )
        from dataclasses import replace as _replace

        description = entry.data.get("description", "")
        if description:
            parsed = _replace(parsed, description=description)
        engine.submit_parsed_command(parsed, entry.data.get("text", ""))
    elif entry.kind == KIND_FRAMING_APPLIED:
        engine.submit_profile(profile_from_dict(entry.data["profile"]), reason="replay")
    elif entry.kind == KIND_ANNOTATION:
        engine.submit_annotation(
            entry.data["exchange"], Annotation(entry.data["annotation"]),
            entry.data.get("note"),
        )
    elif entry.kind == KIND_SCORE_CONSOLIDATED:
        engine.submit_score_notes(
            list(entry.data.get("notes", [])),
            bool(entry.data.get("provider_summarized", False)),
        )
    elif entry.kind == KIND_PANIC_APPLIED:
        engine.submit_panic()
