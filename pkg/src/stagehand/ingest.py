"""Sensor wire protocol and the scripted rehearsal simulator.

External trackers and transcribers send one JSON object per frame:

    {"type": "position", "id": str, "kind": "performer"|"audience"|"virtual",
     "x": num, "y": num, "t": int}
    {"type": "speech", "speaker": str?, "text": str, "confidence": num,
     "x": num?, "y": num?, "t": int}
    {"type": "lost", "id": str}

Unknown fields are ignored; unknown ``type`` values are rejected. The same
messages are generated internally from scenario scripts, so the rest of the
engine never knows whether behaviour is live or simulated.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, replace
from .core import (
    EntityKind,
    EnvironmentSnapshot,
    Position,
    RoomBounds,
    SpeechEvent,
    TrackedEntity,
    distance,
)

SPEAKER_ATTRIBUTION_RADIUS_M = 1.5
DEFAULT_STALENESS_MS = 2000


class MessageDecodeError(ValueError):
    """Frame is not a valid sensor message; the message names the bad field."""


class MessageRangeError(MessageDecodeError):
    """Frame parsed but a value is outside its allowed range."""


@dataclass(frozen=True)
class PositionUpdate:
    entity_id: str
    kind: EntityKind
    x: float
    y: float
    source_timestamp: int


@dataclass(frozen=True)
class SpeechTranscript:
    text: str
    confidence: float
    source_timestamp: int
    speaker: str | None = None
    x: float | None = None
    y: float | None = None


@dataclass(frozen=True)
class EntityLost:
    entity_id: str


SensorMessage = PositionUpdate | SpeechTranscript | EntityLost


def _field(obj: dict, name: str, types: type | tuple, required: bool = True):
    if name not in obj or obj[name] is None:
        if required:
            raise MessageDecodeError(f"missing field '{name}'")
        return None
    value = obj[name]
    if isinstance(value, bool) or not isinstance(value, types):
        raise MessageDecodeError(f"field '{name}' has wrong type: {value!r}")
    return value


def decode_sensor_message(payload: bytes | str) -> SensorMessage:
    """Parse one UTF-8 JSON frame into a sensor message."""
    if isinstance(payload, bytes):
        try:
            payload = payload.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MessageDecodeError(f"frame is not UTF-8: {exc}") from exc
    try:
        obj = json.loads(payload)
    except json.JSONDecodeError as exc:
        raise MessageDecodeError(f"frame is not valid JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise MessageDecodeError("frame must be a JSON object")

    msg_type = _field(obj, "type", str)
    if msg_type == "position":
        kind_raw = _field(obj, "kind", str)
        try:
            kind = EntityKind(kind_raw)
        except ValueError:
            raise MessageRangeError(f"field 'kind' has unknown value {kind_raw!r}")
        x = float(_field(obj, "x", (int, float)))
        y = float(_field(obj, "y", (int, float)))
        if not (math.isfinite(x) and math.isfinite(y)):
            raise MessageRangeError("fields 'x'/'y' must be finite")
        return PositionUpdate(
            entity_id=str(_field(obj, "id", str)),
            kind=kind,
            x=x,
            y=y,
            source_timestamp=int(_field(obj, "t", (int, float))),
        )
    if msg_type == "speech":
        text = _field(obj, "text", str)
        if not text.strip():
            raise MessageRangeError("field 'text' must be non-empty")
        confidence = float(_field(obj, "confidence", (int, float)))
        if not (0.0 <= confidence <= 1.0):
            raise MessageRangeError(f"field 'confidence' {confidence} outside [0, 1]")
        x = _field(obj, "x", (int, float), required=False)
        y = _field(obj, "y", (int, float), required=False)
        return SpeechTranscript(
            text=text,
            confidence=confidence,
            source_timestamp=int(_field(obj, "t", (int, float))),
            speaker=_field(obj, "speaker", str, required=False),
            x=None if x is None else float(x),
            y=None if y is None else float(y),
        )
    if msg_type == "lost":
        return EntityLost(entity_id=str(_field(obj, "id", str)))
    raise MessageDecodeError(f"field 'type' has unknown value {msg_type!r}")


def encode_sensor_message(msg: SensorMessage) -> str:
    """Inverse of :func:`decode_sensor_message` (round-trips exactly)."""
    if isinstance(msg, PositionUpdate):
        return json.dumps(
            {"type": "position", "id": msg.entity_id, "kind": msg.kind.value,
             "x": msg.x, "y": msg.y, "t": msg.source_timestamp}
        )
    if isinstance(msg, SpeechTranscript):
        obj: dict = {"type": "speech", "text": msg.text, "confidence": msg.confidence,
                     "t": msg.source_timestamp}
        if msg.speaker is not None:
            obj["speaker"] = msg.speaker
        if msg.x is not None:
            obj["x"] = msg.x
        if msg.y is not None:
            obj["y"] = msg.y
        return json.dumps(obj)
    return json.dumps({"type": "lost", "id": msg.entity_id})


def hash_entity_id(entity_id: str) -> str:
    """Stable pseudonym for an entity id (consent/anonymisation switch)."""
    return hashlib.sha256(entity_id.encode("utf-8")).hexdigest()[:12]


# --- scripted scenarios -----------------------------------------------------


@dataclass(frozen=True)
class Waypoint:
    t_ms: int
    x: float
    y: float


@dataclass(frozen=True)
class ScriptedAgent:
    id: str
    kind: EntityKind
    waypoints: tuple[Waypoint, ...]


@dataclass(frozen=True)
class ScriptedUtterance:
    t_ms: int
    speaker: str
    text: str


@dataclass(frozen=True)
class ScenarioScript:
    """A rehearsal scenario: agents walking waypoint paths plus timed speech.

    May carry the dramaturgical setup too (framing text and director commands
    applied before the first tick), so one file describes a whole rehearsal.
    """

    duration_ms: int
    agents: tuple[ScriptedAgent, ...] = ()
    utterances: tuple[ScriptedUtterance, ...] = ()
    framing: str = ""
    commands: tuple[str, ...] = ()

    def validate(self, bounds: RoomBounds) -> None:
        for agent in self.agents:
            times = [w.t_ms for w in agent.waypoints]
            if times != sorted(times) or len(set(times)) != len(times):
                raise ValueError(f"agent '{agent.id}': waypoint times must strictly increase")
            for w in agent.waypoints:
                if not bounds.contains(Position(w.x, w.y)):
                    raise ValueError(
                        f"agent '{agent.id}': waypoint ({w.x}, {w.y}) outside room bounds"
                    )
        for u in self.utterances:
            if not (0 <= u.t_ms <= self.duration_ms):
                raise ValueError(f"utterance at t={u.t_ms} outside [0, {self.duration_ms}]")


def load_scenario(path: str) -> ScenarioScript:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    agents = tuple(
        ScriptedAgent(
            id=a["id"],
            kind=EntityKind(a.get("kind", "virtual")),
            waypoints=tuple(Waypoint(int(w["t_ms"]), float(w["x"]), float(w["y"]))
                            for w in a["waypoints"]),
        )
        for a in doc.get("agents", [])
    )
    utterances = tuple(
        ScriptedUtterance(int(u["t_ms"]), u["speaker"], u["text"])
        for u in doc.get("utterances", [])
    )
    return ScenarioScript(
        duration_ms=int(doc["duration_ms"]),
        agents=agents,
        utterances=utterances,
        framing=doc.get("framing", ""),
        commands=tuple(doc.get("commands", [])),
    )


def _agent_position(agent: ScriptedAgent, t_ms: int) -> tuple[float, float]:
    wps = agent.waypoints
    if t_ms <= wps[0].t_ms:
        return wps[0].x, wps[0].y
    if t_ms >= wps[-1].t_ms:
        return wps[-1].x, wps[-1].y
    for a, b in zip(wps, wps[1:]):
        if a.t_ms <= t_ms <= b.t_ms:
            frac = (t_ms - a.t_ms) / (b.t_ms - a.t_ms)
            return a.x + frac * (b.x - a.x), a.y + frac * (b.y - a.y)
    raise AssertionError("unreachable: waypoint times are ordered")


def step_scenario(
    script: ScenarioScript, t_ms: int, prev_t_ms: int | None = None
) -> list[SensorMessage]:
    """Messages the simulated sensors emit at tick time ``t_ms``.

    Pure function of its arguments: agents report an interpolated position
    every step (held at the path ends), and each utterance with time in
    ``(prev_t_ms, t_ms]`` becomes a transcript at confidence 1.0.
    """
    if not (0 <= t_ms <= script.duration_ms):
        raise ValueError(f"t_ms {t_ms} outside [0, {script.duration_ms}]")
    messages: list[SensorMessage] = []
    for agent in script.agents:
        if not agent.waypoints:
            continue
        x, y = _agent_position(agent, t_ms)
        messages.append(PositionUpdate(agent.id, agent.kind, x, y, t_ms))
    low = -1 if prev_t_ms is None else prev_t_ms
    for u in script.utterances:
        if low < u.t_ms <= t_ms:
            messages.append(SpeechTranscript(u.text, 1.0, u.t_ms, speaker=u.speaker))
    return messages


# --- applying messages to the snapshot ---------------------------------------


def _resolve_speech_position(
    snapshot: EnvironmentSnapshot, msg: SpeechTranscript
) -> tuple[Position | None, str | None, bool]:
    """Returns (position, speaker id, attributed flag)."""
    if msg.speaker is not None:
        entity = snapshot.entity(msg.speaker)
        return (entity.position if entity else None), msg.speaker, entity is not None
    if msg.x is not None and msg.y is not None:
        reported = Position(msg.x, msg.y)
        best: TrackedEntity | None = None
        best_d = SPEAKER_ATTRIBUTION_RADIUS_M
        for e in snapshot.entities:
            d = distance(e.position, reported)
            if d <= best_d:
                best, best_d = e, d
        if best is not None:
            return best.position, best.id, True
        return reported, None, False
    return None, None, False


def apply_message(
    snapshot: EnvironmentSnapshot,
    msg: SensorMessage,
    now_ms: int,
    *,
    bounds: RoomBounds,
    staleness_ms: int = DEFAULT_STALENESS_MS,
) -> EnvironmentSnapshot:
    """Fold one decoded message into the snapshot; bumps the version.

    Entities unseen for longer than ``staleness_ms`` are evicted on the way.
    Position updates outside the room bounds are clamped onto the boundary
    (trackers jitter at the edges; a hard reject would drop real people).
    """
    entities = [e for e in snapshot.entities if now_ms - e.last_seen <= staleness_ms]
    speech = list(snapshot.recent_speech)

    if isinstance(msg, PositionUpdate):
        pos = Position(
            min(max(msg.x, 0.0), bounds.width),
            min(max(msg.y, 0.0), bounds.height),
        )
        entity = TrackedEntity(msg.entity_id, msg.kind, pos, now_ms)
        for i, existing in enumerate(entities):
            if existing.id == msg.entity_id:
                entities[i] = replace(entity, label=existing.label)
                break
        else:
            entities.append(entity)
    elif isinstance(msg, SpeechTranscript):
        interim = replace(snapshot, entities=tuple(entities))
        position, speaker, _ = _resolve_speech_position(interim, msg)
        speech.append(
            SpeechEvent(
                text=msg.text,
                confidence=msg.confidence,
                timestamp=now_ms,
                speaker=speaker,
                position=position,
            )
        )
    elif isinstance(msg, EntityLost):
        entities = [e for e in entities if e.id != msg.entity_id]
    else:  # pragma: no cover - exhaustive union
        raise TypeError(f"unknown sensor message {msg!r}")

    return replace(
        snapshot,
        version=snapshot.version + 1,
        timestamp=now_ms,
        entities=tuple(entities),
        recent_speech=tuple(speech),
    )


