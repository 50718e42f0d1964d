"""Shared domain types: positions, entities, speech, lights, zones, snapshots.

Everything here is an immutable value type plus pure functions over them, so
instances are safe to share across threads. The engine tick loop is the only
place snapshots get replaced.

Coordinates are 2-D floor-plane meters (overhead tracking yields planar data;
height is ignored). Timestamps are milliseconds since session start, assigned
by the engine on ingest.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import TYPE_CHECKING, Iterable, Mapping, Sequence

if TYPE_CHECKING:
    from .heatgrid import Hotspot

DEFAULT_SPEECH_WINDOW_MS = 15_000

_COUNT_WORDS = (
    "No", "One", "Two", "Three", "Four", "Five", "Six",
    "Seven", "Eight", "Nine", "Ten", "Eleven", "Twelve",
)


class EntityKind(str, Enum):
    PERFORMER = "performer"
    AUDIENCE = "audience"
    VIRTUAL = "virtual"


class Modality(str, Enum):
    """Actuation channels. Light is fully actuated; sound and motion are
    accepted and routed to stub actuators."""

    LIGHT = "light"
    SOUND = "sound"
    MOTION = "motion"


class InvalidValueError(ValueError):
    """A domain value violates one of its declared invariants."""


@dataclass(frozen=True)
class Position:
    """A point on the floor plane, in meters."""

    x: float
    y: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise InvalidValueError(f"position coordinates must be finite, got ({self.x}, {self.y})")


@dataclass(frozen=True)
class RoomBounds:
    """The tracked floor rectangle [0, width] x [0, height]."""

    width: float
    height: float

    def __post_init__(self) -> None:
        if not (self.width > 0 and self.height > 0):
            raise InvalidValueError("room bounds must be positive")

    def contains(self, p: Position) -> bool:
        return 0.0 <= p.x <= self.width and 0.0 <= p.y <= self.height


@dataclass(frozen=True)
class TrackedEntity:
    id: str
    kind: EntityKind
    position: Position
    last_seen: int
    label: str | None = None


@dataclass(frozen=True)
class SpeechEvent:
    """One transcribed utterance, spatially attributed when possible."""

    text: str
    confidence: float
    timestamp: int
    speaker: str | None = None
    position: Position | None = None

    def __post_init__(self) -> None:
        if not self.text.strip():
            raise InvalidValueError("speech text must be non-empty")
        if not (0.0 <= self.confidence <= 1.0):
            raise InvalidValueError(f"speech confidence {self.confidence} outside [0, 1]")


@dataclass(frozen=True)
class LightState:
    """A light target in the smart-bulb wire convention.

    Ranges follow the bridge protocol (bri/sat 0..254, hue 0..65535); values
    outside them are rejected at construction, never clamped.
    """

    on: bool
    bri: int
    hue: int
    sat: int
    transition_ms: int

    def __post_init__(self) -> None:
        if not (0 <= self.bri <= 254):
            raise InvalidValueError(f"bri {self.bri} outside 0..254")
        if not (0 <= self.hue <= 65535):
            raise InvalidValueError(f"hue {self.hue} outside 0..65535")
        if not (0 <= self.sat <= 254):
            raise InvalidValueError(f"sat {self.sat} outside 0..254")
        if self.transition_ms < 0:
            raise InvalidValueError("transition_ms must be >= 0")


@dataclass(frozen=True)
class Zone:
    """A named spatial region that commands and triggers can address.

    Boundary points count as inside (closed regions), so an entity standing
    exactly on a line does not flicker between membership states.
    """

    id: str
    name: str
    shape: RectangleShape | CircleShape


@dataclass(frozen=True)
class RectangleShape:
    min: Position
    max: Position

    def __post_init__(self) -> None:
        if not (self.min.x < self.max.x and self.min.y < self.max.y):
            raise InvalidValueError("rectangle min must be strictly below max on both axes")


@dataclass(frozen=True)
class CircleShape:
    center: Position
    radius: float

    def __post_init__(self) -> None:
        if not self.radius > 0:
            raise InvalidValueError("circle radius must be > 0")


@dataclass(frozen=True)
class EnvironmentSnapshot:
    """Versioned world state published once per engine tick."""

    version: int
    timestamp: int
    entities: tuple[TrackedEntity, ...] = ()
    lights: Mapping[str, LightState] = field(default_factory=dict)
    recent_speech: tuple[SpeechEvent, ...] = ()
    hotspots: tuple["Hotspot", ...] = ()

    def entity(self, entity_id: str) -> TrackedEntity | None:
        for e in self.entities:
            if e.id == entity_id:
                return e
        return None


def distance(a: Position, b: Position) -> float:
    """Euclidean distance in meters."""
    return math.hypot(a.x - b.x, a.y - b.y)


def zone_contains(zone: Zone, p: Position) -> bool:
    """True iff ``p`` lies in the zone; boundaries are inside."""
    shape = zone.shape
    if isinstance(shape, RectangleShape):
        return shape.min.x <= p.x <= shape.max.x and shape.min.y <= p.y <= shape.max.y
    return distance(shape.center, p) <= shape.radius


def zone_memberships(
    entities: Iterable[TrackedEntity], zones: Sequence[Zone]
) -> dict[str, frozenset[str]]:
    """Map entity id -> ids of all zones containing it."""
    return {
        e.id: frozenset(z.id for z in zones if zone_contains(z, e.position))
        for e in entities
    }


def count_phrase(n: int, noun: str = "participant") -> str:
    """Spell out small counts the way a rehearsal note would ("Two participants")."""
    word = _COUNT_WORDS[n] if 0 <= n < len(_COUNT_WORDS) else str(n)
    return f"{word} {noun}{'' if n == 1 else 's'}"


def advance_snapshot(
    snapshot: EnvironmentSnapshot,
    now_ms: int,
    *,
    hotspots: tuple["Hotspot", ...] | None = None,
    lights: Mapping[str, LightState] | None = None,
    staleness_ms: int = 2000,
    speech_window_ms: int = DEFAULT_SPEECH_WINDOW_MS,
) -> EnvironmentSnapshot:
    """Advance the snapshot clock: evict stale entities, prune the speech
    window, refresh hotspot and light views. Bumps the version."""
    entities = tuple(e for e in snapshot.entities if now_ms - e.last_seen <= staleness_ms)
    speech = tuple(e for e in snapshot.recent_speech if now_ms - e.timestamp <= speech_window_ms)
    return replace(
        snapshot,
        version=snapshot.version + 1,
        timestamp=now_ms,
        entities=entities,
        recent_speech=speech,
        hotspots=snapshot.hotspots if hotspots is None else hotspots,
        lights=snapshot.lights if lights is None else dict(lights),
    )


def _hotspot_line(snapshot: EnvironmentSnapshot, zones: Sequence[Zone]) -> str | None:
    if not snapshot.hotspots:
        return None
    top = snapshot.hotspots[0]
    prev = top.prev_heat
    if prev is None or top.heat > prev + 1e-9:
        trend = "increasing"
    elif top.heat < prev - 1e-9:
        trend = "decreasing"
    else:
        trend = "steady"
    for z in zones:
        if zone_contains(z, top.world_center):
            return f"- Overall activity {trend} in the {z.name}."
    c = top.world_center
    return f"- Overall activity {trend} at ({c.x:.1f}, {c.y:.1f})."


def render_environment_section(
    snapshot: EnvironmentSnapshot, zones: Sequence[Zone]
) -> str:
    """Render the environmental-state block of the composed prompt.

    Deterministic: identical snapshots produce byte-identical text. Facts
    appear in fixed order (per-zone counts, open-space count, latest speech,
    hotspot summary).
    """
    lines = ["[CURRENT ENVIRONMENTAL STATE]"]
    if not snapshot.entities:
        lines.append("- No participants detected.")
    else:
        placed: set[str] = set()
        for z in zones:
            inside = [e for e in snapshot.entities if zone_contains(z, e.position)]
            if inside:
                placed.update(e.id for e in inside)
                lines.append(f"- {count_phrase(len(inside))} near the {z.name}.")
        loose = len(snapshot.entities) - len(placed)
        if loose:
            lines.append(f"- {count_phrase(loose)} in open space.")
    if snapshot.recent_speech:
        latest = max(snapshot.recent_speech, key=lambda e: e.timestamp)
        lines.append(f'- Recent speech detected: "{latest.text}"')
    hotspot = _hotspot_line(snapshot, zones)
    if hotspot:
        lines.append(hotspot)
    return "\n".join(lines)
