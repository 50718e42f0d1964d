"""Engine configuration: one JSON document, checked fail-fast at load.

The behavioural core of the config (room, zones, actuators, grid, policy,
thresholds, initial commands) is hashed; replay refuses to run against a
log whose hash differs. Deployment knobs (data directory, network, provider
transport, physical bindings) stay outside the hash because they cannot
change what the engine decides.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

from .core import (
    CircleShape,
    Position,
    RectangleShape,
    RoomBounds,
    Zone,
)
from .actuation import PhysicalBinding
from .decision import TriggerPolicy
from .director import DEFAULT_COLORS, NamedColor
from .heatgrid import (
    DEFAULT_COLS,
    DEFAULT_DECAY,
    DEFAULT_DEPOSIT,
    DEFAULT_H_MIN,
    DEFAULT_ROWS,
    DEFAULT_THETA_REL,
)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ActuatorSpec:
    id: str
    kind: str  # "light" | "relay"
    zone_id: str | None = None
    binding: PhysicalBinding | None = None
    webhook_url: str | None = None  # relays actuate via a generic webhook

    def __post_init__(self) -> None:
        if self.kind not in ("light", "relay"):
            raise ConfigError(f"actuator '{self.id}': unknown kind '{self.kind}'")


@dataclass(frozen=True)
class HeatGridParams:
    cols: int = DEFAULT_COLS
    rows: int = DEFAULT_ROWS
    decay: float = DEFAULT_DECAY
    deposit: float = DEFAULT_DEPOSIT
    theta_rel: float = DEFAULT_THETA_REL
    h_min: float = DEFAULT_H_MIN


@dataclass(frozen=True)
class MemoryParams:
    short_term_size: int = 20
    promote_weight: float = 2.0
    promote_recurrence: int = 3
    drop_weight: float = -2.0
    top_notes: int = 10


@dataclass(frozen=True)
class ProviderSpec:
    kind: str  # "remote" | "mock" | "scripted" | "none"
    base_url: str = ""
    model: str = ""
    api_key_env: str = ""
    table_path: str = ""
    replies_path: str = ""


@dataclass(frozen=True)
class EngineConfig:
    room: RoomBounds
    zones: tuple[Zone, ...] = ()
    actuators: tuple[ActuatorSpec, ...] = ()
    heatgrid: HeatGridParams = HeatGridParams()
    policy: TriggerPolicy = TriggerPolicy()
    memory: MemoryParams = MemoryParams()
    provider: ProviderSpec = ProviderSpec(kind="none")
    colors: tuple[NamedColor, ...] = DEFAULT_COLORS
    initial_commands: tuple[str, ...] = ()
    tick_ms: int = 100
    speech_window_ms: int = 15_000
    staleness_ms: int = 2000
    default_transition_ms: int = 400
    proximity_event_m: float = 2.0
    hash_entity_ids: bool = False
    log_full_prompts: bool = False
    data_dir: Path = Path("stagehand-data")
    host: str = "127.0.0.1"
    port: int = 8620
    console_dir: Path | None = None

    def behavioral_dict(self) -> dict:
        """The hash-relevant core, as canonical JSON-ready data."""
        return {
            "room": [self.room.width, self.room.height],
            "zones": [_zone_to_dict(z) for z in self.zones],
            "actuators": [
                {"id": a.id, "kind": a.kind, "zone": a.zone_id} for a in self.actuators
            ],
            "heatgrid": vars(self.heatgrid).copy(),
            "policy": {
                "query_on": sorted(self.policy.query_on),
                "min_interval_ms": self.policy.min_interval_ms,
                "max_inflight": self.policy.max_inflight,
            },
            "memory": vars(self.memory).copy(),
            "colors": [
                {"name": c.name, "hue_center": c.hue_center, "hue_tolerance": c.hue_tolerance}
                for c in self.colors
            ],
            "initial_commands": list(self.initial_commands),
            "tick_ms": self.tick_ms,
            "speech_window_ms": self.speech_window_ms,
            "staleness_ms": self.staleness_ms,
            "default_transition_ms": self.default_transition_ms,
            "proximity_event_m": self.proximity_event_m,
            "hash_entity_ids": self.hash_entity_ids,
        }

    def config_hash(self) -> str:
        canonical = json.dumps(self.behavioral_dict(), sort_keys=True)
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _zone_to_dict(zone: Zone) -> dict:
    shape = zone.shape
    if isinstance(shape, RectangleShape):
        geo = {"kind": "rectangle", "min": [shape.min.x, shape.min.y],
               "max": [shape.max.x, shape.max.y]}
    else:
        geo = {"kind": "circle", "center": [shape.center.x, shape.center.y],
               "radius": shape.radius}
    return {"id": zone.id, "name": zone.name, "shape": geo}


def _zone_from_dict(obj: dict) -> Zone:
    geo = obj["shape"]
    if geo["kind"] == "rectangle":
        shape = RectangleShape(
            Position(*[float(v) for v in geo["min"]]),
            Position(*[float(v) for v in geo["max"]]),
        )
    elif geo["kind"] == "circle":
        shape = CircleShape(Position(*[float(v) for v in geo["center"]]), float(geo["radius"]))
    else:
        raise ConfigError(f"zone '{obj.get('id')}': unknown shape '{geo.get('kind')}'")
    return Zone(id=obj["id"], name=obj.get("name", obj["id"]), shape=shape)


def config_from_dict(doc: dict, base_dir: Path, check_files: bool = True) -> EngineConfig:
    try:
        room = RoomBounds(float(doc["room"]["width"]), float(doc["room"]["height"]))
    except KeyError as exc:
        raise ConfigError(f"config lacks room bounds: {exc}") from exc

    zones = tuple(_zone_from_dict(z) for z in doc.get("zones", []))
    zone_ids = [z.id for z in zones]
    if len(set(zone_ids)) != len(zone_ids):
        raise ConfigError("duplicate zone ids")

    bindings = {
        b["actuator"]: PhysicalBinding(b["bridge"], b["key"], str(b["physical_id"]))
        for b in doc.get("bindings", [])
    }
    webhooks = {w["actuator"]: w["url"] for w in doc.get("webhooks", [])}

    actuators = []
    for a in doc.get("actuators", []):
        zone_id = a.get("zone")
        if zone_id is not None and zone_id not in zone_ids:
            raise ConfigError(f"actuator '{a['id']}' references unknown zone '{zone_id}'")
        actuators.append(
            ActuatorSpec(
                id=a["id"], kind=a.get("kind", "light"), zone_id=zone_id,
                binding=bindings.get(a["id"]), webhook_url=webhooks.get(a["id"]),
            )
        )
    ids = [a.id for a in actuators]
    if len(set(ids)) != len(ids):
        raise ConfigError("duplicate actuator ids")
    for name in bindings:
        if name not in ids:
            raise ConfigError(f"binding references unknown actuator '{name}'")

    hg = doc.get("heatgrid", {})
    heatgrid = HeatGridParams(
        cols=int(hg.get("cols", DEFAULT_COLS)),
        rows=int(hg.get("rows", DEFAULT_ROWS)),
        decay=float(hg.get("decay", DEFAULT_DECAY)),
        deposit=float(hg.get("deposit", DEFAULT_DEPOSIT)),
        theta_rel=float(hg.get("theta_rel", DEFAULT_THETA_REL)),
        h_min=float(hg.get("h_min", DEFAULT_H_MIN)),
    )

    pol = doc.get("policy", {})
    policy = TriggerPolicy(
        query_on=frozenset(pol.get("query_on", ["speech", "zone_change", "hotspot_emerged"])),
        min_interval_ms=int(pol.get("min_interval_ms", 2000)),
        max_inflight=int(pol.get("max_inflight", 1)),
    )

    mem = doc.get("memory", {})
    memory = MemoryParams(
        short_term_size=int(mem.get("short_term_size", 20)),
        promote_weight=float(mem.get("promote_weight", 2.0)),
        promote_recurrence=int(mem.get("promote_recurrence", 3)),
        drop_weight=float(mem.get("drop_weight", -2.0)),
        top_notes=int(mem.get("top_notes", 10)),
    )

    prov = doc.get("provider", {"kind": "none"})
    kind = prov.get("kind", "none")
    if kind not in ("remote", "mock", "scripted", "none"):
        raise ConfigError(f"unknown provider kind '{kind}'")

    def resolve(rel: str) -> str:
        if not rel:
            return ""
        path = Path(rel)
        if not path.is_absolute():
            path = base_dir / path
        if check_files and not path.exists():
            raise ConfigError(f"provider file '{path}' does not exist")
        return str(path)

    provider = ProviderSpec(
        kind=kind,
        base_url=prov.get("base_url", ""),
        model=prov.get("model", ""),
        api_key_env=prov.get("api_key_env", ""),
        table_path=resolve(prov.get("table", "")),
        replies_path=resolve(prov.get("replies", "")),
    )
    if kind == "remote" and not provider.base_url:
        raise ConfigError("remote provider needs base_url")
    if kind == "mock" and not provider.table_path:
        raise ConfigError("mock provider needs a table file")
    if kind == "scripted" and not provider.replies_path:
        raise ConfigError("scripted provider needs a replies file")

    colors = list(DEFAULT_COLORS)
    for c in doc.get("colors", []):
        colors = [k for k in colors if k.name != c["name"]]
        colors.append(
            NamedColor(c["name"], int(c["hue_center"]), int(c.get("hue_tolerance", 2500)))
        )

    data_dir = Path(doc.get("data_dir", "stagehand-data"))
    if not data_dir.is_absolute():
        data_dir = base_dir / data_dir

    console_dir = doc.get("console_dir")
    if console_dir and not Path(console_dir).is_absolute():
        console_dir = str(base_dir / console_dir)

    config = EngineConfig(
        room=room,
        zones=zones,
        actuators=tuple(actuators),
        heatgrid=heatgrid,
        policy=policy,
        memory=memory,
        provider=provider,
        colors=tuple(colors),
        initial_commands=tuple(doc.get("rules", [])),
        tick_ms=int(doc.get("tick_ms", 100)),
        speech_window_ms=int(doc.get("speech_window_ms", 15_000)),
        staleness_ms=int(doc.get("staleness_ms", 2000)),
        default_transition_ms=int(doc.get("default_transition_ms", 400)),
        proximity_event_m=float(doc.get("proximity_event_m", 2.0)),
        hash_entity_ids=bool(doc.get("hash_entity_ids", False)),
        log_full_prompts=bool(doc.get("log_full_prompts", False)),
        data_dir=data_dir,
        host=doc.get("host", "127.0.0.1"),
        port=int(doc.get("port", 8620)),
        console_dir=Path(console_dir) if console_dir else None,
    )
    _check_waypoints_in_room(config)
    return config


def _check_waypoints_in_room(config: EngineConfig) -> None:
    for zone in config.zones:
        shape = zone.shape
        points = (
            [shape.min, shape.max]
            if isinstance(shape, RectangleShape)
            else [shape.center]
        )
        for p in points:
            if not config.room.contains(p):
                raise ConfigError(f"zone '{zone.id}' extends outside the room bounds")


def load_config(path: str | Path, check_files: bool = True) -> EngineConfig:
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return config_from_dict(doc, path.parent.resolve(), check_files=check_files)


def dump_config(config: EngineConfig) -> dict:
    """Round-trippable config document (written into each session directory)."""
    doc = {
        "room": {"width": config.room.width, "height": config.room.height},
        "zones": [_zone_to_dict(z) for z in config.zones],
        "actuators": [
            {"id": a.id, "kind": a.kind, "zone": a.zone_id} for a in config.actuators
        ],
        "bindings": [
            {"actuator": a.id, "bridge": a.binding.bridge_url,
             "key": a.binding.application_key, "physical_id": a.binding.physical_id}
            for a in config.actuators if a.binding
        ],
        "webhooks": [
            {"actuator": a.id, "url": a.webhook_url}
            for a in config.actuators if a.webhook_url
        ],
        "heatgrid": vars(config.heatgrid).copy(),
        "policy": {
            "query_on": sorted(config.policy.query_on),
            "min_interval_ms": config.policy.min_interval_ms,
            "max_inflight": config.policy.max_inflight,
        },
        "memory": vars(config.memory).copy(),
        "provider": {
            "kind": config.provider.kind,
            "base_url": config.provider.base_url,
            "model": config.provider.model,
            "api_key_env": config.provider.api_key_env,
            "table": config.provider.table_path,
            "replies": config.provider.replies_path,
        },
        "colors": [
            {"name": c.name, "hue_center": c.hue_center, "hue_tolerance": c.hue_tolerance}
            for c in config.colors
        ],
        "rules": list(config.initial_commands),
        "tick_ms": config.tick_ms,
        "speech_window_ms": config.speech_window_ms,
        "staleness_ms": config.staleness_ms,
        "default_transition_ms": config.default_transition_ms,
        "proximity_event_m": config.proximity_event_m,
        "hash_entity_ids": config.hash_entity_ids,
        "log_full_prompts": config.log_full_prompts,
        "data_dir": str(config.data_dir),
        "host": config.host,
        "port": config.port,
    }
    return doc
