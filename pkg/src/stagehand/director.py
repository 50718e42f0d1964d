"""The directorial layer: precise commands compiled to rules and constraints.

Commands arrive either in the structured mini-grammar (compiled directly,
never touching the language model) or as free text, which the provider
translates into one grammar-form command string before compilation:

    command     := rule | constraint | immediate
    rule        := "when" trigger "then" action
    trigger     := "enter(" id ")" | "exit(" id ")" | "proximity(<" NUM unit "," INT ")"
                 | "speech(" id ")" | "speech(any)" | "hotspot(" [id] ")"
    action      := "light(" selector "," params ")" | "relay(" selector "," ("on"|"off") ")"
    constraint  := "constraint" ("palette(" name {"," name} ")" | "transition >=" NUM unit
                 | "intensity <=" (INT | NUM "%") | "modality(" name ")")
    immediate   := "now" action
    params      := param {"," param}   param := ("bri"|"hue"|"sat"|"on"|"transition") "=" value

As sugar, a light params list may use bare ``on``/``off``, and ``bri`` accepts
percentages of the 0..254 scale (``bri=30%`` compiles to 76).

Rules are edge-triggered: a rule fires only when its condition flips from
false to true between two consecutive snapshots. Proximity uses strict ``<``
("within two metres" fires below 2.0 m, not at it).
"""

from __future__ import annotations

import fnmatch
import itertools
import re
from dataclasses import dataclass, replace
from typing import TYPE_CHECKING, Sequence

from .core import (
    EnvironmentSnapshot,
    Modality,
    Zone,
    distance,
    zone_contains,
)

if TYPE_CHECKING:
    from .providers import LanguageModelProvider

RELAY_MODALITY = Modality.MOTION  # a fan moves air; relays count as motion


class CommandError(ValueError):
    """Command could not be understood; carries every diagnostic gathered."""


class GrammarParseError(CommandError):
    pass


class ReferenceError_(CommandError):
    """Command names a zone or actuator that is not configured."""


# --- triggers -----------------------------------------------------------------


@dataclass(frozen=True)
class ZoneEntry:
    zone_id: str


@dataclass(frozen=True)
class ZoneExit:
    zone_id: str


@dataclass(frozen=True)
class ProximityBelow:
    threshold_m: float
    count: int

    def __post_init__(self) -> None:
        if self.threshold_m <= 0:
            raise ValueError("proximity threshold must be > 0")
        if self.count < 2:
            raise ValueError("proximity count must be >= 2")


@dataclass(frozen=True)
class SpeechInZone:
    zone_id: str


@dataclass(frozen=True)
class AnySpeech:
    pass


@dataclass(frozen=True)
class HotspotEmerged:
    zone_id: str | None = None


Trigger = ZoneEntry | ZoneExit | ProximityBelow | SpeechInZone | AnySpeech | HotspotEmerged


# --- actions and commands ------------------------------------------------------


@dataclass(frozen=True)
class LightParams:
    """A partial light target; ``None`` fields leave the current value alone."""

    on: bool | None = None
    bri: int | None = None
    hue: int | None = None
    sat: int | None = None
    transition_ms: int | None = None


@dataclass(frozen=True)
class SetLight:
    selector: str
    params: LightParams


@dataclass(frozen=True)
class SetRelay:
    selector: str
    on: bool


RuleAction = SetLight | SetRelay


@dataclass(frozen=True)
class DirectorialRule:
    id: str
    trigger: Trigger
    action: RuleAction
    enabled: bool = True
    cooldown_ms: int = 0  # trackers jitter across thresholds; 0 = every edge
    description: str = ""
    source_text: str = ""


@dataclass(frozen=True)
class ImmediateAction:
    action: RuleAction
    description: str = ""
    source_text: str = ""


# --- constraints ---------------------------------------------------------------


@dataclass(frozen=True)
class NamedColor:
    """A color name operationalized as a wraparound hue interval."""

    name: str
    hue_center: int
    hue_tolerance: int = 2500

    def __post_init__(self) -> None:
        if not (0 <= self.hue_center <= 65535):
            raise ValueError("hue_center outside 0..65535")
        if not (0 <= self.hue_tolerance <= 32767):
            raise ValueError("hue_tolerance outside 0..32767")

    def contains_hue(self, hue: int) -> bool:
        d = abs(hue - self.hue_center) % 65536
        return min(d, 65536 - d) <= self.hue_tolerance


# Conventional anchors on the 0..65535 hue circle.
DEFAULT_COLORS = (
    NamedColor("red", 0),
    NamedColor("green", 25500),
    NamedColor("blue", 46920),
)


@dataclass(frozen=True)
class Palette:
    allowed: tuple[str, ...]
    description: str = ""
    source_text: str = ""

    def __post_init__(self) -> None:
        if not self.allowed:
            raise ValueError("palette must allow at least one color")

    def describe(self) -> str:
        return self.description or f"Use only {_and_join(self.allowed)} light."


@dataclass(frozen=True)
class MinTransition:
    ms: int
    description: str = ""
    source_text: str = ""

    def __post_init__(self) -> None:
        if self.ms <= 0:
            raise ValueError("minimum transition must be > 0 ms")

    def describe(self) -> str:
        return self.description or \
            f"Make all transitions last at least {_duration_phrase(self.ms)}."


@dataclass(frozen=True)
class MaxIntensity:
    bri: int
    description: str = ""
    source_text: str = ""

    def __post_init__(self) -> None:
        if not (0 <= self.bri <= 254):
            raise ValueError("intensity cap outside 0..254")

    def describe(self) -> str:
        return self.description or f"Keep light intensity at or below {self.bri} of 254."


@dataclass(frozen=True)
class ModalityOnly:
    modality: Modality
    description: str = ""
    source_text: str = ""

    def describe(self) -> str:
        return self.description or f"Respond only through {self.modality.value}."


Constraint = Palette | MinTransition | MaxIntensity | ModalityOnly

ParsedCommand = DirectorialRule | Constraint | ImmediateAction


def _and_join(names: Sequence[str]) -> str:
    if len(names) == 1:
        return names[0]
    return ", ".join(names[:-1]) + " and " + names[-1]


def _duration_phrase(ms: int) -> str:
    if ms % 1000 == 0:
        seconds = ms // 1000
        return f"{seconds} second{'' if seconds == 1 else 's'}"
    return f"{ms} milliseconds"


def _number(value: float) -> str:
    return str(int(value)) if float(value).is_integer() else str(value)


# --- compile context -----------------------------------------------------------


@dataclass(frozen=True)
class CommandContext:
    """What compilation must know: configured zones, actuators, colors."""

    zones: tuple[Zone, ...]
    actuator_ids: tuple[str, ...]
    colors: tuple[NamedColor, ...] = DEFAULT_COLORS

    def zone(self, zone_id: str) -> Zone:
        for z in self.zones:
            if z.id == zone_id:
                return z
        raise ReferenceError_(f"unknown zone '{zone_id}'")

    def match_selector(self, selector: str) -> tuple[str, ...]:
        matched = tuple(a for a in self.actuator_ids if fnmatch.fnmatchcase(a, selector))
        if not matched:
            raise ReferenceError_(f"selector '{selector}' matches no configured actuator")
        return matched

    def color(self, name: str) -> NamedColor:
        for c in self.colors:
            if c.name == name:
                return c
        raise ReferenceError_(f"unknown color '{name}'")


# --- grammar parsing -----------------------------------------------------------

_TRIGGER_RES = {
    "enter": re.compile(r"enter\(\s*([\w.-]+)\s*\)$"),
    "exit": re.compile(r"exit\(\s*([\w.-]+)\s*\)$"),
    "proximity": re.compile(r"proximity\(\s*<\s*(\d+(?:\.\d+)?)\s*m?\s*,\s*(\d+)\s*\)$"),
    "speech": re.compile(r"speech\(\s*([\w.-]+|any)\s*\)$"),
    "hotspot": re.compile(r"hotspot\(\s*([\w.-]*)\s*\)$"),
}

_ACTION_RE = re.compile(r"(light|relay)\(\s*([\w.*?\[\]-]+)\s*,\s*(.+)\)$")
_PALETTE_RE = re.compile(r"palette\(\s*([\w\s,-]+)\)$")
_TRANSITION_RE = re.compile(r"transition\s*>=\s*(\d+(?:\.\d+)?)\s*(ms|s)$")
_INTENSITY_RE = re.compile(r"intensity\s*<=\s*(\d+(?:\.\d+)?)\s*(%?)$")
_MODALITY_RE = re.compile(r"modality\(\s*(\w+)\s*\)$")


def _pct_to_bri(pct: float) -> int:
    # round half up onto the actuator's native 0..254 scale
    return int(pct / 100.0 * 254 + 0.5)


def _parse_trigger(text: str, ctx: CommandContext) -> Trigger:
    text = text.strip()
    if m := _TRIGGER_RES["enter"].match(text):
        return ZoneEntry(ctx.zone(m.group(1)).id)
    if m := _TRIGGER_RES["exit"].match(text):
        return ZoneExit(ctx.zone(m.group(1)).id)
    if m := _TRIGGER_RES["proximity"].match(text):
        return ProximityBelow(float(m.group(1)), int(m.group(2)))
    if m := _TRIGGER_RES["speech"].match(text):
        target = m.group(1)
        if target == "any":
            return AnySpeech()
        return SpeechInZone(ctx.zone(target).id)
    if m := _TRIGGER_RES["hotspot"].match(text):
        zone_id = m.group(1)
        return HotspotEmerged(ctx.zone(zone_id).id if zone_id else None)
    raise GrammarParseError(f"cannot parse trigger '{text}'")


def _parse_light_params(raw: str) -> LightParams:
    params = LightParams()
    for piece in (p.strip() for p in raw.split(",")):
        if not piece:
            raise GrammarParseError("empty light parameter")
        if piece in ("on", "off"):
            params = replace(params, on=piece == "on")
            continue
        if "=" not in piece:
            raise GrammarParseError(f"cannot parse light parameter '{piece}'")
        key, value = (s.strip() for s in piece.split("=", 1))
        if key == "on":
            if value.lower() not in ("true", "false", "on", "off", "1", "0"):
                raise GrammarParseError(f"bad boolean '{value}' for on=")
            params = replace(params, on=value.lower() in ("true", "on", "1"))
        elif key == "bri":
            if value.endswith("%"):
                params = replace(params, bri=_pct_to_bri(float(value[:-1])))
            else:
                params = replace(params, bri=int(value))
        elif key == "hue":
            params = replace(params, hue=int(value))
        elif key == "sat":
            params = replace(params, sat=int(value))
        elif key == "transition":
            if value.endswith("ms"):
                params = replace(params, transition_ms=int(value[:-2]))
            elif value.endswith("s"):
                params = replace(params, transition_ms=int(float(value[:-1]) * 1000))
            else:
                params = replace(params, transition_ms=int(value))
        else:
            raise GrammarParseError(f"unknown light parameter '{key}'")
    return params


def _parse_action(text: str, ctx: CommandContext) -> RuleAction:
    m = _ACTION_RE.match(text.strip())
    if not m:
        raise GrammarParseError(f"cannot parse action '{text.strip()}'")
    kind, selector, rest = m.group(1), m.group(2), m.group(3).strip()
    ctx.match_selector(selector)
    if kind == "relay":
        if rest not in ("on", "off"):
            raise GrammarParseError(f"relay wants on|off, got '{rest}'")
        return SetRelay(selector, rest == "on")
    params = _parse_light_params(rest)
    if params == LightParams():
        raise GrammarParseError("light action needs at least one parameter")
    return SetLight(selector, params)


def _parse_constraint(text: str, ctx: CommandContext) -> Constraint:
    body = text.strip()
    if m := _PALETTE_RE.match(body):
        names = tuple(n.strip() for n in m.group(1).split(",") if n.strip())
        for name in names:
            ctx.color(name)
        return Palette(names)
    if m := _TRANSITION_RE.match(body):
        value, unit = float(m.group(1)), m.group(2)
        return MinTransition(int(value if unit == "ms" else value * 1000))
    if m := _INTENSITY_RE.match(body):
        value, pct = float(m.group(1)), m.group(2) == "%"
        return MaxIntensity(_pct_to_bri(value) if pct else int(value))
    if m := _MODALITY_RE.match(body):
        try:
            return ModalityOnly(Modality(m.group(1)))
        except ValueError:
            raise GrammarParseError(f"unknown modality '{m.group(1)}'")
    raise GrammarParseError(f"cannot parse constraint '{body}'")


def trigger_description(trigger: Trigger, ctx: CommandContext) -> str:
    if isinstance(trigger, ZoneEntry):
        return f"someone enters the {ctx.zone(trigger.zone_id).name}"
    if isinstance(trigger, ZoneExit):
        return f"the {ctx.zone(trigger.zone_id).name} empties"
    if isinstance(trigger, ProximityBelow):
        return (
            f"{trigger.count} participants stand within "
            f"{_number(trigger.threshold_m)} metres of each other"
        )
    if isinstance(trigger, SpeechInZone):
        return f"someone speaks near the {ctx.zone(trigger.zone_id).name}"
    if isinstance(trigger, AnySpeech):
        return "someone speaks"
    if trigger.zone_id:
        return f"activity concentrates in the {ctx.zone(trigger.zone_id).name}"
    return "a hotspot emerges"


def action_description(action: RuleAction) -> str:
    if isinstance(action, SetRelay):
        return f"switch {action.selector} {'on' if action.on else 'off'}"
    p = action.params
    if p == LightParams(on=True):
        return f"turn {action.selector} on"
    if p == LightParams(on=False):
        return f"turn {action.selector} off"
    parts = []
    if p.on is not None:
        parts.append("on" if p.on else "off")
    for key in ("bri", "hue", "sat"):
        value = getattr(p, key)
        if value is not None:
            parts.append(f"{key} {value}")
    if p.transition_ms is not None:
        parts.append(f"over {_duration_phrase(p.transition_ms)}")
    return f"set {action.selector} to {', '.join(parts)}"


def parse_grammar_command(
    text: str, ctx: CommandContext, rule_id: str = ""
) -> ParsedCommand:
    """Compile a grammar-form command; raises GrammarParseError otherwise."""
    stripped = text.strip()
    if stripped.startswith("when "):
        m = re.match(r"when\s+(.+?)\s+then\s+(.+)$", stripped)
        if not m:
            raise GrammarParseError("rule wants 'when <trigger> then <action>'")
        trigger = _parse_trigger(m.group(1), ctx)
        action = _parse_action(m.group(2), ctx)
        description = f"When {trigger_description(trigger, ctx)}, {action_description(action)}."
        return DirectorialRule(
            id=rule_id, trigger=trigger, action=action,
            description=description, source_text=text,
        )
    if stripped.startswith("constraint "):
        constraint = _parse_constraint(stripped[len("constraint "):], ctx)
        return replace(constraint, source_text=text)
    if stripped.startswith("now "):
        action = _parse_action(stripped[len("now "):], ctx)
        return ImmediateAction(
            action=action,
            description=f"Immediately {action_description(action)}.",
            source_text=text,
        )
    raise GrammarParseError(
        "command must start with 'when', 'constraint' or 'now'"
    )


def parse_command(
    text: str,
    provider: "LanguageModelProvider | None",
    ctx: CommandContext,
    rule_id: str = "",
) -> ParsedCommand:
    """Compile a director command, falling back to provider translation.

    Grammar-form commands never touch the provider, so deterministic rules
    survive a dead model. Reference errors (unknown zone/actuator) surface
    as-is in both paths.
    """
    if not text.strip():
        raise CommandError("empty command")
    try:
        return parse_grammar_command(text, ctx, rule_id)
    except ReferenceError_:
        raise
    except GrammarParseError as grammar_err:
        if provider is None:
            raise CommandError(
                f"grammar: {grammar_err}; no provider configured for free-text commands"
            ) from grammar_err
        from .prompts import command_translation_prompt

        try:
            reply = provider.complete(*command_translation_prompt(text, ctx), contract="command")
            translated = reply.strip().strip("`")
            parsed = parse_grammar_command(translated, ctx, rule_id)
        except ReferenceError_:
            raise
        except Exception as provider_err:
            raise CommandError(
                f"grammar: {grammar_err}; provider: {provider_err}"
            ) from provider_err
        # free-text commands keep the director's own words in the score
        return replace(parsed, source_text=text, description=text.strip())


# --- trigger evaluation ----------------------------------------------------------


def _proximity_holds(snapshot: EnvironmentSnapshot, trigger: ProximityBelow) -> bool:
    entities = snapshot.entities
    if len(entities) < trigger.count:
        return False
    # pairwise-close groups are cliques in the proximity graph; counts stay
    # desk-scale so combinations are fine
    for group in itertools.combinations(entities, trigger.count):
        if all(
            distance(a.position, b.position) < trigger.threshold_m
            for a, b in itertools.combinations(group, 2)
        ):
            return True
    return False


def trigger_condition(
    trigger: Trigger, snapshot: EnvironmentSnapshot, zones: Sequence[Zone]
) -> bool:
    """Evaluate a trigger's condition as a pure predicate of one snapshot."""

    def zone_by_id(zone_id: str) -> Zone:
        for z in zones:
            if z.id == zone_id:
                return z
        raise ReferenceError_(f"unknown zone '{zone_id}'")

    if isinstance(trigger, ZoneEntry):
        z = zone_by_id(trigger.zone_id)
        return any(zone_contains(z, e.position) for e in snapshot.entities)
    if isinstance(trigger, ZoneExit):
        z = zone_by_id(trigger.zone_id)
        return not any(zone_contains(z, e.position) for e in snapshot.entities)
    if isinstance(trigger, ProximityBelow):
        return _proximity_holds(snapshot, trigger)
    if isinstance(trigger, SpeechInZone):
        z = zone_by_id(trigger.zone_id)
        return any(
            e.timestamp == snapshot.timestamp and e.position is not None
            and zone_contains(z, e.position)
            for e in snapshot.recent_speech
        )
    if isinstance(trigger, AnySpeech):
        return any(e.timestamp == snapshot.timestamp for e in snapshot.recent_speech)
    if isinstance(trigger, HotspotEmerged):
        if trigger.zone_id is None:
            return bool(snapshot.hotspots)
        z = zone_by_id(trigger.zone_id)
        return any(zone_contains(z, h.world_center) for h in snapshot.hotspots)
    raise TypeError(f"unknown trigger {trigger!r}")  # pragma: no cover


def eval_triggers(
    rules: Sequence[DirectorialRule],
    prev: EnvironmentSnapshot,
    cur: EnvironmentSnapshot,
    zones: Sequence[Zone],
) -> list[str]:
    """Ids of rules whose condition flipped false -> true, declaration order."""
    if prev.version >= cur.version:
        raise ValueError("eval_triggers wants prev.version < cur.version")
    fired = []
    for rule in rules:
        if not rule.enabled:
            continue
        if not trigger_condition(rule.trigger, prev, zones) and trigger_condition(
            rule.trigger, cur, zones
        ):
            fired.append(rule.id)
    return fired


# --- action validation ------------------------------------------------------------


@dataclass(frozen=True)
class LightAction:
    """A concrete, single-actuator light proposal ready for validation.

    ``transition_ms`` is always concrete here (selector defaults applied
    upstream); the other fields may be None, meaning "leave unchanged".
    """

    actuator_id: str
    transition_ms: int
    on: bool | None = None
    bri: int | None = None
    hue: int | None = None
    sat: int | None = None


@dataclass(frozen=True)
class RelayAction:
    actuator_id: str
    on: bool


ProposedAction = LightAction | RelayAction


@dataclass(frozen=True)
class Valid:
    action: ProposedAction


@dataclass(frozen=True)
class Clamped:
    action: ProposedAction
    adjustments: tuple[str, ...]


@dataclass(frozen=True)
class Violation:
    action: ProposedAction
    reasons: tuple[str, ...]


ValidationResult = Valid | Clamped | Violation


def validate_action(
    action: ProposedAction,
    constraints: Sequence[Constraint],
    colors: Sequence[NamedColor] = DEFAULT_COLORS,
) -> ValidationResult:
    """Check one proposal against the active constraints.

    Duration and intensity breaches are clamped (intent preserved); palette
    and modality breaches are violations (substitution would change meaning).
    Idempotent: validating a clamped result is Valid.
    """
    reasons: list[str] = []
    adjustments: list[str] = []
    adjusted = action

    for constraint in constraints:
        if isinstance(constraint, ModalityOnly):
            modality = Modality.LIGHT if isinstance(action, LightAction) else RELAY_MODALITY
            if modality is not constraint.modality:
                reasons.append(
                    f"{modality.value} action blocked: only {constraint.modality.value} allowed"
                )
        if not isinstance(adjusted, LightAction):
            continue
        if isinstance(constraint, MinTransition) and adjusted.transition_ms < constraint.ms:
            adjustments.append(
                f"transition raised from {adjusted.transition_ms} ms to {constraint.ms} ms"
            )
            adjusted = replace(adjusted, transition_ms=constraint.ms)
        elif isinstance(constraint, MaxIntensity) and adjusted.bri is not None \
                and adjusted.bri > constraint.bri:
            adjustments.append(f"bri lowered from {adjusted.bri} to {constraint.bri}")
            adjusted = replace(adjusted, bri=constraint.bri)
        elif isinstance(constraint, Palette) and adjusted.hue is not None:
            allowed = [c for c in colors if c.name in constraint.allowed]
            if not any(c.contains_hue(adjusted.hue) for c in allowed):
                reasons.append(
                    f"hue {adjusted.hue} outside the allowed palette "
                    f"({_and_join(constraint.allowed)})"
                )

    if reasons:
        return Violation(action, tuple(reasons))
    if adjustments:
        return Clamped(adjusted, tuple(adjustments))
    return Valid(action)


def action_to_wire(action: ProposedAction) -> dict:
    if isinstance(action, LightAction):
        return {
            "kind": "light", "actuator": action.actuator_id, "on": action.on,
            "bri": action.bri, "hue": action.hue, "sat": action.sat,
            "transition_ms": action.transition_ms,
        }
    return {"kind": "relay", "actuator": action.actuator_id, "on": action.on}


def action_from_wire(obj: dict) -> ProposedAction:
    if obj["kind"] == "light":
        return LightAction(
            actuator_id=obj["actuator"], transition_ms=obj["transition_ms"],
            on=obj["on"], bri=obj["bri"], hue=obj["hue"], sat=obj["sat"],
        )
    return RelayAction(actuator_id=obj["actuator"], on=obj["on"])


def describe_rules_section(
    rules: Sequence[DirectorialRule], constraints: Sequence[Constraint]
) -> str:
    """Render the directorial block of the composed prompt (deterministic)."""
    lines = ["[DIRECTORIAL RULES]"]
    for constraint in constraints:
        lines.append(f"- {constraint.describe()}")
    for rule in rules:
        lines.append(f"- {rule.description}" if rule.description else f"- rule {rule.id}")
    if len(lines) == 1:
        lines.append("- (none)")
    return "\n".join(lines)
