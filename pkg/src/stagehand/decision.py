"""The decision path: when to consult the provider, how to compose the
prompt, and how to keep whatever comes back inside the director's constraints.

Provider replies must be a single JSON object:

    {"actions": [{"target": str, "light": {"on": bool, "bri": int, "hue": int,

                  "sat": int, "transition_ms": int}} | {"target": str, "relay": bool}],
     "reasoning": str}

A reply that violates a hard constraint earns exactly one corrective
re-prompt carrying the violation reasons; actions still violating after that
are dropped, never dispatched. Deterministic rules bypass all of this: their
actions go straight to validation.
"""

from __future__ import annotations

import fnmatch
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

from .core import EnvironmentSnapshot, Zone, zone_memberships
from .director import (
    Clamped,
    Constraint,
    LightAction,
    NamedColor,
    ProposedAction,
    RelayAction,
    Valid,
    ValidationResult,
    Violation,
    validate_action,
)
from .memory import DramaturgicalScore, notes_section
from .providers import (
    LanguageModelProvider,
    ProviderTransportError,
    parse_json_reply,
)
from .sessionlog import prompt_hash

EVENT_SPEECH = "speech"
EVENT_ZONE_CHANGE = "zone_change"
EVENT_HOTSPOT = "hotspot_emerged"
EVENT_PROXIMITY = "proximity_change"

_FORMAT_REMINDER = (
    "Format reminder: reply with exactly one JSON object with keys "
    '"actions" and "reasoning" - nothing else.'
)


class ResponseParseError(ValueError):
    def __init__(self, message: str, raw: str):
        super().__init__(message)
        self.raw = raw


@dataclass(frozen=True)
class TriggerPolicy:
    """When the engine is allowed to consult the provider.

    The timing of consultation is isolated here on purpose: it is the main
    experimental knob for live behaviour.
    """

    query_on: frozenset[str] = frozenset({EVENT_SPEECH, EVENT_ZONE_CHANGE, EVENT_HOTSPOT})
    min_interval_ms: int = 2000
    max_inflight: int = 1

    def __post_init__(self) -> None:
        if self.min_interval_ms < 0:
            raise ValueError("min_interval_ms must be >= 0")
        if self.max_inflight < 1:
            raise ValueError("max_inflight must be >= 1")


@dataclass(frozen=True)
class EngineEvent:
    kind: str
    line: str  # one human-readable line, the provider's user message
    t_ms: int
    unattributed: bool = False  # speech with no resolved speaker


@dataclass(frozen=True)
class DecisionResponse:
    actions: tuple[ProposedAction, ...]
    reasoning: str


@dataclass(frozen=True)
class ActionOutcome:
    action: ProposedAction
    result: str  # "valid" | "clamped" | "violation"
    detail: tuple[str, ...] = ()


@dataclass(frozen=True)
class ReasoningTrace:
    """What the director sees per decision: the why, verbatim."""

    exchange_id: str
    event_kind: str
    event_line: str
    prompt_hash: str
    section_hashes: Mapping[str, str]
    raw_reply: str
    reasoning: str
    outcomes: tuple[ActionOutcome, ...]
    dispatched: tuple[ProposedAction, ...]
    corrective_reprompt: bool
    stale: bool
    latency_ms: int
    timestamp: int
    rule_id: str = ""
    provider_error: str = ""
    unattributed_speech: bool = False

    def to_wire(self) -> dict:
        from .director import action_to_wire

        return {
            "exchange": self.exchange_id,
            "event_kind": self.event_kind,
            "event_line": self.event_line,
            "prompt_hash": self.prompt_hash,
            "section_hashes": dict(self.section_hashes),
            "raw_reply": self.raw_reply,
            "reasoning": self.reasoning,
            "outcomes": [
                {"action": action_to_wire(o.action), "result": o.result,
                 "detail": list(o.detail)}
                for o in self.outcomes
            ],
            "dispatched": [action_to_wire(a) for a in self.dispatched],
            "corrective_reprompt": self.corrective_reprompt,
            "stale": self.stale,
            "latency_ms": self.latency_ms,
            "t": self.timestamp,
            "rule_id": self.rule_id,
            "provider_error": self.provider_error,
            "unattributed_speech": self.unattributed_speech,
        }


def compose_prompt(
    score: DramaturgicalScore,
    snapshot: EnvironmentSnapshot,
    zones: Sequence[Zone],
) -> str:
    """Assemble the full instruction the provider sees (byte-deterministic)."""
    from .core import render_environment_section

    return "\n\n".join(
        [
            score.context_section,
            score.rules_section,
            notes_section(score.distilled_notes),
            render_environment_section(snapshot, zones),
        ]
    )


def section_hashes(score: DramaturgicalScore, environment_section: str) -> dict[str, str]:
    return {
        "context": prompt_hash(score.context_section),
        "rules": prompt_hash(score.rules_section),
        "notes": prompt_hash(notes_section(score.distilled_notes)),
        "environment": prompt_hash(environment_section),
    }


def should_query(
    policy: TriggerPolicy,
    event: EngineEvent,
    now_ms: int,
    last_query_ms: int | None,
    inflight: int,
) -> bool:
    if event.kind not in policy.query_on:
        return False
    if inflight >= policy.max_inflight:
        return False
    if last_query_ms is not None and now_ms - last_query_ms < policy.min_interval_ms:
        return False
    return True


def parse_response(raw: str, default_transition_ms: int) -> DecisionResponse:
    """Parse a provider reply against the decision contract.

    Targets stay selector strings here; resolution against configured
    actuators happens in the decision step (it needs the registry).
    """
    obj = parse_json_reply(raw)
    if "actions" not in obj or not isinstance(obj["actions"], list):
        raise ResponseParseError('reply lacks an "actions" list', raw)
    reasoning = obj.get("reasoning")
    if not isinstance(reasoning, str) or not reasoning.strip():
        raise ResponseParseError('reply lacks non-empty "reasoning"', raw)
    actions: list[ProposedAction] = []
    for i, item in enumerate(obj["actions"]):
        if not isinstance(item, dict) or not isinstance(item.get("target"), str):
            raise ResponseParseError(f'action {i} lacks a "target"', raw)
        target = item["target"]
        if "light" in item:
            light = item["light"]
            if not isinstance(light, dict):
                raise ResponseParseError(f'action {i} "light" must be an object', raw)
            try:
                actions.append(
                    LightAction(
                        actuator_id=target,
                        on=bool(light["on"]),
                        bri=int(light["bri"]),
                        hue=int(light["hue"]),
                        sat=int(light["sat"]),
                        transition_ms=int(light.get("transition_ms", default_transition_ms)),
                    )
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise ResponseParseError(f"action {i} light fields invalid: {exc}", raw)
        elif "relay" in item:
            actions.append(RelayAction(actuator_id=target, on=bool(item["relay"])))
        else:
            raise ResponseParseError(f'action {i} needs "light" or "relay"', raw)
    return DecisionResponse(actions=tuple(actions), reasoning=reasoning.strip())


def mark_staleness(
    request_snapshot: EnvironmentSnapshot,
    current_snapshot: EnvironmentSnapshot,
    zones: Sequence[Zone],
) -> bool:
    """True when any entity's zone membership changed while the provider ran."""
    before = zone_memberships(request_snapshot.entities, zones)
    after = zone_memberships(current_snapshot.entities, zones)
    ids = set(before) | set(after)
    return any(before.get(i) != after.get(i) for i in ids)


@dataclass(frozen=True)
class DecisionSettings:
    constraints: tuple[Constraint, ...]
    colors: tuple[NamedColor, ...]
    actuator_ids: tuple[str, ...]
    actuator_kinds: Mapping[str, str]
    default_transition_ms: int = 400


@dataclass
class DecisionOutcome:
    dispatched: list[ProposedAction] = field(default_factory=list)
    outcomes: list[ActionOutcome] = field(default_factory=list)
    raw_reply: str = ""
    reasoning: str = ""
    corrective_reprompt: bool = False
    provider_error: str = ""
    format_retried: bool = False
    # every completion attempt in order, {"ok": raw} or {"err": msg}; replay
    # feeds these back through the same decision path
    completions: list[dict] = field(default_factory=list)


Completer = Callable[[str, str], tuple[str, str]]


def make_completer(provider: LanguageModelProvider) -> Completer:
    """Live completer: one transport retry, provider bugs surfaced as errors."""

    def complete(system: str, user: str) -> tuple[str, str]:
        for attempt in (0, 1):
            try:
                return provider.complete(system, user, "decision"), ""
            except ProviderTransportError as exc:
                if attempt == 1:
                    return "", f"transport: {exc}"
            except Exception as exc:  # scripted exhaustion, table bugs
                return "", f"provider: {exc}"
        raise AssertionError("unreachable")

    return complete


def replay_completer(completions: list[dict]) -> Completer:
    """Replay completer: pops recorded completion outcomes in order."""

    def complete(system: str, user: str) -> tuple[str, str]:
        if not completions:
            return "", "replay: completion log exhausted"
        item = completions.pop(0)
        if "err" in item:
            return "", item["err"]
        return item["ok"], ""

    return complete


def _resolve_targets(
    response: DecisionResponse, settings: DecisionSettings
) -> list[ProposedAction]:
    """Expand selector targets to one proposal per concrete actuator.

    Unknown targets are kept as-is so validation can report them; a provider
    hallucinating an actuator name is a violation, not a crash.
    """
    resolved: list[ProposedAction] = []
    for action in response.actions:
        matched = [
            a for a in settings.actuator_ids
            if fnmatch.fnmatchcase(a, action.actuator_id)
        ]
        if not matched:
            resolved.append(action)
            continue
        for actuator_id in matched:
            if isinstance(action, LightAction):
                resolved.append(
                    LightAction(
                        actuator_id=actuator_id, on=action.on, bri=action.bri,
                        hue=action.hue, sat=action.sat, transition_ms=action.transition_ms,
                    )
                )
            else:
                resolved.append(RelayAction(actuator_id=actuator_id, on=action.on))
    return resolved


def _validate_resolved(
    action: ProposedAction, settings: DecisionSettings
) -> ValidationResult:
    kind = settings.actuator_kinds.get(action.actuator_id)
    if kind is None:
        return Violation(action, (f"unknown actuator '{action.actuator_id}'",))
    if kind == "relay" and isinstance(action, LightAction):
        return Violation(action, (f"'{action.actuator_id}' is a relay, not a light",))
    if kind == "light" and isinstance(action, RelayAction):
        return Violation(action, (f"'{action.actuator_id}' is a light, not a relay",))
    return validate_action(action, settings.constraints, settings.colors)


def _recorded(outcome: DecisionOutcome, completer: Completer) -> Completer:
    def complete(system: str, user: str) -> tuple[str, str]:
        raw, err = completer(system, user)
        outcome.completions.append({"err": err} if err else {"ok": raw})
        return raw, err

    return complete


def _parse_with_reminder(
    completer: Completer,
    system: str,
    user: str,
    raw: str,
    settings: DecisionSettings,
) -> tuple[DecisionResponse | None, str, str, bool]:
    """Returns (response, raw, error, retried)."""
    try:
        return parse_response(raw, settings.default_transition_ms), raw, "", False
    except (ResponseParseError, ValueError):
        retry_raw, err = completer(system, f"{user}\n\n{_FORMAT_REMINDER}")
        if err:
            return None, raw, err, True
        try:
            return parse_response(retry_raw, settings.default_transition_ms), retry_raw, "", True
        except (ResponseParseError, ValueError) as exc:
            return None, retry_raw, f"unparseable reply: {exc}", True


def run_provider_decision(
    completer: Completer,
    system_prompt: str,
    event: EngineEvent,
    settings: DecisionSettings,
) -> DecisionOutcome:
    """Provider consultation, validation, and the single corrective re-prompt.

    Pure with respect to engine state: everything it needs arrives as
    arguments, so it can run off the tick loop.
    """
    outcome = DecisionOutcome()
    completer = _recorded(outcome, completer)
    raw, err = completer(system_prompt, event.line)
    if err:
        outcome.provider_error = err
        return outcome
    response, raw, err, retried = _parse_with_reminder(
        completer, system_prompt, event.line, raw, settings
    )
    outcome.raw_reply = raw
    outcome.format_retried = retried
    if response is None:
        outcome.provider_error = err
        return outcome
    outcome.reasoning = response.reasoning

    results = [_validate_resolved(a, settings) for a in _resolve_targets(response, settings)]
    violations = [r for r in results if isinstance(r, Violation)]

    if violations:
        # exactly one corrective re-prompt carrying the violation reasons;
        # the trace keeps the offending first-round actions as "reprompted"
        outcome.corrective_reprompt = True
        for v in violations:
            outcome.outcomes.append(ActionOutcome(v.action, "reprompted", v.reasons))
        reasons = [reason for v in violations for reason in v.reasons]
        corrective_user = (
            f"{event.line}\n\nYour previous reply violated the directorial "
            "constraints:\n" + "\n".join(f"- {r}" for r in reasons)
            + "\nReply again with actions that respect every constraint."
        )
        raw2, err2 = completer(system_prompt, corrective_user)
        if not err2:
            response2, raw2, err2, _ = _parse_with_reminder(
                completer, system_prompt, corrective_user, raw2, settings
            )
            if response2 is not None:
                outcome.raw_reply = raw2
                outcome.reasoning = response2.reasoning
                results = [
                    _validate_resolved(a, settings)
                    for a in _resolve_targets(response2, settings)
                ]

    for result in results:
        if isinstance(result, Valid):
            outcome.outcomes.append(ActionOutcome(result.action, "valid"))
            outcome.dispatched.append(result.action)
        elif isinstance(result, Clamped):
            outcome.outcomes.append(
                ActionOutcome(result.action, "clamped", result.adjustments)
            )
            outcome.dispatched.append(result.action)
        else:
            # still violating after the re-prompt: dropped, never dispatched
            outcome.outcomes.append(
                ActionOutcome(result.action, "violation", result.reasons)
            )
    return outcome
