"""The authoritative tick loop that owns all engine state.

One loop (10 Hz by default) drains queued inputs, folds sensor messages into
the snapshot, advances the heat field, fires deterministic rules, decides
whether to consult the provider, and publishes frames to console
subscribers. Nothing mutates engine state outside :meth:`Engine.tick`;
producers only enqueue.

Tick timestamps are logical multiples of the tick interval (the serve loop
schedules against the wall clock but stamps logical time), which is what
makes session logs replayable faster than real time.

Provider calls run in one of three modes:

* sync (simulate/replay): completed inline during the tick, fully
  deterministic;
* async (serve): submitted to a small executor, completion re-enters the
  loop as an event, so a slow model never stalls sensing or rules;
* replay: completions come from the recorded log and finalize at the
  recorded tick.
"""

from __future__ import annotations

import fnmatch
import heapq
import itertools
import json
import queue
import time
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

from . import heatgrid as hg
from .actuation import (
    ActuationCommand,
    Actuator,
    PhysicalDispatcher,
    apply_virtual,
    encode_hue_request,
    encode_relay_request,
)
from .config import EngineConfig, dump_config
from .core import (
    EnvironmentSnapshot,
    SpeechEvent,
    advance_snapshot,
    distance,
    render_environment_section,
    zone_contains,
    zone_memberships,
)
from .decision import (
    EVENT_HOTSPOT,
    EVENT_PROXIMITY,
    EVENT_SPEECH,
    EVENT_ZONE_CHANGE,
    ActionOutcome,
    DecisionOutcome,
    DecisionSettings,
    EngineEvent,
    ReasoningTrace,
    compose_prompt,
    make_completer,
    mark_staleness,
    replay_completer,
    run_provider_decision,
    section_hashes,
    should_query,
)
from .director import (
    Clamped,
    CommandContext,
    Constraint,
    DirectorialRule,
    ImmediateAction,
    LightAction,
    LightParams,
    ParsedCommand,
    ProposedAction,
    RelayAction,
    RuleAction,
    SetRelay,
    Valid,
    Violation,
    action_to_wire,
    eval_triggers,
    parse_grammar_command,
    validate_action,
)
from .dramaturgy import (
    DramaturgicalProfile,
    profile_to_dict,
    render_context_section,
)
from .ingest import (
    EntityLost,
    PositionUpdate,
    SensorMessage,
    SpeechTranscript,
    apply_message,
    decode_sensor_message,
    encode_sensor_message,
    hash_entity_id,
)
from .memory import (
    Annotation,
    DramaturgicalScore,
    Exchange,
    RehearsalMemory,
)
from .sessionlog import (
    KIND_ACTION_DISPATCHED,
    KIND_ANNOTATION,
    KIND_COMMAND_APPLIED,
    KIND_FRAMING_APPLIED,
    KIND_PANIC_APPLIED,
    KIND_PHYSICAL_RESULT,
    KIND_PROMPT_COMPOSED,
    KIND_PROVIDER_FAILURE,
    KIND_PROVIDER_REPLY,
    KIND_RULE_FIRED,
    KIND_SCORE_CONSOLIDATED,
    KIND_SENSOR_IN,
    KIND_VIOLATION_DROPPED,
    LogStorageError,
    SessionHeader,
    SessionLogWriter,
    prompt_hash,
)

EVENT_PRIORITY = (EVENT_SPEECH, EVENT_ZONE_CHANGE, EVENT_HOTSPOT, EVENT_PROXIMITY)

NO_FRAMING_CONTEXT = "[DRAMATURGICAL CONTEXT]\n- (no framing given)"

PANIC_LIGHT = LightParams(on=True, bri=254, hue=0, sat=0, transition_ms=0)


class ReplayConfigMismatch(ValueError):
    """Replay requires the identical behavioural config that produced the log."""


@dataclass
class _PendingDecision:
    exchange_id: str
    event: EngineEvent
    prompt: str
    prompt_hash: str
    sections: dict[str, str]
    request_snapshot: EnvironmentSnapshot
    started_at: int


class Engine:
    """Owns the world: snapshot, heat grid, rules, memory, actuators, log."""

    def __init__(
        self,
        config: EngineConfig,
        provider=None,
        *,
        session_id: str | None = None,
        data_dir: Path | None = None,
        sync_providers: bool = True,
        enable_physical: bool = True,
        longterm_seed: list[dict] | None = None,
        score_version_seed: int | None = None,
        replay_source: "ReplaySource | None" = None,
    ):
        self.config = config
        self.provider = provider
        self.zones = config.zones
        self.sync = sync_providers
        self._replay = replay_source
        self.session_id = session_id or time.strftime("s%Y%m%d-%H%M%S")
        self.data_dir = data_dir if data_dir is not None else config.data_dir
        self.session_dir = self.data_dir / "sessions" / self.session_id

        self.now = 0
        self.closed = False
        self.degraded = False
        self.snapshot = EnvironmentSnapshot(version=0, timestamp=0)
        self.grid = hg.HeatGrid(
            cols=config.heatgrid.cols, rows=config.heatgrid.rows,
            bounds=(0.0, 0.0, config.room.width, config.room.height),
            decay=config.heatgrid.decay, deposit=config.heatgrid.deposit,
        )
        self.hotspots: list[hg.Hotspot] = []
        self._prev_spot_cells: frozenset[tuple[int, int]] = frozenset()
        self._prev_close_pairs: frozenset[tuple[str, str]] = frozenset()

        self.actuators: dict[str, Actuator] = {
            spec.id: Actuator(id=spec.id, kind=spec.kind, zone_id=spec.zone_id,
                              binding=spec.binding)
            for spec in config.actuators
        }
        self._webhooks = {spec.id: spec.webhook_url for spec in config.actuators
                          if spec.webhook_url}

        self.rules: list[DirectorialRule] = []
        self.constraints: list[Constraint] = []
        self._rule_counter = itertools.count(1)
        self._rule_last_fired: dict[str, int] = {}
        self._rules_version = 0

        self.profile: DramaturgicalProfile | None = None
        self._sticky_notes: tuple[str, ...] | None = None

        production_path = None if longterm_seed is not None \
            else self.data_dir / "production" / "longterm.ndjson"
        self.memory = RehearsalMemory(
            session_path=self.session_dir / "memory.ndjson",
            production_path=production_path,
            short_term_size=config.memory.short_term_size,
            promote_weight=config.memory.promote_weight,
            promote_recurrence=config.memory.promote_recurrence,
            drop_weight=config.memory.drop_weight,
            top_notes=config.memory.top_notes,
            colors=config.colors,
        )
        if longterm_seed is not None:
            from .memory import LongTermEntry

            for obj in longterm_seed:
                entry = LongTermEntry(
                    id=obj["id"], distilled_note=obj["note"], weight=obj["weight"],
                    recurrence=obj["recurrence"], first_seen=obj["first_seen"],
                    last_seen=obj["last_seen"],
                )
                self.memory.longterm[entry.id] = entry
        if score_version_seed is not None:
            self.memory.score_version = score_version_seed

        self.session_dir.mkdir(parents=True, exist_ok=True)
        with open(self.session_dir / "config.json", "w", encoding="utf-8") as fh:
            json.dump(dump_config(config), fh, indent=2)
        header = SessionHeader(
            session_id=self.session_id,
            config_hash=config.config_hash(),
            score_version=self.memory.score_version,
            tick_ms=config.tick_ms,
            initial_longterm=[
                {"id": e.id, "note": e.distilled_note, "weight": e.weight,
                 "recurrence": e.recurrence, "first_seen": e.first_seen,
                 "last_seen": e.last_seen}
                for e in self.memory.longterm.values()
            ],
        )
        self.log = SessionLogWriter(self.session_dir / "log.ndjson", header)

        self.inbox: queue.Queue = queue.Queue()
        self._exchange_counter = itertools.count(1)
        self._last_query_ms: int | None = None
        self._inflight = 0
        self._scheduled: list = []  # replay finalizations ordered by reply tick
        self._sched_seq = itertools.count()
        self.traces: list[ReasoningTrace] = []
        self._traces_pushed = 0
        self._subscribers: list[queue.Queue] = []

        self._executor: ThreadPoolExecutor | None = None
        if not self.sync:
            self._executor = ThreadPoolExecutor(
                max_workers=max(1, config.policy.max_inflight), thread_name_prefix="provider"
            )

        self.dispatcher: PhysicalDispatcher | None = None
        if enable_physical and (any(a.binding for a in self.actuators.values()) or self._webhooks):
            self.dispatcher = PhysicalDispatcher(self._on_physical_result)
            self.dispatcher.start()

        # test hook: called between the write-ahead log append and the world
        # change, so crash ordering is checkable
        self.before_dispatch_hook = None

        for command in config.initial_commands:
            try:
                parsed = parse_grammar_command(command, self.command_context())
            except Exception as exc:
                self.close()
                from .config import ConfigError

                raise ConfigError(f"initial rule '{command}': {exc}") from exc
            self._install_parsed(parsed, command, log_it=False)

    # --- thread-safe producer API --------------------------------------------

    def command_context(self) -> CommandContext:
        return CommandContext(
            zones=tuple(self.zones),
            actuator_ids=tuple(self.actuators),
            colors=tuple(self.config.colors),
        )

    def submit_sensor(self, msg: SensorMessage) -> None:
        if self.config.hash_entity_ids:
            msg = _pseudonymize(msg)
        self.inbox.put(("sensor", msg))

    def submit_sensor_payload(self, payload: str | bytes) -> None:
        self.submit_sensor(decode_sensor_message(payload))

    def submit_parsed_command(self, parsed: ParsedCommand, text: str) -> Future:
        fut: Future = Future()
        self.inbox.put(("command", parsed, text, fut))
        return fut

    def submit_profile(
        self, profile: DramaturgicalProfile, questions: list | None = None,
        reason: str = "framing",
    ) -> Future:
        fut: Future = Future()
        self.inbox.put(("profile", profile, questions or [], reason, fut))
        return fut

    def submit_annotation(
        self, exchange_id: str, annotation: Annotation, note: str | None = None
    ) -> Future:
        fut: Future = Future()
        self.inbox.put(("annotation", exchange_id, annotation, note, fut))
        return fut

    def request_consolidation_inputs(self) -> Future:
        fut: Future = Future()
        self.inbox.put(("consolidation_inputs", fut))
        return fut

    def submit_score_notes(self, notes: list[str], provider_summarized: bool) -> Future:
        fut: Future = Future()
        self.inbox.put(("apply_score", notes, provider_summarized, fut))
        return fut

    def submit_panic(self) -> Future:
        fut: Future = Future()
        self.inbox.put(("panic", fut))
        return fut

    def subscribe(self) -> queue.Queue:
        q: queue.Queue = queue.Queue(maxsize=256)
        self._subscribers.append(q)
        return q

    def unsubscribe(self, q: queue.Queue) -> None:
        if q in self._subscribers:
            self._subscribers.remove(q)

    # --- the tick ---------------------------------------------------------------

    def tick(self, now_ms: int) -> None:
        if self.closed:
            return
        self.now = now_ms

        while self._scheduled and self._scheduled[0][0] <= now_ms:
            _, _, pending, outcome = heapq.heappop(self._scheduled)
            self._finalize_decision(pending, outcome, now_ms)

        sensor_batch: list[SensorMessage] = []
        while True:
            try:
                item = self.inbox.get_nowait()
            except queue.Empty:
                break
            kind = item[0]
            if kind == "sensor":
                sensor_batch.append(item[1])
            elif kind == "command":
                self._handle_command(item[1], item[2], item[3], now_ms)
            elif kind == "profile":
                self._handle_profile(item[1], item[2], item[3], item[4], now_ms)
            elif kind == "annotation":
                self._handle_annotation(item[1], item[2], item[3], item[4], now_ms)
            elif kind == "consolidation_inputs":
                item[1].set_result(
                    {
                        "profile": self.profile,
                        "rules": tuple(self.rules),
                        "constraints": tuple(self.constraints),
                        "entries": self.memory.top_entries(),
                    }
                )
            elif kind == "apply_score":
                self._handle_apply_score(item[1], item[2], item[3], now_ms)
            elif kind == "provider_done":
                self._inflight -= 1
                self._finalize_decision(item[1], item[2], now_ms)
            elif kind == "physical_result":
                self._log(KIND_PHYSICAL_RESULT, now_ms, {
                    "actuator": item[1], "exchange": item[2], "ok": item[3],
                    "detail": item[4],
                })
            elif kind == "panic":
                self._handle_panic(item[1], now_ms)

        prev = self.snapshot
        new_speech: list[SpeechEvent] = []
        for msg in sensor_batch:
            before = len(self.snapshot.recent_speech)
            self.snapshot = apply_message(
                self.snapshot, msg, now_ms,
                bounds=self.config.room, staleness_ms=self.config.staleness_ms,
            )
            if len(self.snapshot.recent_speech) > before:
                new_speech.append(self.snapshot.recent_speech[-1])
            self._log(KIND_SENSOR_IN, now_ms, {"frame": encode_sensor_message(msg)})

        # evict before depositing so ghosts leave no heat
        live_entities = tuple(
            e for e in self.snapshot.entities
            if now_ms - e.last_seen <= self.config.staleness_ms
        )
        prev_grid = self.grid
        self.grid = hg.tick(self.grid, live_entities)
        spots = [
            replace(s, prev_heat=float(prev_grid.cells[s.cell[1], s.cell[0]]))
            for s in hg.hotspots(self.grid, self.config.heatgrid.theta_rel,
                                 self.config.heatgrid.h_min)
        ]
        self.hotspots = spots
        lights = {
            a.id: a.light_state_at(now_ms)
            for a in self.actuators.values() if a.kind == "light"
        }
        self.snapshot = advance_snapshot(
            self.snapshot, now_ms,
            hotspots=tuple(spots), lights=lights,
            staleness_ms=self.config.staleness_ms,
            speech_window_ms=self.config.speech_window_ms,
        )

        events = self._detect_events(prev, self.snapshot, new_speech, now_ms)
        self._fire_rules(prev, self.snapshot, now_ms)
        if not self.degraded:
            for event in events:
                if should_query(self.config.policy, event, now_ms,
                                self._last_query_ms, self._inflight):
                    self._launch_decision(event, now_ms)
                    break

        self._broadcast("snapshot", self.snapshot_wire())
        self._broadcast("heatgrid", hg.to_wire(self.grid, self.hotspots))
        self._prev_spot_cells = frozenset(s.cell for s in spots)
        self._prev_close_pairs = self._close_pairs(self.snapshot)

    # --- inbox handlers --------------------------------------------------------

    def _handle_command(self, parsed: ParsedCommand, text: str, fut: Future, now: int) -> None:
        try:
            result = self._install_parsed(parsed, text, log_it=True)
            fut.set_result(result)
        except Exception as exc:
            fut.set_exception(exc)

    def _install_parsed(self, parsed: ParsedCommand, text: str, log_it: bool) -> dict:
        if isinstance(parsed, DirectorialRule):
            rule = parsed if parsed.id else replace(parsed, id=f"r{next(self._rule_counter)}")
            self.rules = [*self.rules, rule]
            result: dict = {"kind": "rule", "id": rule.id, "description": rule.description}
            canonical = rule.source_text if _is_grammar(rule.source_text) else ""
            data = {"text": text, "command_kind": "rule", "rule_id": rule.id,
                    "canonical": canonical or text, "description": rule.description}
        elif isinstance(parsed, ImmediateAction):
            result = {"kind": "immediate", "description": parsed.description}
            data = {"text": text, "command_kind": "immediate",
                    "canonical": parsed.source_text if _is_grammar(parsed.source_text) else text,
                    "description": parsed.description}
            if log_it:
                self._log(KIND_COMMAND_APPLIED, self.now, data)
            self._execute_immediate(parsed, self.now)
            self._rules_version += 1
            self._broadcast("rules", self.rules_wire())
            return result
        else:
            self.constraints = [*self.constraints, parsed]
            result = {"kind": "constraint", "description": parsed.describe()}
            canonical = parsed.source_text if _is_grammar(parsed.source_text) else ""
            data = {"text": text, "command_kind": "constraint",
                    "canonical": canonical or text, "description": parsed.describe()}
        self._rules_version += 1
        if log_it:
            self._log(KIND_COMMAND_APPLIED, self.now, data)
        self._broadcast("rules", self.rules_wire())
        return result

    def _handle_profile(self, profile, questions, reason, fut: Future, now: int) -> None:
        self.profile = profile
        self._log(KIND_FRAMING_APPLIED, now, {
            "profile": profile_to_dict(profile),
            "questions": [
                {"id": q.id, "text": q.text, "field": q.field,
                 "options": list(q.options) if q.options else None}
                for q in questions
            ],
            "reason": reason,
        })
        self._broadcast("score", self.score_wire())
        fut.set_result({"profile": profile_to_dict(profile)})

    def _handle_annotation(self, exchange_id, annotation, note, fut: Future, now: int) -> None:
        try:
            self.memory.annotate(exchange_id, annotation, note)
            self.memory.promote()
            self._log(KIND_ANNOTATION, now, {
                "exchange": exchange_id, "annotation": annotation.value, "note": note,
            })
            fut.set_result({"exchange": exchange_id, "annotation": annotation.value})
        except Exception as exc:
            fut.set_exception(exc)

    def _handle_apply_score(self, notes, provider_summarized, fut: Future, now: int) -> None:
        version = self.memory.apply_consolidated(notes, provider_summarized, now)
        self._sticky_notes = tuple(notes)
        self._log(KIND_SCORE_CONSOLIDATED, now, {
            "version": version, "notes": list(notes),
            "provider_summarized": provider_summarized,
        })
        self._broadcast("score", self.score_wire())
        fut.set_result(self.score_wire())

    def _handle_panic(self, fut: Future, now: int) -> None:
        # the dedicated safety path: bypasses constraints by design;
        # logged as an input so replay fires the same override
        self._log(KIND_PANIC_APPLIED, now, {})
        dispatched = []
        exchange_id = f"panic-{next(self._exchange_counter)}"
        for actuator in self.actuators.values():
            if actuator.kind == "relay":
                action: ProposedAction = RelayAction(actuator.id, on=False)
            else:
                action = LightAction(
                    actuator_id=actuator.id, transition_ms=0,
                    on=True, bri=254, hue=0, sat=0,
                )
            self._dispatch(Valid(action), exchange_id, now)
            dispatched.append(action_to_wire(action))
        fut.set_result({"exchange": exchange_id, "dispatched": dispatched})

    # --- event detection ---------------------------------------------------------

    def _close_pairs(self, snapshot: EnvironmentSnapshot) -> frozenset[tuple[str, str]]:
        threshold = self.config.proximity_event_m
        pairs = set()
        entities = sorted(snapshot.entities, key=lambda e: e.id)
        for a, b in itertools.combinations(entities, 2):
            if distance(a.position, b.position) < threshold:
                pairs.add((a.id, b.id))
        return frozenset(pairs)

    def _detect_events(
        self,
        prev: EnvironmentSnapshot,
        cur: EnvironmentSnapshot,
        new_speech: list[SpeechEvent],
        now: int,
    ) -> list[EngineEvent]:
        events: list[EngineEvent] = []
        if new_speech:
            first = new_speech[0]
            events.append(EngineEvent(
                EVENT_SPEECH, f'Event: new speech: "{first.text}"', now,
                unattributed=first.speaker is None,
            ))

        before = zone_memberships(prev.entities, self.zones)
        after = zone_memberships(cur.entities, self.zones)
        parts = []
        for entity_id in sorted(set(before) | set(after)):
            b = before.get(entity_id, frozenset())
            a = after.get(entity_id, frozenset())
            for zone_id in sorted(a - b):
                parts.append(f"{entity_id} entered {zone_id}")
            for zone_id in sorted(b - a):
                parts.append(f"{entity_id} left {zone_id}")
        if parts:
            events.append(
                EngineEvent(EVENT_ZONE_CHANGE, "Event: zone change: " + "; ".join(parts), now)
            )

        new_cells = sorted(frozenset(s.cell for s in cur.hotspots) - self._prev_spot_cells)
        if new_cells:
            spot = next(s for s in cur.hotspots if s.cell == new_cells[0])
            where = f"({spot.world_center.x:.1f}, {spot.world_center.y:.1f})"
            for zone in self.zones:
                if zone_contains(zone, spot.world_center):
                    where = f"the {zone.name}"
                    break
            events.append(EngineEvent(EVENT_HOTSPOT, f"Event: hotspot emerged in {where}", now))

        pairs = self._close_pairs(cur)
        if pairs != self._prev_close_pairs:
            events.append(
                EngineEvent(
                    EVENT_PROXIMITY,
                    f"Event: proximity change: {len(pairs)} close pair(s)", now,
                )
            )

        order = {kind: i for i, kind in enumerate(EVENT_PRIORITY)}
        events.sort(key=lambda e: order[e.kind])
        return events

    # --- rules and dispatch ---------------------------------------------------------

    def _settings(self) -> DecisionSettings:
        return DecisionSettings(
            constraints=tuple(self.constraints),
            colors=tuple(self.config.colors),
            actuator_ids=tuple(self.actuators),
            actuator_kinds={a.id: a.kind for a in self.actuators.values()},
            default_transition_ms=self.config.default_transition_ms,
        )

    def _fire_rules(self, prev: EnvironmentSnapshot, cur: EnvironmentSnapshot, now: int) -> None:
        if self.degraded or not self.rules:
            return
        fired = eval_triggers(self.rules, prev, cur, self.zones)
        for rule_id in fired:
            rule = next(r for r in self.rules if r.id == rule_id)
            last = self._rule_last_fired.get(rule_id)
            if rule.cooldown_ms and last is not None and now - last < rule.cooldown_ms:
                continue
            self._rule_last_fired[rule_id] = now
            exchange_id = f"x{next(self._exchange_counter)}"
            self._log(KIND_RULE_FIRED, now, {"rule": rule_id, "exchange": exchange_id})
            self._run_deterministic_action(rule.action, exchange_id, now, rule_id)

    def _execute_immediate(self, immediate: ImmediateAction, now: int) -> None:
        exchange_id = f"x{next(self._exchange_counter)}"
        self._run_deterministic_action(immediate.action, exchange_id, now, "now")

    def _run_deterministic_action(
        self, action: RuleAction, exchange_id: str, now: int, rule_id: str
    ) -> None:
        settings = self._settings()
        outcomes: list[ActionOutcome] = []
        dispatched: list[ProposedAction] = []
        for actuator_id in fnmatch.filter(self.actuators, action.selector):
            proposal = _to_proposal(action, actuator_id, self.config.default_transition_ms)
            result = validate_action(proposal, settings.constraints, settings.colors)
            if isinstance(result, Violation):
                outcomes.append(ActionOutcome(proposal, "violation", result.reasons))
                self._log(KIND_VIOLATION_DROPPED, now, {
                    "exchange": exchange_id, "reasons": list(result.reasons),
                    "action": action_to_wire(proposal),
                })
            else:
                final = self._dispatch(result, exchange_id, now)
                if final is not None:
                    dispatched.append(final)
                    outcomes.append(ActionOutcome(
                        final,
                        "valid" if isinstance(result, Valid) else "clamped",
                        result.adjustments if isinstance(result, Clamped) else (),
                    ))
        trace = ReasoningTrace(
            exchange_id=exchange_id, event_kind="rule", event_line=rule_id,
            prompt_hash="", section_hashes={}, raw_reply="", reasoning="",
            outcomes=tuple(outcomes), dispatched=tuple(dispatched),
            corrective_reprompt=False, stale=False, latency_ms=0, timestamp=now,
            rule_id=rule_id,
        )
        self._push_trace(trace)
        try:
            self.memory.record_exchange(Exchange(
                id=exchange_id, timestamp=now, prompt_digest="",
                actions=tuple(dispatched), reasoning="", event_kind="rule",
            ))
        except ValueError:
            pass

    def _dispatch(self, result, exchange_id: str, now: int) -> ProposedAction | None:
        """Write-ahead log, then the world: virtual state, then physical send."""
        action = result.action
        try:
            self._log(KIND_ACTION_DISPATCHED, now, {
                "exchange": exchange_id, "action": action_to_wire(action),
            }, critical=True)
        except LogStorageError:
            return None  # degraded: no dispatch without a durable record
        if self.before_dispatch_hook is not None:
            self.before_dispatch_hook()
        cmd = ActuationCommand.from_validated(result, now, exchange_id)
        actuator = self.actuators[action.actuator_id]
        self.actuators[action.actuator_id] = apply_virtual(actuator, cmd, now)
        if self.dispatcher is not None:
            if isinstance(action, LightAction) and actuator.binding is not None:
                request = encode_hue_request(cmd, actuator.binding)
                self.dispatcher.submit(actuator.id, exchange_id, request)
            elif isinstance(action, RelayAction) and actuator.id in self._webhooks:
                request = encode_relay_request(cmd, self._webhooks[actuator.id])
                self.dispatcher.submit(actuator.id, exchange_id, request)
        return action

    def _on_physical_result(self, actuator_id: str, exchange_id: str, ok: bool, detail: str):
        self.inbox.put(("physical_result", actuator_id, exchange_id, ok, detail))

    # --- provider decisions --------------------------------------------------------

    def current_score(self, now: int | None = None) -> DramaturgicalScore:
        from .director import describe_rules_section

        context = (
            NO_FRAMING_CONTEXT if self.profile is None
            else render_context_section(self.profile)
        )
        notes = (
            self._sticky_notes
            if self._sticky_notes is not None
            else tuple(e.distilled_note for e in self.memory.top_entries())
        )
        return DramaturgicalScore(
            version=self.memory.score_version,
            context_section=context,
            rules_section=describe_rules_section(self.rules, self.constraints),
            distilled_notes=notes,
            created_at=self.now if now is None else now,
        )

    def _launch_decision(self, event: EngineEvent, now: int) -> None:
        if self.provider is None and self._replay is None:
            return
        score = self.current_score(now)
        prompt = compose_prompt(score, self.snapshot, self.zones)
        ph = prompt_hash(prompt)
        exchange_id = f"x{next(self._exchange_counter)}"
        env_section = render_environment_section(self.snapshot, self.zones)
        data = {
            "exchange": exchange_id, "prompt_hash": ph,
            "event_kind": event.kind, "event_line": event.line,
            "score_version": score.version,
        }
        if self.config.log_full_prompts:
            data["prompt"] = prompt
        self._log(KIND_PROMPT_COMPOSED, now, data)
        self._last_query_ms = now
        pending = _PendingDecision(
            exchange_id=exchange_id, event=event, prompt=prompt, prompt_hash=ph,
            sections=section_hashes(score, env_section),
            request_snapshot=self.snapshot, started_at=now,
        )
        if self._replay is not None:
            completions = self._replay.completions_for(exchange_id)
            outcome = run_provider_decision(
                replay_completer(completions), prompt, event, self._settings()
            )
            reply_t = self._replay.reply_tick(exchange_id, now)
            if reply_t <= now:
                self._finalize_decision(pending, outcome, now)
            else:
                heapq.heappush(
                    self._scheduled, (reply_t, next(self._sched_seq), pending, outcome)
                )
        elif self.sync:
            outcome = run_provider_decision(
                make_completer(self.provider), prompt, event, self._settings()
            )
            self._finalize_decision(pending, outcome, now)
        else:
            self._inflight += 1
            future = self._executor.submit(
                run_provider_decision, make_completer(self.provider),
                prompt, event, self._settings(),
            )
            future.add_done_callback(
                lambda f, p=pending: self.inbox.put(("provider_done", p, f.result()))
            )

    def _finalize_decision(
        self, pending: _PendingDecision, outcome: DecisionOutcome, now: int
    ) -> None:
        if outcome.provider_error:
            self._log(KIND_PROVIDER_FAILURE, now, {
                "exchange": pending.exchange_id, "error": outcome.provider_error,
                "completions": outcome.completions,
            })
        else:
            self._log(KIND_PROVIDER_REPLY, now, {
                "exchange": pending.exchange_id, "raw": outcome.raw_reply,
                "reasoning": outcome.reasoning, "completions": outcome.completions,
            })
        dispatched: list[ProposedAction] = []
        final_outcomes: list[ActionOutcome] = []
        for action_outcome in outcome.outcomes:
            if action_outcome.result == "reprompted":
                final_outcomes.append(action_outcome)  # corrected, never dispatched
                continue
            if action_outcome.result == "violation":
                self._log(KIND_VIOLATION_DROPPED, now, {
                    "exchange": pending.exchange_id,
                    "reasons": list(action_outcome.detail),
                    "action": action_to_wire(action_outcome.action),
                })
                final_outcomes.append(action_outcome)
                continue
            validated = (
                Valid(action_outcome.action)
                if action_outcome.result == "valid"
                else Clamped(action_outcome.action, action_outcome.detail)
            )
            final = self._dispatch(validated, pending.exchange_id, now)
            if final is not None:
                dispatched.append(final)
                final_outcomes.append(action_outcome)
        stale = mark_staleness(pending.request_snapshot, self.snapshot, self.zones)
        trace = ReasoningTrace(
            exchange_id=pending.exchange_id,
            event_kind=pending.event.kind,
            event_line=pending.event.line,
            prompt_hash=pending.prompt_hash,
            section_hashes=pending.sections,
            raw_reply=outcome.raw_reply,
            reasoning=outcome.reasoning,
            outcomes=tuple(final_outcomes),
            dispatched=tuple(dispatched),
            corrective_reprompt=outcome.corrective_reprompt,
            stale=stale,
            latency_ms=now - pending.started_at,
            timestamp=now,
            provider_error=outcome.provider_error,
            unattributed_speech=pending.event.unattributed,
        )
        self._push_trace(trace)
        if outcome.reasoning:
            try:
                self.memory.record_exchange(Exchange(
                    id=pending.exchange_id, timestamp=now,
                    prompt_digest=pending.prompt_hash,
                    actions=tuple(dispatched), reasoning=outcome.reasoning,
                    event_kind=pending.event.kind,
                ))
            except ValueError:
                pass

    # --- plumbing ---------------------------------------------------------------

    def _log(self, kind: str, t_ms: int, data: dict, critical: bool = False) -> None:
        if self.degraded:
            if critical:
                raise LogStorageError("log storage failed earlier; decisions halted")
            return
        try:
            self.log.append(kind, t_ms, data)
        except LogStorageError:
            self.degraded = True  # halt decisions, keep sensing
            if critical:
                raise

    def _push_trace(self, trace: ReasoningTrace) -> None:
        seq = self._traces_pushed
        self._traces_pushed += 1
        self.traces.append(trace)
        if len(self.traces) > 500:
            self.traces.pop(0)
        self._broadcast("trace", {**trace.to_wire(), "seq": seq})

    def trace_wires(self, last: int = 50) -> list[dict]:
        """Recent traces with their feed sequence numbers."""
        start = self._traces_pushed - len(self.traces)
        wires = [{**t.to_wire(), "seq": start + i} for i, t in enumerate(self.traces)]
        return wires[-last:]

    def _broadcast(self, frame: str, data: dict) -> None:
        message = {"frame": frame, "data": data}
        for q in list(self._subscribers):
            try:
                q.put_nowait(message)
            except queue.Full:
                pass  # slow console: drop, never stall the loop

    def snapshot_wire(self) -> dict:
        s = self.snapshot
        return {
            "version": s.version,
            "t": s.timestamp,
            "entities": [
                {"id": e.id, "kind": e.kind.value, "x": e.position.x, "y": e.position.y,
                 "last_seen": e.last_seen, "label": e.label}
                for e in s.entities
            ],
            "lights": {
                aid: {"on": st.on, "bri": st.bri, "hue": st.hue, "sat": st.sat,
                      "transition_ms": st.transition_ms}
                for aid, st in s.lights.items()
            },
            "relays": {
                a.id: a.relay_on for a in self.actuators.values() if a.kind == "relay"
            },
            "recent_speech": [
                {"text": e.text, "confidence": e.confidence, "t": e.timestamp,
                 "speaker": e.speaker,
                 "x": e.position.x if e.position else None,
                 "y": e.position.y if e.position else None}
                for e in s.recent_speech
            ],
            "hotspots": [
                {"col": h.cell[0], "row": h.cell[1], "heat": h.heat,
                 "x": h.world_center.x, "y": h.world_center.y}
                for h in s.hotspots
            ],
            "degraded": self.degraded,
        }

    def rules_wire(self) -> dict:
        return {
            "version": self._rules_version,
            "constraints": [
                {"description": c.describe(), "source": c.source_text}
                for c in self.constraints
            ],
            "rules": [
                {"id": r.id, "description": r.description, "enabled": r.enabled,
                 "source": r.source_text}
                for r in self.rules
            ],
        }

    def score_wire(self) -> dict:
        score = self.current_score()
        return {
            "version": score.version,
            "context_section": score.context_section,
            "rules_section": score.rules_section,
            "distilled_notes": list(score.distilled_notes),
            "profile": profile_to_dict(self.profile) if self.profile else None,
        }

    def zones_wire(self) -> list[dict]:
        from .config import _zone_to_dict

        return [_zone_to_dict(z) for z in self.zones]

    def actuators_wire(self) -> list[dict]:
        return [
            {"id": a.id, "kind": a.kind, "zone": a.zone_id, "bound": a.binding is not None}
            for a in self.actuators.values()
        ]

    def close(self) -> None:
        if self.closed:
            return
        self.closed = True
        try:
            self.log.close(self.now)
        except LogStorageError:
            pass
        if self.dispatcher is not None:
            self.dispatcher.stop()
        if self._executor is not None:
            self._executor.shutdown(wait=False)


def _is_grammar(text: str) -> bool:
    stripped = text.strip()
    return stripped.startswith(("when ", "constraint ", "now "))


def _to_proposal(
    action: RuleAction, actuator_id: str, default_transition_ms: int
) -> ProposedAction:
    if isinstance(action, SetRelay):
        return RelayAction(actuator_id=actuator_id, on=action.on)
    p: LightParams = action.params
    return LightAction(
        actuator_id=actuator_id,
        transition_ms=p.transition_ms if p.transition_ms is not None else default_transition_ms,
        on=p.on, bri=p.bri, hue=p.hue, sat=p.sat,
    )


def _pseudonymize(msg: SensorMessage) -> SensorMessage:
    if isinstance(msg, PositionUpdate):
        return replace(msg, entity_id=hash_entity_id(msg.entity_id))
    if isinstance(msg, SpeechTranscript) and msg.speaker is not None:
        return replace(msg, speaker=hash_entity_id(msg.speaker))
    if isinstance(msg, EntityLost):
        return replace(msg, entity_id=hash_entity_id(msg.entity_id))
    return msg
