"""Rehearsal memory: a short-term exchange ring, weighted long-term notes,
and consolidation into the score prompt.

A recurring pattern is identified by a deliberately simple key: the kind of
event that triggered an exchange, the kind of action it produced, and the
palette bucket of that action's color. Director annotations move weight onto
these patterns (+1 worked, -1 needs adjustment); patterns that accumulate
enough weight or recur often enough get distilled into long-term entries,
and strongly negative ones are dropped.

Persistence is newline-delimited JSON: one append-only file per session and
a compacted per-production store, so memory survives restarts.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Sequence

from .director import (
    Constraint,
    DirectorialRule,
    LightAction,
    NamedColor,
    ProposedAction,
    action_to_wire,
    describe_rules_section,
)
from .dramaturgy import DramaturgicalProfile, render_context_section
from .prompts import summarize_prompt
from .providers import LanguageModelProvider, parse_json_reply

DEFAULT_SHORT_TERM_SIZE = 20
DEFAULT_PROMOTE_WEIGHT = 2.0
DEFAULT_PROMOTE_RECURRENCE = 3
DEFAULT_DROP_WEIGHT = -2.0
DEFAULT_TOP_NOTES = 10
PROMOTION_BUFFER_SIZE = 500

NO_NOTES_SENTINEL = "- (no distilled notes)"


class Annotation(str, Enum):
    NONE = "none"
    WORKED = "worked"
    NEEDS_ADJUSTMENT = "needs_adjustment"


ANNOTATION_WEIGHTS = {
    Annotation.NONE: 0.0,
    Annotation.WORKED: 1.0,
    Annotation.NEEDS_ADJUSTMENT: -1.0,
}


@dataclass(frozen=True)
class Exchange:
    """One decision the engine made, provider-backed or rule-fired."""

    id: str
    timestamp: int
    prompt_digest: str
    actions: tuple[ProposedAction, ...]
    reasoning: str
    event_kind: str = ""
    annotation: Annotation = Annotation.NONE
    note: str | None = None

    def __post_init__(self) -> None:
        if not self.reasoning and self.prompt_digest:
            raise ValueError("provider-backed exchanges must carry reasoning")


@dataclass(frozen=True)
class LongTermEntry:
    id: str
    distilled_note: str
    weight: float
    recurrence: int
    first_seen: int
    last_seen: int


@dataclass(frozen=True)
class DramaturgicalScore:
    """The consolidated prompt: context, rules, and distilled notes."""

    version: int
    context_section: str
    rules_section: str
    distilled_notes: tuple[str, ...]
    created_at: int
    provider_summarized: bool = False


@dataclass
class _Candidate:
    pattern: str
    distilled_note: str
    weight: float = 0.0
    recurrence: int = 0
    first_seen: int = 0
    last_seen: int = 0


def palette_bucket(action: ProposedAction, colors: Sequence[NamedColor]) -> str:
    if not isinstance(action, LightAction):
        return "relay"
    if action.hue is None:
        return "nohue"
    for color in colors:
        if color.contains_hue(action.hue):
            return color.name
    return "other"


def pattern_key(exchange: Exchange, colors: Sequence[NamedColor]) -> str:
    """Identity of a recurring pattern: (event kind, action kind, palette)."""
    if not exchange.actions:
        action_kind, bucket = "hold", "none"
    else:
        first = exchange.actions[0]
        action_kind = "light" if isinstance(first, LightAction) else "relay"
        bucket = palette_bucket(first, colors)
    return f"{exchange.event_kind or 'unsolicited'}/{action_kind}/{bucket}"


class RehearsalMemory:
    """Single-writer memory store; the engine applies mutations serially."""

    def __init__(
        self,
        session_path: Path | None = None,
        production_path: Path | None = None,
        *,
        short_term_size: int = DEFAULT_SHORT_TERM_SIZE,
        promote_weight: float = DEFAULT_PROMOTE_WEIGHT,
        promote_recurrence: int = DEFAULT_PROMOTE_RECURRENCE,
        drop_weight: float = DEFAULT_DROP_WEIGHT,
        top_notes: int = DEFAULT_TOP_NOTES,
        colors: Sequence[NamedColor] = (),
    ):
        self.short_term_size = short_term_size
        self.promote_weight = promote_weight
        self.promote_recurrence = promote_recurrence
        self.drop_weight = drop_weight
        self.top_notes = top_notes
        self.colors = tuple(colors)
        self.ring: list[Exchange] = []
        self.promotion_buffer: list[Exchange] = []
        self.candidates: dict[str, _Candidate] = {}
        self.longterm: dict[str, LongTermEntry] = {}
        self.dropped: list[str] = []
        self.score_version = 0
        self._session_path = session_path
        self._production_path = production_path
        if production_path is not None and production_path.exists():
            self._load_production(production_path)

    # --- persistence ---------------------------------------------------------

    def _append_session(self, record: dict) -> None:
        if self._session_path is None:
            return
        self._session_path.parent.mkdir(parents=True, exist_ok=True)
        with open(self._session_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(record) + "\n")

    def _load_production(self, path: Path) -> None:
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                obj = json.loads(line)
                if obj.get("record") == "longterm":
                    entry = LongTermEntry(
                        id=obj["id"],
                        distilled_note=obj["note"],
                        weight=obj["weight"],
                        recurrence=obj["recurrence"],
                        first_seen=obj["first_seen"],
                        last_seen=obj["last_seen"],
                    )
                    self.longterm[entry.id] = entry
                elif obj.get("record") == "meta":
                    self.score_version = int(obj.get("score_version", 0))

    def _compact_production(self) -> None:
        if self._production_path is None:
            return
        self._production_path.parent.mkdir(parents=True, exist_ok=True)
        tmp = self._production_path.with_suffix(".tmp")
        with open(tmp, "w", encoding="utf-8") as fh:
            for entry in self.longterm.values():
                fh.write(json.dumps({
                    "record": "longterm", "id": entry.id, "note": entry.distilled_note,
                    "weight": entry.weight, "recurrence": entry.recurrence,
                    "first_seen": entry.first_seen, "last_seen": entry.last_seen,
                }) + "\n")
            fh.write(json.dumps({"record": "meta", "score_version": self.score_version}) + "\n")
        os.replace(tmp, self._production_path)

    # --- operations ----------------------------------------------------------

    def record_exchange(self, exchange: Exchange) -> None:
        if any(e.id == exchange.id for e in self.ring) or any(
            e.id == exchange.id for e in self.promotion_buffer
        ):
            raise ValueError(f"duplicate exchange id '{exchange.id}'")
        self.ring.append(exchange)
        if len(self.ring) > self.short_term_size:
            evicted = self.ring.pop(0)
            self.promotion_buffer.append(evicted)
            if len(self.promotion_buffer) > PROMOTION_BUFFER_SIZE:
                self.promotion_buffer.pop(0)
        self._append_session({"record": "exchange", **_exchange_to_dict(exchange)})

    def _find(self, exchange_id: str) -> tuple[list[Exchange], int]:
        for store in (self.ring, self.promotion_buffer):
            for i, e in enumerate(store):
                if e.id == exchange_id:
                    return store, i
        raise KeyError(f"unknown exchange id '{exchange_id}'")

    def annotate(
        self, exchange_id: str, annotation: Annotation, note: str | None = None
    ) -> None:
        store, i = self._find(exchange_id)
        exchange = replace(store[i], annotation=annotation, note=note)
        store[i] = exchange
        delta = ANNOTATION_WEIGHTS[annotation]
        key = pattern_key(exchange, self.colors)
        if annotation is not Annotation.NONE:
            if key in self.longterm:
                entry = self.longterm[key]
                self.longterm[key] = replace(
                    entry,
                    weight=entry.weight + delta,
                    recurrence=entry.recurrence + 1,
                    last_seen=exchange.timestamp,
                    distilled_note=note or entry.distilled_note,
                )
            else:
                candidate = self.candidates.get(key)
                if candidate is None:
                    candidate = _Candidate(
                        pattern=key,
                        distilled_note=note or _default_note(exchange, key),
                        first_seen=exchange.timestamp,
                    )
                    self.candidates[key] = candidate
                candidate.weight += delta
                candidate.recurrence += 1
                candidate.last_seen = exchange.timestamp
                if note:
                    candidate.distilled_note = note
        self._append_session({
            "record": "annotation", "exchange": exchange_id,
            "annotation": annotation.value, "note": note, "t": exchange.timestamp,
        })

    def promote(self) -> list[LongTermEntry]:
        """Move qualifying candidates into the long-term store; drop failures."""
        promoted: list[LongTermEntry] = []
        for key in list(self.candidates):
            candidate = self.candidates[key]
            if (
                candidate.weight >= self.promote_weight
                or candidate.recurrence >= self.promote_recurrence
            ):
                entry = LongTermEntry(
                    id=key,
                    distilled_note=candidate.distilled_note,
                    weight=candidate.weight,
                    recurrence=candidate.recurrence,
                    first_seen=candidate.first_seen,
                    last_seen=candidate.last_seen,
                )
                self.longterm[key] = entry
                promoted.append(entry)
                del self.candidates[key]
                self._append_session({"record": "promotion", "entry": key,
                                      "note": entry.distilled_note, "weight": entry.weight})
            elif candidate.weight <= self.drop_weight:
                del self.candidates[key]
                self.dropped.append(key)
                self._append_session({"record": "drop", "entry": key,
                                      "weight": candidate.weight})
        if promoted:
            self._compact_production()
        return promoted

    def top_entries(self) -> list[LongTermEntry]:
        return sorted(
            self.longterm.values(), key=lambda e: (-e.weight, e.id)
        )[: self.top_notes]

    def summarize_notes(
        self, provider: LanguageModelProvider | None
    ) -> tuple[list[str], bool]:
        """Top notes by weight, provider-condensed when one answers in
        contract; anything else falls back to the verbatim note."""
        notes: list[str] = []
        summarized = False
        for entry in self.top_entries():
            text = entry.distilled_note
            if provider is not None:
                try:
                    obj = parse_json_reply(
                        provider.complete(*summarize_prompt(text), contract="summarize")
                    )
                    candidate = obj.get("summary")
                    if isinstance(candidate, str) and candidate.strip():
                        text = candidate.strip()
                        summarized = True
                except Exception:
                    pass  # deterministic fallback: keep the raw note
            notes.append(text)
        return notes, summarized

    def apply_consolidated(
        self, notes: Sequence[str], provider_summarized: bool, now_ms: int
    ) -> int:
        """Record a consolidation (notes already chosen); returns the version."""
        self.promote()
        self.score_version += 1
        self._append_session({
            "record": "score", "version": self.score_version, "t": now_ms,
            "notes": list(notes), "provider_summarized": provider_summarized,
        })
        self._compact_production()
        return self.score_version

    def consolidate(
        self,
        profile: DramaturgicalProfile,
        rules: Sequence[DirectorialRule],
        constraints: Sequence[Constraint],
        provider: LanguageModelProvider | None = None,
        now_ms: int = 0,
    ) -> DramaturgicalScore:
        """Produce the next score version from the current memory state.

        With no provider (or a failing one) the distilled notes appear
        verbatim, so consolidation stays a pure function of memory state.
        """
        notes, summarized = self.summarize_notes(provider)
        version = self.apply_consolidated(notes, summarized, now_ms)
        return DramaturgicalScore(
            version=version,
            context_section=render_context_section(profile),
            rules_section=describe_rules_section(rules, constraints),
            distilled_notes=tuple(notes),
            created_at=now_ms,
            provider_summarized=summarized,
        )


def _default_note(exchange: Exchange, key: str) -> str:
    event, action_kind, bucket = key.split("/")
    colored = f"{bucket} {action_kind}" if bucket not in ("none", "nohue", "relay") \
        else action_kind
    return f"On {event}, responding with {colored} has a track record."


def _exchange_to_dict(exchange: Exchange) -> dict:
    return {
        "id": exchange.id,
        "t": exchange.timestamp,
        "prompt_digest": exchange.prompt_digest,
        "actions": [action_to_wire(a) for a in exchange.actions],
        "reasoning": exchange.reasoning,
        "event_kind": exchange.event_kind,
        "annotation": exchange.annotation.value,
        "note": exchange.note,
    }


def notes_section(notes: Sequence[str]) -> str:
    """Render the distilled-notes block of the composed prompt."""
    lines = ["[DISTILLED NOTES]"]
    if notes:
        lines.extend(f"- {note}" for note in notes)
    else:
        lines.append(NO_NOTES_SENTINEL)
    return "\n".join(lines)
