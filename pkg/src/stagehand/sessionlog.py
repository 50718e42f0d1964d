"""Append-only event-sourced session record, the foundation of replay.

One newline-delimited JSON file per session. The first line is a header
(config hash, score version and long-term memory at open); every following
line is a dense-sequenced entry. Decision-critical entries are fsynced
before the engine proceeds (write-ahead for dispatches); sensor frames are
only flushed, since losing a few frames in a crash is acceptable but losing
a decision is not.

Prompts are stored as hashes plus the inputs to recompose them; the
``full_prompts`` switch additionally stores the text for debugging.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

# Entry kinds. The dispatch/decision records are fsynced (see DURABLE_KINDS);
# command/framing/end records exist so a log alone can drive replay.
KIND_SENSOR_IN = "sensor_in"
KIND_RULE_FIRED = "rule_fired"
KIND_PROMPT_COMPOSED = "prompt_composed"
KIND_PROVIDER_REPLY = "provider_reply"
KIND_ACTION_DISPATCHED = "action_dispatched"
KIND_VIOLATION_DROPPED = "violation_dropped"
KIND_ANNOTATION = "annotation"
KIND_SCORE_CONSOLIDATED = "score_consolidated"
KIND_PHYSICAL_RESULT = "physical_result"
KIND_COMMAND_APPLIED = "command_applied"
KIND_FRAMING_APPLIED = "framing_applied"
KIND_PANIC_APPLIED = "panic_applied"
KIND_PROVIDER_FAILURE = "provider_failure"
KIND_END = "end"

DURABLE_KINDS = frozenset({
    KIND_PROMPT_COMPOSED, KIND_PROVIDER_REPLY, KIND_ACTION_DISPATCHED,
    KIND_VIOLATION_DROPPED, KIND_ANNOTATION, KIND_SCORE_CONSOLIDATED,
    KIND_COMMAND_APPLIED, KIND_FRAMING_APPLIED, KIND_PANIC_APPLIED, KIND_END,
})

# the records replay feeds back into the engine at their logged ticks
INPUT_KINDS = frozenset({
    KIND_SENSOR_IN, KIND_ANNOTATION, KIND_COMMAND_APPLIED, KIND_FRAMING_APPLIED,
    KIND_SCORE_CONSOLIDATED, KIND_PANIC_APPLIED,
})


class LogStorageError(RuntimeError):
    """The log could not be persisted; decisions must halt (degraded mode)."""


class LogClosedError(RuntimeError):
    pass


class ReplayAlignmentError(ValueError):
    """The two runs saw different sensor sequences; diff needs same-scenario runs."""


def prompt_hash(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class LogEntry:
    seq: int
    t_ms: int
    kind: str
    data: dict

    def to_json(self) -> str:
        return json.dumps({"seq": self.seq, "t": self.t_ms, "kind": self.kind, **self.data})


@dataclass
class SessionHeader:
    session_id: str
    config_hash: str
    score_version: int
    tick_ms: int
    initial_longterm: list = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps({
            "record": "header", "session": self.session_id,
            "config_hash": self.config_hash, "score_version": self.score_version,
            "tick_ms": self.tick_ms, "initial_longterm": self.initial_longterm,
        })


class SessionLogWriter:
    """Single appender; the engine tick loop owns it."""

    def __init__(self, path: Path, header: SessionHeader):
        self.path = path
        self.header = header
        self._seq = 0
        self._last_t = 0
        self._closed = False
        path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(path, "w", encoding="utf-8")
        self._fh.write(header.to_json() + "\n")
        self._fh.flush()
        os.fsync(self._fh.fileno())

    @property
    def next_seq(self) -> int:
        return self._seq

    def append(self, kind: str, t_ms: int, data: dict) -> LogEntry:
        if self._closed:
            raise LogClosedError("session log is closed")
        if any(k in data for k in ("seq", "t", "kind")):
            raise ValueError("entry data must not shadow the envelope keys")
        if t_ms < self._last_t:
            t_ms = self._last_t  # entry timestamps never run backwards
        entry = LogEntry(self._seq, t_ms, kind, data)
        try:
            self._fh.write(entry.to_json() + "\n")
            self._fh.flush()
            if kind in DURABLE_KINDS:
                os.fsync(self._fh.fileno())
        except (OSError, ValueError) as exc:  # ValueError: handle already closed
            raise LogStorageError(f"cannot persist log entry: {exc}") from exc
        self._seq += 1
        self._last_t = t_ms
        return entry

    def close(self, t_ms: int) -> None:
        if self._closed:
            return
        self.append(KIND_END, t_ms, {})
        self._closed = True
        self._fh.close()


@dataclass
class SessionLogReader:
    header: SessionHeader
    entries: list[LogEntry]
    complete: bool  # False when truncated (crash) or missing the end record

    @classmethod
    def load(cls, path: Path) -> "SessionLogReader":
        entries: list[LogEntry] = []
        header: SessionHeader | None = None
        complete = False
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                try:
                    obj = json.loads(line)
                except json.JSONDecodeError:
                    break  # torn final line after a crash: stop at last complete entry
                if obj.get("record") == "header":
                    header = SessionHeader(
                        session_id=obj["session"],
                        config_hash=obj["config_hash"],
                        score_version=obj["score_version"],
                        tick_ms=obj["tick_ms"],
                        initial_longterm=obj.get("initial_longterm", []),
                    )
                    continue
                data = {k: v for k, v in obj.items() if k not in ("seq", "t", "kind")}
                entry = LogEntry(obj["seq"], obj["t"], obj["kind"], data)
                if entries and entry.seq != entries[-1].seq + 1:
                    break  # gap: treat the rest as lost
                entries.append(entry)
                if entry.kind == KIND_END:
                    complete = True
        if header is None:
            raise LogStorageError(f"{path} has no session header")
        return cls(header=header, entries=entries, complete=complete)

    def of_kind(self, kind: str) -> list[LogEntry]:
        return [e for e in self.entries if e.kind == kind]

    def last_t(self) -> int:
        return self.entries[-1].t_ms if self.entries else 0


def dispatched_action_lines(reader: SessionLogReader) -> list[str]:
    """Canonical byte form of the dispatched-action sequence (replay compares these)."""
    return [
        json.dumps({"t": e.t_ms, **e.data}, sort_keys=True)
        for e in reader.of_kind(KIND_ACTION_DISPATCHED)
    ]


@dataclass(frozen=True)
class ExchangeSummary:
    exchange_id: str
    t_ms: int
    prompt_hash: str
    reasoning: str
    actions: tuple[str, ...]  # canonical JSON per dispatched action
    dropped: tuple[str, ...]


@dataclass(frozen=True)
class ExchangeDiff:
    exchange_a: ExchangeSummary | None
    exchange_b: ExchangeSummary | None
    fields: tuple[str, ...]


@dataclass(frozen=True)
class DiffReport:
    identical: bool
    differing: tuple[ExchangeDiff, ...]
    exchanges_a: int
    exchanges_b: int

    def to_wire(self) -> dict:
        return {
            "identical": self.identical,
            "exchanges_a": self.exchanges_a,
            "exchanges_b": self.exchanges_b,
            "differing": [
                {
                    "exchange_a": d.exchange_a.exchange_id if d.exchange_a else None,
                    "exchange_b": d.exchange_b.exchange_id if d.exchange_b else None,
                    "fields": list(d.fields),
                    "prompt_hash_a": d.exchange_a.prompt_hash if d.exchange_a else None,
                    "prompt_hash_b": d.exchange_b.prompt_hash if d.exchange_b else None,
                }
                for d in self.differing
            ],
        }


def exchange_summaries(reader: SessionLogReader) -> list[ExchangeSummary]:
    """Fold a log into per-exchange summaries, in prompt order."""
    order: list[str] = []
    hashes: dict[str, str] = {}
    times: dict[str, int] = {}
    reasoning: dict[str, str] = {}
    actions: dict[str, list[str]] = {}
    dropped: dict[str, list[str]] = {}
    for e in reader.entries:
        exchange = e.data.get("exchange")
        if exchange is None:
            continue
        if exchange not in hashes:
            order.append(exchange)
            hashes[exchange] = ""
            times[exchange] = e.t_ms
        if e.kind == KIND_PROMPT_COMPOSED:
            hashes[exchange] = e.data.get("prompt_hash", "")
        elif e.kind == KIND_PROVIDER_REPLY:
            reasoning[exchange] = e.data.get("reasoning", "")
        elif e.kind == KIND_ACTION_DISPATCHED:
            actions.setdefault(exchange, []).append(
                json.dumps(e.data.get("action", {}), sort_keys=True)
            )
        elif e.kind == KIND_VIOLATION_DROPPED:
            dropped.setdefault(exchange, []).append(
                json.dumps(e.data.get("reasons", []), sort_keys=True)
            )
    return [
        ExchangeSummary(
            exchange_id=x,
            t_ms=times[x],
            prompt_hash=hashes[x],
            reasoning=reasoning.get(x, ""),
            actions=tuple(actions.get(x, [])),
            dropped=tuple(dropped.get(x, [])),
        )
        for x in order
    ]


def diff(reader_a: SessionLogReader, reader_b: SessionLogReader) -> DiffReport:
    """Compare two same-scenario runs exchange by exchange."""
    sensors_a = [json.dumps(e.data, sort_keys=True) for e in reader_a.of_kind(KIND_SENSOR_IN)]
    sensors_b = [json.dumps(e.data, sort_keys=True) for e in reader_b.of_kind(KIND_SENSOR_IN)]
    if sensors_a != sensors_b:
        raise ReplayAlignmentError(
            f"sensor sequences differ ({len(sensors_a)} vs {len(sensors_b)} frames); "
            "diff needs two runs of the same scenario"
        )
    a = exchange_summaries(reader_a)
    b = exchange_summaries(reader_b)
    differing: list[ExchangeDiff] = []
    for i in range(max(len(a), len(b))):
        xa = a[i] if i < len(a) else None
        xb = b[i] if i < len(b) else None
        if xa is None or xb is None:
            differing.append(ExchangeDiff(xa, xb, ("presence",)))
            continue
        fields = tuple(
            name
            for name, va, vb in (
                ("actions", xa.actions, xb.actions),
                ("reasoning", xa.reasoning, xb.reasoning),
                ("dropped", xa.dropped, xb.dropped),
            )
            if va != vb
        )
        if fields:
            differing.append(ExchangeDiff(xa, xb, fields))
    return DiffReport(
        identical=not differing,
        differing=tuple(differing),
        exchanges_a=len(a),
        exchanges_b=len(b),
    )


def iter_session_dirs(data_dir: Path) -> Iterator[Path]:
    sessions = data_dir / "sessions"
    if not sessions.is_dir():
        return
    for child in sorted(sessions.iterdir()):
        if (child / "log.ndjson").exists():
            yield child
