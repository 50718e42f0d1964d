"""Actuators: the virtual blueprint plus mirrored physical endpoints.

Every validated command updates the virtual actuator state; when a physical
binding exists the same command is encoded onto the bridge wire protocol
(PUT /api/{key}/lights/{id}/state with deciseconds for transitions) and sent
off-loop. Physical failures are logged and retried once; they never block or
revert the virtual state, so a dead bridge cannot stall rehearsal.

Virtual lights fade linearly in brightness and saturation and along the
shorter hue arc (no rainbow sweeps when moving between adjacent reds).
"""

from __future__ import annotations

import json
import queue
import threading
from dataclasses import dataclass, field, replace
from typing import Callable

import requests

from .core import InvalidValueError, LightState
from .director import (
    Clamped,
    LightAction,
    ProposedAction,
    RelayAction,
    Valid,
    ValidationResult,
)

OUTBOUND_QUEUE_LIMIT = 64
DEFAULT_LIGHT_STATE = LightState(on=False, bri=0, hue=0, sat=0, transition_ms=0)


@dataclass(frozen=True)
class PhysicalBinding:
    bridge_url: str
    application_key: str
    physical_id: str

    def __post_init__(self) -> None:
        if not (self.bridge_url.startswith("http://") or self.bridge_url.startswith("https://")):
            raise InvalidValueError(f"bridge url '{self.bridge_url}' is not a valid URL")


@dataclass(frozen=True)
class ActuationCommand:
    """A validated actuation. Construction demands the validation token, so
    unvalidated proposals cannot reach dispatch by type construction."""

    actuator_id: str
    action: ProposedAction
    issued_at: int
    exchange_id: str

    @classmethod
    def from_validated(
        cls, result: ValidationResult, issued_at: int, exchange_id: str
    ) -> "ActuationCommand":
        if not isinstance(result, (Valid, Clamped)):
            raise InvalidValueError("only Valid or Clamped results may become commands")
        return cls(
            actuator_id=result.action.actuator_id,
            action=result.action,
            issued_at=issued_at,
            exchange_id=exchange_id,
        )


@dataclass(frozen=True)
class LightTransition:
    """An in-flight linear fade from ``start`` to ``target``."""

    start: LightState
    target: LightState
    started_at: int

    def state_at(self, now_ms: int) -> LightState:
        duration = self.target.transition_ms
        if duration <= 0 or now_ms >= self.started_at + duration:
            return self.target
        if now_ms <= self.started_at:
            return replace(self.start, on=self.target.on, transition_ms=duration)
        frac = (now_ms - self.started_at) / duration
        hue_delta = ((self.target.hue - self.start.hue + 32768) % 65536) - 32768
        return LightState(
            on=self.target.on,  # on/off switches at command time; levels fade
            bri=round(self.start.bri + frac * (self.target.bri - self.start.bri)),
            hue=(self.start.hue + round(frac * hue_delta)) % 65536,
            sat=round(self.start.sat + frac * (self.target.sat - self.start.sat)),
            transition_ms=duration,
        )


@dataclass(frozen=True)
class Actuator:
    id: str
    kind: str  # "light" | "relay"
    zone_id: str | None = None
    transition: LightTransition = field(
        default_factory=lambda: LightTransition(DEFAULT_LIGHT_STATE, DEFAULT_LIGHT_STATE, 0)
    )
    relay_on: bool = False
    binding: PhysicalBinding | None = None

    def light_state_at(self, now_ms: int) -> LightState:
        return self.transition.state_at(now_ms)


def merge_target(current: LightState, action: LightAction) -> LightState:
    """Fill an action's unset fields from the current state."""
    return LightState(
        on=current.on if action.on is None else action.on,
        bri=current.bri if action.bri is None else action.bri,
        hue=current.hue if action.hue is None else action.hue,
        sat=current.sat if action.sat is None else action.sat,
        transition_ms=action.transition_ms,
    )


def apply_virtual(actuator: Actuator, cmd: ActuationCommand, now_ms: int) -> Actuator:
    """Begin the commanded change on the virtual actuator."""
    if cmd.actuator_id != actuator.id:
        raise InvalidValueError(
            f"command for '{cmd.actuator_id}' applied to '{actuator.id}'"
        )
    if isinstance(cmd.action, RelayAction):
        if actuator.kind != "relay":
            raise InvalidValueError(f"relay command sent to {actuator.kind} '{actuator.id}'")
        return replace(actuator, relay_on=cmd.action.on)
    if actuator.kind != "light":
        raise InvalidValueError(f"light command sent to {actuator.kind} '{actuator.id}'")
    current = actuator.light_state_at(now_ms)
    target = merge_target(current, cmd.action)
    return replace(
        actuator, transition=LightTransition(start=current, target=target, started_at=now_ms)
    )


def encode_hue_request(cmd: ActuationCommand, binding: PhysicalBinding) -> dict:
    """Render a light command as a bridge HTTP request descriptor.

    The body lists only the fields the command sets, in the bridge's
    conventional key order; an off-command sends exactly {"on": false}
    (the bridge rejects level changes alongside "off").
    """
    action = cmd.action
    if not isinstance(action, LightAction):
        raise InvalidValueError("relays bind to webhooks, not the light bridge")
    path = f"/api/{binding.application_key}/lights/{binding.physical_id}/state"
    if action.on is False:
        body: dict = {"on": False}
    else:
        body = {}
        if action.on is not None:
            body["on"] = action.on
        if action.bri is not None:
            body["bri"] = action.bri
        if action.hue is not None:
            body["hue"] = action.hue
        if action.sat is not None:
            body["sat"] = action.sat
        body["transitiontime"] = round(action.transition_ms / 100)  # deciseconds
    return {
        "method": "PUT",
        "url": binding.bridge_url.rstrip("/") + path,
        # compact separators: the wire body is byte-pinned in tests
        "body": json.dumps(body, separators=(",", ":")),
    }


def encode_relay_request(cmd: ActuationCommand, webhook_url: str) -> dict:
    action = cmd.action
    if not isinstance(action, RelayAction):
        raise InvalidValueError("light commands do not use the relay webhook")
    return {
        "method": "POST",
        "url": webhook_url,
        "body": json.dumps({"on": action.on}, separators=(",", ":")),
    }


class PhysicalDispatcher:
    """Off-loop sender with a bounded outbound queue (drop-oldest past 64).

    Results are reported through a callback so the engine loop can log them;
    the callback must be thread-safe (the engine uses its inbox queue).
    """

    def __init__(
        self,
        on_result: Callable[[str, str, bool, str], None],
        send: Callable[[dict], bool] | None = None,
    ):
        self._queue: queue.Queue = queue.Queue()
        self._pending = 0
        self._lock = threading.Lock()
        self._on_result = on_result
        self._send = send or _http_send
        self._thread: threading.Thread | None = None
        self._stop = threading.Event()

    def start(self) -> None:
        self._thread = threading.Thread(target=self._run, name="physical-dispatch", daemon=True)
        self._thread.start()

    def stop(self) -> None:
        self._stop.set()
        self._queue.put(None)
        if self._thread:
            self._thread.join(timeout=2)

    def submit(self, actuator_id: str, exchange_id: str, request: dict) -> None:
        with self._lock:
            if self._pending >= OUTBOUND_QUEUE_LIMIT:
                try:
                    dropped = self._queue.get_nowait()
                    self._pending -= 1
                    if dropped is not None:
                        self._on_result(dropped[0], dropped[1], False, "dropped: queue full")
                except queue.Empty:
                    pass
            self._queue.put((actuator_id, exchange_id, request))
            self._pending += 1

    def _run(self) -> None:
        while not self._stop.is_set():
            item = self._queue.get()
            if item is None:
                break
            with self._lock:
                self._pending -= 1
            actuator_id, exchange_id, request = item
            ok = self._send(request)
            if not ok:
                ok = self._send(request)  # one retry, then log the failure
            self._on_result(actuator_id, exchange_id, ok, "" if ok else "bridge unreachable")


def _http_send(request: dict) -> bool:
    try:
        response = requests.request(
            request["method"],
            request["url"],
            data=request["body"],
            headers={"Content-Type": "application/json"},
            timeout=5,
        )
        return 200 <= response.status_code < 300
    except requests.RequestException:
        return False
