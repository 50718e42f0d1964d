import json
import random
import time

import pytest

from stagehand.actuation import (
    ActuationCommand,
    Actuator,
    LightTransition,
    PhysicalBinding,
    PhysicalDispatcher,
    apply_virtual,
    encode_hue_request,
    encode_relay_request,
    merge_target,
)
from stagehand.core import InvalidValueError, LightState
from stagehand.director import (
    Clamped,
    LightAction,
    RelayAction,
    Valid,
    Violation,
)
from stagehand.fakebridge import FakeBridge

BINDING = PhysicalBinding("http://bridge.local", "appkey", "7")


def command(action, issued_at=0, exchange="x1"):
    return ActuationCommand.from_validated(Valid(action), issued_at, exchange)


def light_actuator(**kw):
    return Actuator(id="pillar_light", kind="light", **kw)


class TestActuationCommand:
    def test_requires_validation_token(self):
        action = LightAction("pillar_light", 0, on=True)
        with pytest.raises(InvalidValueError):
            ActuationCommand.from_validated(Violation(action, ("nope",)), 0, "x")

    def test_clamped_accepted(self):
        action = LightAction("pillar_light", 3000, on=True)
        cmd = ActuationCommand.from_validated(Clamped(action, ("raised",)), 0, "x")
        assert cmd.action is action


class TestApplyVirtual:
    def test_bri_linear_midpoint(self):
        actuator = light_actuator()
        cmd = command(LightAction("pillar_light", 1000, on=True, bri=254, hue=0, sat=0))
        actuator = apply_virtual(actuator, cmd, 0)
        assert actuator.light_state_at(500).bri == 127

    def test_zero_transition_immediate(self):
        actuator = light_actuator()
        cmd = command(LightAction("pillar_light", 0, on=True, bri=100, hue=20, sat=30))
        actuator = apply_virtual(actuator, cmd, 0)
        assert actuator.light_state_at(0) == LightState(True, 100, 20, 30, 0)

    def test_hue_shorter_arc_across_wraparound(self):
        start = LightState(True, 100, 65000, 100, 1000)
        actuator = light_actuator(transition=LightTransition(start, start, 0))
        cmd = command(LightAction("pillar_light", 1000, on=True, bri=100, hue=500, sat=100),
                      issued_at=0)
        actuator = apply_virtual(actuator, cmd, 0)
        # arc length (65000 -> 500) is 1036 upward, not 64500 downward
        mid = actuator.light_state_at(500)
        assert mid.hue == (65000 + 518) % 65536
        assert actuator.light_state_at(1000).hue == 500

    def test_endpoints_exact(self):
        start = LightState(True, 10, 1000, 20, 0)
        actuator = light_actuator(transition=LightTransition(start, start, 0))
        target_action = LightAction("pillar_light", 2000, on=True, bri=200, hue=3000, sat=99)
        actuator = apply_virtual(actuator, command(target_action, issued_at=100), 100)
        at_start = actuator.light_state_at(100)
        assert (at_start.bri, at_start.hue, at_start.sat) == (10, 1000, 20)
        at_end = actuator.light_state_at(2100)
        assert (at_end.bri, at_end.hue, at_end.sat) == (200, 3000, 99)

    def test_partial_action_holds_unset_fields(self):
        start = LightState(True, 80, 40000, 120, 0)
        actuator = light_actuator(transition=LightTransition(start, start, 0))
        cmd = command(LightAction("pillar_light", 0, bri=10))
        actuator = apply_virtual(actuator, cmd, 0)
        state = actuator.light_state_at(0)
        assert (state.on, state.bri, state.hue, state.sat) == (True, 10, 40000, 120)

    def test_relay_switches_immediately(self):
        fan = Actuator(id="fan", kind="relay")
        fan = apply_virtual(fan, command(RelayAction("fan", True)), 0)
        assert fan.relay_on is True

    def test_kind_mismatch_rejected(self):
        with pytest.raises(InvalidValueError):
            apply_virtual(light_actuator(), command(RelayAction("pillar_light", True)), 0)

    def test_wrong_actuator_rejected(self):
        with pytest.raises(InvalidValueError):
            apply_virtual(Actuator(id="other", kind="light"),
                          command(LightAction("pillar_light", 0, on=True)), 0)

    def test_retarget_mid_transition_starts_from_interpolant(self):
        actuator = light_actuator()
        actuator = apply_virtual(
            actuator, command(LightAction("pillar_light", 1000, on=True, bri=200, hue=0, sat=0)), 0
        )
        actuator = apply_virtual(
            actuator, command(LightAction("pillar_light", 1000, on=True, bri=0, hue=0, sat=0)), 500
        )
        assert actuator.transition.start.bri == 100  # mid-fade value captured


class TestEncodeHueRequest:
    def full_cmd(self, transition_ms=3000):
        return command(LightAction("pillar_light", transition_ms,
                                   on=True, bri=60, hue=0, sat=254))

    def test_three_seconds_is_thirty_deciseconds(self):
        request = encode_hue_request(self.full_cmd(3000), BINDING)
        assert '"transitiontime":30' in request["body"]

    def test_thirty_percent_bri(self):
        cmd = command(LightAction("pillar_light", 400, bri=76))
        request = encode_hue_request(cmd, BINDING)
        assert '"bri":76' in request["body"]

    def test_off_body_minimal(self):
        cmd = command(LightAction("pillar_light", 400, on=False))
        request = encode_hue_request(cmd, BINDING)
        assert request["body"] == '{"on":false}'

    def test_path_and_method(self):
        request = encode_hue_request(self.full_cmd(), BINDING)
        assert request["method"] == "PUT"
        assert request["url"] == "http://bridge.local/api/appkey/lights/7/state"

    def test_fixed_key_order(self):
        request = encode_hue_request(self.full_cmd(), BINDING)
        assert request["body"] == \
            '{"on":true,"bri":60,"hue":0,"sat":254,"transitiontime":30}'

    def test_relay_command_rejected(self):
        with pytest.raises(InvalidValueError):
            encode_hue_request(command(RelayAction("fan", True)), BINDING)

    def test_relay_webhook_body(self):
        request = encode_relay_request(command(RelayAction("fan", True)),
                                       "http://hub/relay/fan")
        assert request == {"method": "POST", "url": "http://hub/relay/fan",
                           "body": '{"on":true}'}

    def test_blueprint_physical_equivalence(self):
        # body fields equal the fields that update the virtual state
        rng = random.Random(23)
        for _ in range(300):
            action = LightAction(
                "pillar_light", transition_ms=rng.randint(0, 8000),
                on=True, bri=rng.randint(0, 254), hue=rng.randint(0, 65535),
                sat=rng.randint(0, 254),
            )
            cmd = command(action)
            body = json.loads(encode_hue_request(cmd, BINDING)["body"])
            virtual = apply_virtual(light_actuator(), cmd, 0)
            target = virtual.transition.target
            assert body["bri"] == target.bri
            assert body["hue"] == target.hue
            assert body["sat"] == target.sat
            assert body["transitiontime"] == round(target.transition_ms / 100)


class TestMergeTarget:
    def test_all_none_keeps_current(self):
        current = LightState(True, 10, 20, 30, 0)
        merged = merge_target(current, LightAction("x", 500))
        assert merged == LightState(True, 10, 20, 30, 500)


class TestPhysicalBinding:
    def test_rejects_bad_url(self):
        with pytest.raises(InvalidValueError):
            PhysicalBinding("bridge.local", "k", "1")


class TestDispatcher:
    def test_sends_to_fake_bridge(self):
        bridge = FakeBridge().start()
        results = []
        dispatcher = PhysicalDispatcher(lambda *a: results.append(a))
        dispatcher.start()
        try:
            binding = PhysicalBinding(bridge.url, "key", "1")
            request = encode_hue_request(self.red_cmd(), binding)
            dispatcher.submit("pillar_light", "x1", request)
            assert bridge.wait_for_requests(1)
            assert bridge.light_bodies() == [
                '{"on":true,"bri":60,"hue":0,"sat":254,"transitiontime":30}'
            ]
            deadline = time.monotonic() + 2
            while not results and time.monotonic() < deadline:
                time.sleep(0.01)
            assert results == [("pillar_light", "x1", True, "")]
        finally:
            dispatcher.stop()
            bridge.stop()

    def test_unreachable_bridge_reports_failure_after_retry(self):
        attempts = []

        def failing_send(request):
            attempts.append(request)
            return False

        results = []
        dispatcher = PhysicalDispatcher(lambda *a: results.append(a), send=failing_send)
        dispatcher.start()
        try:
            dispatcher.submit("pillar_light", "x1", {"method": "PUT", "url": "u", "body": "{}"})
            deadline = time.monotonic() + 2
            while not results and time.monotonic() < deadline:
                time.sleep(0.01)
            assert len(attempts) == 2  # one retry
            assert results[0][2] is False
        finally:
            dispatcher.stop()

    def test_queue_overflow_drops_oldest(self):
        import threading

        release = threading.Event()

        def slow_send(request):
            release.wait(timeout=5)
            return True

        results = []
        dispatcher = PhysicalDispatcher(lambda *a: results.append(a), send=slow_send)
        dispatcher.start()
        try:
            for i in range(70):
                dispatcher.submit("a", f"x{i}", {"method": "PUT", "url": "u", "body": "{}"})
            dropped = [r for r in results if "dropped" in r[3]]
            assert len(dropped) >= 4  # beyond the 64-slot bound, oldest go
        finally:
            release.set()
            dispatcher.stop()

    def red_cmd(self):
        return command(LightAction("pillar_light", 3000, on=True, bri=60, hue=0, sat=254))
