from dataclasses import replace

import pytest

from stagehand.engine import ReplayConfigMismatch
from stagehand.runner import replay_session, run_scenario
from stagehand.sessionlog import SessionLogReader
from tests.conftest import DEMO_DIR, run_canonical


class TestRunScenario:
    def test_summary_counts(self, tmp_path):
        summary, _ = run_canonical(tmp_path)
        assert summary.ticks == 61  # 6000 ms inclusive at 100 ms
        assert summary.sensor_frames == 123  # 61 ticks x 2 agents + 1 utterance
        assert summary.exchanges == 1
        assert summary.dispatched == 1

    def test_framing_without_provider_rejected(self, tmp_path, demo_config,
                                               demo_scenario):
        with pytest.raises(ValueError, match="no provider"):
            run_scenario(demo_config, demo_scenario, None, data_dir=tmp_path)

    def test_scenario_without_framing_runs_provider_free(self, tmp_path, demo_config,
                                                         demo_scenario):
        bare = replace(demo_scenario, framing="", commands=())
        summary = run_scenario(demo_config, bare, None, data_dir=tmp_path,
                               session_id="bare")
        assert summary.exchanges == 0  # speech event arrives but no provider exists
        assert summary.dispatched == 0


class TestReplay:
    def test_config_mismatch_rejected(self, tmp_path):
        summary, config = run_canonical(tmp_path)
        tampered = replace(config, staleness_ms=123)
        with pytest.raises(ReplayConfigMismatch):
            replay_session(summary.session_dir, tampered)

    def test_truncated_log_reports_partial(self, tmp_path):
        summary, _ = run_canonical(tmp_path)
        log_path = summary.session_dir / "log.ndjson"
        lines = log_path.read_text().splitlines()
        log_path.write_text("\n".join(lines[:-1]) + "\n")  # drop the end record
        result = replay_session(summary.session_dir)
        assert result.partial is True
        assert result.match  # everything up to the cut still reproduces

    def test_replay_does_not_touch_physical_endpoints(self, tmp_path):
        from stagehand.actuation import PhysicalBinding
        from stagehand.config import load_config
        from stagehand.fakebridge import FakeBridge
        from stagehand.sessionlog import KIND_ACTION_DISPATCHED

        bridge = FakeBridge().start()
        try:
            config = load_config(DEMO_DIR / "config.json")
            specs = tuple(
                replace(s, binding=PhysicalBinding(bridge.url, "k", s.id))
                if s.kind == "light" else s
                for s in config.actuators
            )
            config = replace(config, actuators=specs)
            summary, _ = run_canonical(tmp_path, config=config)
            assert bridge.wait_for_requests(1)
            # write-ahead: every body the bridge saw has a logged dispatch
            reader = SessionLogReader.load(summary.session_dir / "log.ndjson")
            logged = reader.of_kind(KIND_ACTION_DISPATCHED)
            assert len(logged) >= len(bridge.light_bodies()) > 0
            sent_during_run = len(bridge.requests)
            result = replay_session(summary.session_dir)
            assert result.match
            assert len(bridge.requests) == sent_during_run  # replay stayed virtual
        finally:
            bridge.stop()

    def test_async_engine_log_replays_through_scheduled_completions(self, tmp_path):
        """Serve-mode logs complete provider calls on later ticks; replay
        must land them on the same tick."""
        import json
        import time as _time

        from stagehand.config import load_config
        from stagehand.dramaturgy import interpret_framing
        from stagehand.engine import Engine
        from stagehand.ingest import load_scenario, step_scenario
        from stagehand.providers import MockProvider
        from stagehand.sessionlog import (
            KIND_PROMPT_COMPOSED,
            KIND_PROVIDER_REPLY,
            SessionLogReader,
        )

        config = load_config(DEMO_DIR / "config.json")
        script = load_scenario(DEMO_DIR / "pillar.scenario.json")
        provider = MockProvider.from_file(config.provider.table_path)
        engine = Engine(config, provider, data_dir=tmp_path, session_id="async",
                        sync_providers=False)
        profile, _ = interpret_framing(script.framing, provider)
        engine.submit_profile(profile)
        from stagehand.director import parse_command

        for text in script.commands:
            engine.submit_parsed_command(
                parse_command(text, provider, engine.command_context()), text)
        prev = None
        for t in range(0, script.duration_ms + 1, config.tick_ms):
            for msg in step_scenario(script, t, prev):
                engine.submit_sensor(msg)
            engine.tick(t)
            prev = t
            _time.sleep(0.002)  # give the executor a chance to land completions
        engine.close()

        reader = SessionLogReader.load(engine.session_dir / "log.ndjson")
        (prompt,) = reader.of_kind(KIND_PROMPT_COMPOSED)
        (reply,) = reader.of_kind(KIND_PROVIDER_REPLY)
        assert reply.t_ms > prompt.t_ms  # genuinely asynchronous completion
        result = replay_session(engine.session_dir)
        assert result.match, result.first_mismatch
        assert result.prompt_hashes_ok

    def test_replayed_session_log_is_itself_replayable(self, tmp_path):
        summary, _ = run_canonical(tmp_path)
        once = replay_session(summary.session_dir)
        twice = replay_session(once.replay_dir)
        assert twice.match and twice.prompt_hashes_ok

    def test_replay_reproduces_corrective_reprompt_sessions(self, tmp_path):
        """A blue-then-red provider exercises the multi-completion log path."""
        import json

        from stagehand.config import load_config
        from stagehand.ingest import load_scenario
        from stagehand.providers import ScriptedProvider
        from stagehand.sessionlog import KIND_PROVIDER_REPLY, SessionLogReader

        config = load_config(DEMO_DIR / "config.json")
        script = load_scenario(DEMO_DIR / "pillar.scenario.json")

        def decision(hue):
            return json.dumps({
                "actions": [{"target": "pillar_light",
                             "light": {"on": True, "bri": 60, "hue": hue,
                                       "sat": 254, "transition_ms": 3000}}],
                "reasoning": "answering the greeting",
            })

        framing_reply = json.dumps({
            "intention": "i", "affect": "fearful", "metaphor": "m",
            "primary_modality": "light", "reaction_pattern": "r", "questions": [],
        })
        provider = ScriptedProvider([framing_reply, decision(46920), decision(0)])
        summary = run_scenario(config, script, provider, data_dir=tmp_path,
                               session_id="reprompt")
        reader = SessionLogReader.load(summary.session_dir / "log.ndjson")
        (reply,) = reader.of_kind(KIND_PROVIDER_REPLY)
        assert len(reply.data["completions"]) == 2  # original + corrective
        result = replay_session(summary.session_dir)
        assert result.match and result.prompt_hashes_ok

    def test_replay_reproduces_mid_session_panic(self, tmp_path):
        from stagehand.config import load_config
        from stagehand.ingest import load_scenario
        from stagehand.providers import MockProvider
        from stagehand.sessionlog import KIND_ACTION_DISPATCHED, SessionLogReader

        config = load_config(DEMO_DIR / "config.json")
        script = load_scenario(DEMO_DIR / "pillar.scenario.json")
        provider = MockProvider.from_file(config.provider.table_path)

        def panic_at_5s(engine, t):
            if t == 5000:
                engine.submit_panic()

        summary = run_scenario(config, script, provider, data_dir=tmp_path,
                               session_id="panicked", tick_hook=panic_at_5s)
        reader = SessionLogReader.load(summary.session_dir / "log.ndjson")
        # the override hits every actuator, on top of the one red decision
        panic_dispatches = [
            e for e in reader.of_kind(KIND_ACTION_DISPATCHED)
            if e.data["exchange"].startswith("panic")
        ]
        assert len(panic_dispatches) == len(config.actuators)
        result = replay_session(summary.session_dir)
        assert result.match, result.first_mismatch

    def test_replay_reproduces_provider_failure_sessions(self, tmp_path):
        from stagehand.config import load_config
        from stagehand.dramaturgy import interpret_framing
        from stagehand.ingest import load_scenario
        from stagehand.providers import MockProvider, ProviderTransportError

        config = load_config(DEMO_DIR / "config.json")
        script = load_scenario(DEMO_DIR / "pillar.scenario.json")

        class FramesThenFails:
            """Answers the framing extraction, then loses connectivity."""

            def __init__(self):
                self.inner = MockProvider.from_file(config.provider.table_path)
                self.framed = False

            def complete(self, system, user, contract):
                if contract == "profile":
                    return self.inner.complete(system, user, contract)
                raise ProviderTransportError("cable unplugged")

        summary = run_scenario(config, script, FramesThenFails(), data_dir=tmp_path,
                               session_id="failing")
        assert summary.dispatched == 0
        result = replay_session(summary.session_dir)
        assert result.match and result.prompt_hashes_ok


class TestDiffFromDifferentTables:
    def test_diff_isolates_the_affected_exchange(self, tmp_path):
        """Two mock tables that answer the greeting differently: the diff
        pins exactly that exchange."""
        import json

        from stagehand.config import load_config
        from stagehand.ingest import load_scenario
        from stagehand.providers import MockEntry, MockProvider
        from stagehand.runner import run_scenario
        from stagehand.sessionlog import SessionLogReader, diff

        config = load_config(DEMO_DIR / "config.json")
        script = load_scenario(DEMO_DIR / "pillar.scenario.json")
        base = MockProvider.from_file(config.provider.table_path)

        green_reply = json.dumps({
            "actions": [{"target": "pillar_light",
                         "light": {"on": True, "bri": 120, "hue": 25500,
                                   "sat": 254, "transition_ms": 3000}}],
            "reasoning": "answering the greeting with calm green",
        })
        variant_entries = [
            MockEntry(e.match, green_reply if "how are you" in e.match else e.reply)
            for e in base.entries
        ]
        variant = MockProvider(variant_entries)

        a = run_scenario(config, script, base, data_dir=tmp_path, session_id="a")
        b = run_scenario(config, script, variant, data_dir=tmp_path, session_id="b")
        report = diff(
            SessionLogReader.load(a.session_dir / "log.ndjson"),
            SessionLogReader.load(b.session_dir / "log.ndjson"),
        )
        assert report.identical is False
        assert len(report.differing) == 1
        changed = report.differing[0]
        assert "actions" in changed.fields and "reasoning" in changed.fields
        assert changed.exchange_a.prompt_hash == changed.exchange_b.prompt_hash
