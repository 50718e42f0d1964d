from __future__ import annotations

from pathlib import Path

import pytest

REPO_ROOT = Path(__file__).resolve().parents[1]
DEMO_DIR = REPO_ROOT / "demo"
GOLDEN_DIR = Path(__file__).resolve().parent / "goldens"


@pytest.fixture(scope="session")
def demo_dir() -> Path:
    return DEMO_DIR


@pytest.fixture()
def demo_config():
    from stagehand.config import load_config

    return load_config(DEMO_DIR / "config.json")


@pytest.fixture()
def demo_scenario():
    from stagehand.ingest import load_scenario

    return load_scenario(DEMO_DIR / "pillar.scenario.json")


@pytest.fixture()
def mock_provider(demo_config):
    from stagehand.providers import MockProvider

    return MockProvider.from_file(demo_config.provider.table_path)


@pytest.fixture()
def scripted_provider(demo_config):
    from stagehand.providers import ScriptedProvider

    return ScriptedProvider.from_file(demo_config.provider.replies_path)


def run_canonical(tmp_path, session_id="canonical", provider_kind="mock", config=None):
    """One canonical pillar rehearsal; returns (summary, config)."""
    from stagehand.config import load_config
    from stagehand.ingest import load_scenario
    from stagehand.providers import MockProvider, ScriptedProvider
    from stagehand.runner import run_scenario

    config = config or load_config(DEMO_DIR / "config.json")
    script = load_scenario(DEMO_DIR / "pillar.scenario.json")
    if provider_kind == "mock":
        provider = MockProvider.from_file(config.provider.table_path)
    else:
        provider = ScriptedProvider.from_file(config.provider.replies_path)
    summary = run_scenario(
        config, script, provider, data_dir=tmp_path, session_id=session_id
    )
    return summary, config
