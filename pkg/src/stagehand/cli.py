"""The stagehand command line: serve, simulate, replay, diff, report, panic."""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import requests

from .config import ConfigError, load_config
from .ingest import load_scenario
from .providers import MockProvider, ScriptedProvider
from .sessionlog import ReplayAlignmentError, SessionLogReader, diff as log_diff


@click.group()
def main():
    """Rehearsal engine for AI-directed responsive environments."""


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--fake-bridge", type=int, default=None,
              help="Co-start an in-process light bridge on this port and bind to it.")
@click.option("--host", default=None)
@click.option("--port", type=int, default=None)
@click.option("--log-full-prompts", is_flag=True,
              help="Store full prompt text in the session log (larger logs).")
def serve(config_path, fake_bridge, host, port, log_full_prompts):
    """Run the live engine with its HTTP/WS API."""
    from dataclasses import replace

    from .service import serve as run_serve

    try:
        config = load_config(config_path)
    except ConfigError as exc:
        raise click.ClickException(str(exc))
    if log_full_prompts:
        config = replace(config, log_full_prompts=True)
    run_serve(config, fake_bridge_port=fake_bridge, host=host, port=port)


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--scenario", "scenario_path", required=True, type=click.Path(exists=True))
@click.option("--provider", "provider_kind",
              type=click.Choice(["mock", "scripted", "none"]), default=None,
              help="Override the configured provider kind.")
@click.option("--data-dir", type=click.Path(), default=None)
@click.option("--session", "session_id", default=None)
@click.option("--report", "with_report", is_flag=True,
              help="Render figures and the action table after the run.")
@click.option("--log-full-prompts", is_flag=True,
              help="Store full prompt text in the session log (larger logs).")
def simulate(config_path, scenario_path, provider_kind, data_dir, session_id,
             with_report, log_full_prompts):
    """Run a scripted rehearsal headlessly on the virtual clock."""
    from dataclasses import replace

    from .runner import run_scenario

    try:
        config = load_config(config_path)
    except ConfigError as exc:
        raise click.ClickException(str(exc))
    if log_full_prompts:
        config = replace(config, log_full_prompts=True)
    script = load_scenario(scenario_path)

    kind = provider_kind or config.provider.kind
    if kind == "mock":
        if not config.provider.table_path:
            raise click.ClickException("config has no mock table")
        provider = MockProvider.from_file(config.provider.table_path)
    elif kind == "scripted":
        if not config.provider.replies_path:
            raise click.ClickException("config has no scripted replies file")
        provider = ScriptedProvider.from_file(config.provider.replies_path)
    elif kind == "remote":
        from .service import provider_from_spec

        provider = provider_from_spec(config)
    else:
        provider = None

    summary = run_scenario(
        config, script, provider,
        data_dir=Path(data_dir) if data_dir else None,
        session_id=session_id,
    )
    click.echo(f"session   {summary.session_id}")
    click.echo(f"dir       {summary.session_dir}")
    click.echo(f"ticks     {summary.ticks}")
    click.echo(f"frames    {summary.sensor_frames}")
    click.echo(f"exchanges {summary.exchanges}")
    click.echo(f"dispatch  {summary.dispatched}")
    for trace in summary.traces:
        if trace["reasoning"]:
            click.echo(f"  [{trace['exchange']}] {trace['reasoning']}")
        for action in trace["dispatched"]:
            click.echo(f"    -> {json.dumps(action)}")
    if with_report:
        from .report import build_report

        paths = build_report(summary.session_dir)
        click.echo(f"report    {paths.actions_csv.parent} ({paths.rows} actions)")


@main.command()
@click.option("--session", "session_dir", required=True, type=click.Path(exists=True))
@click.option("--config", "config_path", type=click.Path(exists=True), default=None,
              help="Check against this config instead of the session's copy.")
@click.option("--out", "out_dir", type=click.Path(), default=None)
def replay(session_dir, config_path, out_dir):
    """Re-run a recorded session and verify the dispatched-action sequence."""
    from .engine import ReplayConfigMismatch
    from .runner import replay_session

    config = load_config(config_path) if config_path else None
    try:
        result = replay_session(
            Path(session_dir), config, Path(out_dir) if out_dir else None
        )
    except ReplayConfigMismatch as exc:
        raise click.ClickException(str(exc))
    click.echo(json.dumps(result.to_wire(), indent=2))
    if result.partial:
        click.echo("log was truncated: replay stopped at the last complete entry",
                   err=True)
    sys.exit(0 if result.match else 1)


@main.command()
@click.argument("session_a", type=click.Path(exists=True))
@click.argument("session_b", type=click.Path(exists=True))
def diff(session_a, session_b):
    """Compare two same-scenario runs exchange by exchange."""
    a = SessionLogReader.load(Path(session_a) / "log.ndjson")
    b = SessionLogReader.load(Path(session_b) / "log.ndjson")
    try:
        report = log_diff(a, b)
    except ReplayAlignmentError as exc:
        raise click.ClickException(str(exc))
    click.echo(json.dumps(report.to_wire(), indent=2))
    sys.exit(0 if report.identical else 1)


@main.command()
@click.option("--session", "session_dir", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", type=click.Path(), default=None)
def report(session_dir, out_dir):
    """Render session figures and the delimited action table."""
    from .report import build_report

    paths = build_report(Path(session_dir), Path(out_dir) if out_dir else None)
    click.echo(f"actions  {paths.actions_csv} ({paths.rows} rows)")
    click.echo(f"heatmap  {paths.heatmap_png}")
    click.echo(f"timeline {paths.timeline_png}")


@main.command()
@click.option("--url", default="http://127.0.0.1:8620",
              help="Base URL of the running engine.")
def panic(url):
    """All relays off, all lights to safe white (bypasses constraints)."""
    try:
        response = requests.post(url.rstrip("/") + "/api/panic", timeout=5)
        response.raise_for_status()
    except requests.RequestException as exc:
        raise click.ClickException(f"panic failed: {exc}")
    click.echo(json.dumps(response.json(), indent=2))


if __name__ == "__main__":
    main()
