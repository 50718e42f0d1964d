"""Post-session reports: figures plus a delimited action table.

``build_report`` reads a session log and writes, next to each other:

* ``actions.csv``        every dispatched actuation with its fields
* ``heatmap.png``        cumulative dwell map and final decayed heat field
                         with hotspot markers, on the same blue-to-red
                         mapping the console uses
* ``timeline.png``       presence, speech, and dispatches over session time

The heat fields are reconstructed from the logged sensor frames with the
same grid parameters the session ran, so the figures describe the run that
actually happened, not a re-simulation.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.colors import LinearSegmentedColormap  # noqa: E402

from . import heatgrid as hg  # noqa: E402
from .config import load_config  # noqa: E402
from .core import EntityKind, Position, TrackedEntity  # noqa: E402
from .ingest import PositionUpdate, decode_sensor_message  # noqa: E402
from .sessionlog import (  # noqa: E402
    KIND_ACTION_DISPATCHED,
    KIND_SENSOR_IN,
    SessionLogReader,
)

# value 0 renders pure blue, 1 pure red; pinned so screenshots compare
HEAT_COLORMAP = LinearSegmentedColormap.from_list(
    "stagehand-heat", [(0.0, (0.0, 0.0, 1.0)), (1.0, (1.0, 0.0, 0.0))]
)
HOTSPOT_COLOR = "#ffdd00"


@dataclass
class ReportPaths:
    actions_csv: Path
    heatmap_png: Path
    timeline_png: Path
    rows: int


def _replay_heat(reader: SessionLogReader, config) -> tuple[hg.HeatGrid, np.ndarray, dict]:
    """Re-run the heat field from logged sensor frames.

    Returns the final decayed grid, a cumulative dwell map, and per-tick
    presence counts.
    """
    grid = hg.HeatGrid(
        cols=config.heatgrid.cols, rows=config.heatgrid.rows,
        bounds=(0.0, 0.0, config.room.width, config.room.height),
        decay=config.heatgrid.decay, deposit=config.heatgrid.deposit,
    )
    dwell = np.zeros((grid.rows, grid.cols))
    presence: dict[int, int] = {}

    frames: dict[int, list] = {}
    for entry in reader.of_kind(KIND_SENSOR_IN):
        frames.setdefault(entry.t_ms, []).append(decode_sensor_message(entry.data["frame"]))

    entities: dict[str, TrackedEntity] = {}
    end_t = reader.last_t()
    for t in range(0, end_t + 1, reader.header.tick_ms):
        for msg in frames.get(t, []):
            if isinstance(msg, PositionUpdate):
                x = min(max(msg.x, 0.0), config.room.width)
                y = min(max(msg.y, 0.0), config.room.height)
                entities[msg.entity_id] = TrackedEntity(
                    msg.entity_id, EntityKind(msg.kind), Position(x, y), t
                )
        live = [e for e in entities.values() if t - e.last_seen <= config.staleness_ms]
        grid = hg.tick(grid, live)
        for e in live:
            col, row = hg.cell_of(grid, e.position)
            dwell[row, col] += 1.0
        presence[t] = len(live)
    return grid, dwell, presence


def build_report(session_dir: Path, out_dir: Path | None = None) -> ReportPaths:
    session_dir = Path(session_dir)
    reader = SessionLogReader.load(session_dir / "log.ndjson")
    config = load_config(session_dir / "config.json", check_files=False)
    out_dir = Path(out_dir) if out_dir else session_dir / "report"
    out_dir.mkdir(parents=True, exist_ok=True)

    # delimited output: one row per dispatched actuation
    actions_csv = out_dir / "actions.csv"
    dispatched = reader.of_kind(KIND_ACTION_DISPATCHED)
    with open(actions_csv, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["t_ms", "exchange", "actuator", "kind", "on", "bri", "hue", "sat",
             "transition_ms"]
        )
        for entry in dispatched:
            action = entry.data["action"]
            writer.writerow([
                entry.t_ms, entry.data.get("exchange", ""), action["actuator"],
                action["kind"], action.get("on"), action.get("bri"),
                action.get("hue"), action.get("sat"), action.get("transition_ms"),
            ])

    grid, dwell, presence = _replay_heat(reader, config)
    spots = hg.hotspots(grid, config.heatgrid.theta_rel, config.heatgrid.h_min)

    fig, axes = plt.subplots(1, 2, figsize=(11, 4.5))
    extent = (0.0, config.room.width, config.room.height, 0.0)
    dwell_norm = dwell / dwell.max() if dwell.max() > 0 else dwell
    axes[0].imshow(dwell_norm, cmap=HEAT_COLORMAP, extent=extent, aspect="equal")
    axes[0].set_title("cumulative dwell")
    heat_norm = np.asarray(hg.normalized(grid))
    axes[1].imshow(heat_norm, cmap=HEAT_COLORMAP, extent=extent, aspect="equal")
    for s in spots:
        axes[1].plot(s.world_center.x, s.world_center.y, "o", color=HOTSPOT_COLOR,
                     markersize=9, markeredgecolor="black")
    axes[1].set_title("final heat field and hotspots")
    for ax in axes:
        ax.set_xlabel("x (m)")
        ax.set_ylabel("y (m)")
    fig.tight_layout()
    heatmap_png = out_dir / "heatmap.png"
    fig.savefig(heatmap_png, dpi=120)
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(11, 3.2))
    if presence:
        times = sorted(presence)
        ax.step([t / 1000 for t in times], [presence[t] for t in times],
                where="post", label="participants", color="#3366cc")
    speech_t = [e.t_ms / 1000 for e in reader.of_kind(KIND_SENSOR_IN)
                if '"type": "speech"' in e.data["frame"]
                or '"type":"speech"' in e.data["frame"]]
    for i, t in enumerate(speech_t):
        ax.axvline(t, color="#44aa44", linestyle=":",
                   label="speech" if i == 0 else None)
    for i, entry in enumerate(dispatched):
        ax.axvline(entry.t_ms / 1000, color="#cc3333", linestyle="--",
                   label="dispatch" if i == 0 else None)
    ax.set_xlabel("session time (s)")
    ax.set_ylabel("count")
    ax.set_title(f"session {reader.header.session_id}")
    if presence or speech_t or dispatched:
        ax.legend(loc="upper left", fontsize=8)
    fig.tight_layout()
    timeline_png = out_dir / "timeline.png"
    fig.savefig(timeline_png, dpi=120)
    plt.close(fig)

    return ReportPaths(
        actions_csv=actions_csv,
        heatmap_png=heatmap_png,
        timeline_png=timeline_png,
        rows=len(dispatched),
    )
