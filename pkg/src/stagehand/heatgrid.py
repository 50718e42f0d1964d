"""Decaying spatial heat field over the room, plus hotspot detection.

Each tick every cell decays by a constant factor and gains a fixed deposit
per entity standing in it:

    h'(c) = decay * h(c) + deposit * count(c)

The evaluation order (decay, then deposit) is normative: it fixes the exact
float values, which the test suite checks against a naive reference loop.
Values that fall below ``FLUSH_EPSILON`` are flushed to zero so long-idle
grids return to exactly zero.

Hotspots are the "gravitational points" of the room: cells that dominate
their 8-neighborhood and carry enough heat relative to the global maximum.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .core import InvalidValueError, Position, TrackedEntity

FLUSH_EPSILON = 1e-12

DEFAULT_COLS = 32
DEFAULT_ROWS = 32
DEFAULT_DECAY = 0.95
DEFAULT_DEPOSIT = 1.0
# Chosen so that a ~3 s dwell at the default 10 Hz tick produces a heat
# value that clears the default thresholds below.
DEFAULT_THETA_REL = 0.6
DEFAULT_H_MIN = 0.5


@dataclass(frozen=True)
class Hotspot:
    """A local concentration of activity.

    ``prev_heat`` is an optional annotation (the same cell's heat one tick
    earlier) used for trend wording in reports; detection ignores it.
    """

    cell: tuple[int, int]
    heat: float
    world_center: Position
    prev_heat: float | None = None


@dataclass(frozen=True)
class HeatGrid:
    cols: int
    rows: int
    bounds: tuple[float, float, float, float]  # x0, y0, x1, y1
    decay: float
    deposit: float
    cells: np.ndarray = field(default=None)  # type: ignore[assignment]  # rows x cols, float64

    def __post_init__(self) -> None:
        if self.cols <= 0 or self.rows <= 0:
            raise InvalidValueError("grid dimensions must be positive")
        if not (0.0 < self.decay < 1.0):
            raise InvalidValueError("decay must lie in (0, 1)")
        if not self.deposit > 0:
            raise InvalidValueError("deposit must be > 0")
        x0, y0, x1, y1 = self.bounds
        if not (x1 > x0 and y1 > y0):
            raise InvalidValueError("grid bounds must span a positive area")
        if self.cells is None:
            object.__setattr__(self, "cells", np.zeros((self.rows, self.cols)))
        elif self.cells.shape != (self.rows, self.cols):
            raise InvalidValueError("cells shape must be rows x cols")

    @property
    def cell_size(self) -> tuple[float, float]:
        x0, y0, x1, y1 = self.bounds
        return (x1 - x0) / self.cols, (y1 - y0) / self.rows

    def cell_center(self, col: int, row: int) -> Position:
        x0, y0, _, _ = self.bounds
        cw, ch = self.cell_size
        return Position(x0 + (col + 0.5) * cw, y0 + (row + 0.5) * ch)


def cell_of(grid: HeatGrid, p: Position) -> tuple[int, int]:
    """Floor-index the containing cell; maximal edges clamp to the last cell."""
    x0, y0, x1, y1 = grid.bounds
    if not (x0 <= p.x <= x1 and y0 <= p.y <= y1):
        raise InvalidValueError(f"position ({p.x}, {p.y}) outside grid bounds {grid.bounds}")
    cw, ch = grid.cell_size
    col = min(int(math.floor((p.x - x0) / cw)), grid.cols - 1)
    row = min(int(math.floor((p.y - y0) / ch)), grid.rows - 1)
    return col, row


def tick(grid: HeatGrid, entities: Iterable[TrackedEntity]) -> HeatGrid:
    """One decay-then-deposit step. Pure: the input grid is unmodified."""
    cells = grid.decay * grid.cells
    counts: dict[tuple[int, int], int] = {}
    for e in entities:
        key = cell_of(grid, e.position)
        counts[key] = counts.get(key, 0) + 1
    # deposit * count added as one term, per the normative update formula
    for (col, row), n in counts.items():
        cells[row, col] += grid.deposit * n
    cells[cells < FLUSH_EPSILON] = 0.0
    return HeatGrid(grid.cols, grid.rows, grid.bounds, grid.decay, grid.deposit, cells)


def hotspots(
    grid: HeatGrid,
    theta_rel: float = DEFAULT_THETA_REL,
    h_min: float = DEFAULT_H_MIN,
) -> list[Hotspot]:
    """Cells that dominate their 8-neighborhood and clear the heat floor.

    A cell qualifies when it is >= every neighbor and > at least one; a
    uniformly positive grid yields a single hotspot at the lexicographically
    lowest (col, row). Results sort by heat descending, then (col, row).
    """
    if not (0.0 < theta_rel <= 1.0):
        raise InvalidValueError("theta_rel must lie in (0, 1]")
    if h_min < 0:
        raise InvalidValueError("h_min must be >= 0")
    cells = grid.cells
    global_max = float(cells.max())
    threshold = max(theta_rel * global_max, h_min)
    found: list[Hotspot] = []
    if global_max > 0.0 and float(cells.min()) == global_max:
        # Uniform positive grid: a single representative maximum.
        if global_max >= threshold:
            found.append(Hotspot((0, 0), global_max, grid.cell_center(0, 0)))
    else:
        for row in range(grid.rows):
            for col in range(grid.cols):
                h = float(cells[row, col])
                if h < threshold:
                    continue
                ge_all = True
                gt_one = False
                for dr in (-1, 0, 1):
                    for dc in (-1, 0, 1):
                        if dr == 0 and dc == 0:
                            continue
                        r, c = row + dr, col + dc
                        if 0 <= r < grid.rows and 0 <= c < grid.cols:
                            n = float(cells[r, c])
                            if h < n:
                                ge_all = False
                                break
                            if h > n:
                                gt_one = True
                    if not ge_all:
                        break
                if ge_all and gt_one:
                    found.append(Hotspot((col, row), h, grid.cell_center(col, row)))
    found.sort(key=lambda s: (-s.heat, s.cell))
    return found


def normalized(grid: HeatGrid) -> np.ndarray:
    """Cells scaled into [0, 1] by the global maximum; all-zero stays zero."""
    global_max = float(grid.cells.max())
    if global_max <= 0.0:
        return np.zeros_like(grid.cells)
    return grid.cells / global_max


def to_wire(grid: HeatGrid, spots: Sequence[Hotspot]) -> dict:
    """Console-facing serialization of a grid snapshot."""
    return {
        "cols": grid.cols,
        "rows": grid.rows,
        "bounds": list(grid.bounds),
        "cells": [float(v) for v in grid.cells.reshape(-1)],
        "hotspots": [
            {"col": s.cell[0], "row": s.cell[1], "heat": s.heat} for s in spots
        ],
    }
