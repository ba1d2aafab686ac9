"""Trajectory rasterization and synthetic congestion-wave diagrams.

Trajectory CSV columns: ``vehicle_id,time_s,position_m,speed_kmh``.
Points from all lanes are pooled.  NGSIM exports use feet and ft/s;
convert to meters and km/h (and shift time to the window start) first.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .perturb import impute_nine_cell
from .tsgrid import SPEED_MAX, SPEED_MIN, CellSize, GridError, TSDiagram

log = logging.getLogger(__name__)

TRAJECTORY_HEADER = ("vehicle_id", "time_s", "position_m", "speed_kmh")


@dataclass(frozen=True)
class TrajectoryPoint:
    vehicle_id: str
    time: float
    position: float
    speed: float


@dataclass
class RasterStats:
    """Counters filled by :func:`rasterize`."""

    dropped_out_of_extent: int = 0
    clamped_speed: int = 0
    empty_cells: int = 0


def read_trajectories(path) -> list[TrajectoryPoint]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(TRAJECTORY_HEADER) - set(reader.fieldnames or ())
        if missing:
            raise GridError(f"{path}: missing columns {sorted(missing)}")
        return [TrajectoryPoint(row["vehicle_id"], float(row["time_s"]),
                                float(row["position_m"]), float(row["speed_kmh"]))
                for row in reader]


def _n_cells(total: float, span: float, what: str) -> int:
    n = int(round(total / span))
    if n < 1 or not np.isclose(n * span, total, rtol=1e-9, atol=1e-9):
        raise GridError(f"{what} extent {total} is not a multiple of cell span {span}")
    return n


def _bin(x: np.ndarray, span: float, n: int) -> np.ndarray:
    # half-open bins; the far boundary belongs to the last cell
    return np.minimum(np.floor(x / span).astype(np.int64), n - 1)


def rasterize(points, cell: CellSize, extent: tuple[float, float], *,
              impute: bool = True, stats: RasterStats | None = None) -> TSDiagram:
    """Average point speeds per cell into a (space x time) diagram.

    Empty cells are masked, then filled by iterative nine-cell mean
    imputation unless ``impute`` is False.
    """
    stats = stats if stats is not None else RasterStats()
    points = list(points)
    if not points:
        raise GridError("no trajectory points")
    t_total, x_total = extent
    n_t = _n_cells(t_total, cell.time_span, "time")
    n_x = _n_cells(x_total, cell.space_span, "space")

    t = np.array([p.time for p in points], float)
    x = np.array([p.position for p in points], float)
    v = np.array([p.speed for p in points], float)
    inside = (t >= 0) & (t <= t_total) & (x >= 0) & (x <= x_total)
    stats.dropped_out_of_extent = int((~inside).sum())
    if stats.dropped_out_of_extent:
        log.warning("dropped %d points outside extent %s", stats.dropped_out_of_extent, extent)
    t, x, v = t[inside], x[inside], v[inside]
    if not len(v):
        raise GridError("no trajectory points inside the extent")
    out_of_range = (v < SPEED_MIN) | (v > SPEED_MAX)
    stats.clamped_speed = int(out_of_range.sum())
    if stats.clamped_speed:
        log.warning("clamped %d point speeds into [%g, %g] km/h",
                    stats.clamped_speed, SPEED_MIN, SPEED_MAX)
        v = np.clip(v, SPEED_MIN, SPEED_MAX)

    flat = _bin(x, cell.space_span, n_x) * n_t + _bin(t, cell.time_span, n_t)
    sums = np.bincount(flat, weights=v, minlength=n_x * n_t)
    counts = np.bincount(flat, minlength=n_x * n_t)
    with np.errstate(invalid="ignore", divide="ignore"):
        grid = (sums / counts).reshape(n_x, n_t)
    stats.empty_cells = int((counts == 0).sum())
    d = TSDiagram(grid, cell)
    return impute_nine_cell(d) if impute else d


@dataclass(frozen=True)
class SynthScenario:
    """Free-flow field with backward-moving congestion bands.

    ``wave_origins`` are ``(time_s, position_m)`` seeds.  From each seed a
    band of ``wave_width`` seconds travels upstream at ``wave_slope`` m/s
    (negative); nothing is congested downstream of the seed.  ``texture``
    holds ``(amplitude_kmh, cycles_per_s, cycles_per_m, phase)`` sinusoids
    added everywhere, and ``noise_sd`` adds i.i.d. Gaussian noise.
    """

    free_speed: float = 90.0
    jam_speed: float = 10.0
    wave_origins: tuple = ()
    wave_slope: float = -5.0
    wave_width: float = 300.0
    texture: tuple = ()
    noise_sd: float = 0.0

    def __post_init__(self):
        if not 0 <= self.jam_speed < self.free_speed <= SPEED_MAX:
            raise ValueError(f"need 0 <= jam_speed < free_speed <= 100, got "
                             f"{self.jam_speed}, {self.free_speed}")
        if self.wave_width <= 0:
            raise ValueError(f"wave_width must be positive, got {self.wave_width}")
        if self.wave_slope >= 0:
            raise ValueError(f"wave_slope must be negative (upstream), got {self.wave_slope}")
        if self.noise_sd < 0:
            raise ValueError(f"noise_sd must be >= 0, got {self.noise_sd}")
        for comp in self.texture:
            if len(comp) != 4:
                raise ValueError(f"texture components need 4 values, got {comp}")


def _band_profile(d: np.ndarray, width: float) -> np.ndarray:
    """1 in the band core, cosine ramps over the outer quarter widths, 0 outside."""
    ramp = 0.25 * width
    prof = np.zeros_like(d)
    prof[(d >= ramp) & (d <= width - ramp)] = 1.0
    lead = (d >= 0) & (d < ramp)
    tail = (d > width - ramp) & (d <= width)
    prof[lead] = 0.5 - 0.5 * np.cos(np.pi * d[lead] / ramp)
    prof[tail] = 0.5 - 0.5 * np.cos(np.pi * (width - d[tail]) / ramp)
    return prof


def generate_synthetic(s: SynthScenario, cell: CellSize, extent: tuple[float, float],
                       seed: int = 0) -> TSDiagram:
    """Sample the scenario at cell centres; deterministic for a given seed."""
    t_total, x_total = extent
    n_t = _n_cells(t_total, cell.time_span, "time")
    n_x = _n_cells(x_total, cell.space_span, "space")
    t = (np.arange(n_t) + 0.5) * cell.time_span
    x = (np.arange(n_x) + 0.5) * cell.space_span
    T, X = np.meshgrid(t, x)

    depth = np.zeros_like(T)
    for t0, x0 in s.wave_origins:
        # time at which the wave front reaches position X
        arrival = t0 + (X - x0) / s.wave_slope
        prof = _band_profile(T - arrival, s.wave_width)
        prof[X > x0] = 0.0
        depth = np.maximum(depth, prof)
    v = s.free_speed - (s.free_speed - s.jam_speed) * depth
    for amp, ft, fx, phase in s.texture:
        v = v + amp * np.sin(2 * np.pi * (ft * T + fx * X) + phase)
    if s.noise_sd > 0:
        rng = np.random.default_rng(seed)
        v = v + rng.normal(0.0, s.noise_sd, size=v.shape)
    return TSDiagram(np.clip(v, SPEED_MIN, SPEED_MAX), cell)


def synthetic_scenario(seed: int, extent: tuple[float, float], n_waves: int = 4,
                       noise_sd: float = 2.5, texture_amp: float = 5.0) -> SynthScenario:
    """Draw a scenario from the shock-wave family used by the synthetic suite.

    Bands are 25-40 % of the time extent wide; the texture has three
    components of 0.5-2 cycles per extent along each axis.
    """
    rng = np.random.default_rng(seed)
    t_total, x_total = extent
    origins = tuple(
        (float(rng.uniform(0, 0.7 * t_total)), float(rng.uniform(0.3 * x_total, x_total)))
        for _ in range(n_waves))
    free = float(rng.uniform(85, 90))
    jam = float(rng.uniform(8, 14))
    slope = float(rng.uniform(-6, -4))
    width = float(rng.uniform(0.25, 0.4) * t_total)
    texture = tuple(
        (float(rng.uniform(-texture_amp, texture_amp)),
         float(rng.uniform(0.5, 2) / t_total), float(rng.uniform(0.5, 2) / x_total),
         float(rng.uniform(0, 2 * np.pi)))
        for _ in range(3))
    return SynthScenario(free_speed=free, jam_speed=jam, wave_origins=origins,
                         wave_slope=slope, wave_width=width, texture=texture,
                         noise_sd=noise_sd)


def save_trajectories(points, path) -> None:
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRAJECTORY_HEADER)
        for p in points:
            w.writerow([p.vehicle_id, repr(p.time), repr(p.position), repr(p.speed)])
