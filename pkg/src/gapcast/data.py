"""Speed-series ingestion, chronological splitting, location hiding, and a
synthetic corridor generator for desk-scale experiments.

CSV contracts
-------------
speed CSV: header ``timestamp,<id0>,<id1>,...``; one row per step; first
column is the numeric timestamp in seconds; empty cells are gaps.
distance CSV: header ``from,to,distance``; one directed pair per row;
absent pairs are infinite, self pairs default to 0.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .graph import RoadGraph, build_adjacency

__all__ = [
    "SpeedSeries",
    "SplitSpec",
    "DataError",
    "SeriesFormatError",
    "load_speed_csv",
    "save_speed_csv",
    "load_distances_csv",
    "save_distances_csv",
    "split",
    "hide_locations",
    "fill_small_gaps",
    "generate_synthetic",
]


class DataError(ValueError):
    """Dataset does not satisfy a precondition (too short, bad count, ...)."""


class SeriesFormatError(ValueError):
    """Malformed CSV content; carries the offending row number."""

    def __init__(self, message: str, row: int | None = None):
        self.row = row
        super().__init__(message if row is None else f"row {row}: {message}")


@dataclass(frozen=True)
class SpeedSeries:
    """Uniformly-sampled multivariate speed series; NaN marks a gap."""

    node_ids: tuple[str, ...]
    timestamps: np.ndarray  # (steps,) seconds, strictly increasing, uniform
    values: np.ndarray  # (steps, n) float64

    def __post_init__(self):
        t, v = self.timestamps, self.values
        if v.ndim != 2 or t.ndim != 1 or v.shape[0] != t.shape[0]:
            raise SeriesFormatError("values must be (steps, nodes) aligned with timestamps")
        if len(self.node_ids) != v.shape[1]:
            raise SeriesFormatError("node_ids length must match value columns")
        if t.size > 1:
            dt = np.diff(t)
            if (dt <= 0).any():
                raise SeriesFormatError("timestamps must be strictly increasing")
            if not np.allclose(dt, dt[0]):
                raise SeriesFormatError("timestamps must be uniformly spaced")

    @property
    def steps(self) -> int:
        return self.values.shape[0]

    @property
    def n(self) -> int:
        return self.values.shape[1]

    @property
    def resolution(self) -> float:
        """Step duration in seconds (NaN for a single-row series)."""
        if self.timestamps.size < 2:
            return float("nan")
        return float(self.timestamps[1] - self.timestamps[0])

    def slice_steps(self, start: int, stop: int) -> "SpeedSeries":
        return SpeedSeries(
            node_ids=self.node_ids,
            timestamps=self.timestamps[start:stop].copy(),
            values=self.values[start:stop].copy(),
        )


@dataclass(frozen=True)
class SplitSpec:
    """Chronological train/val/test fractions; must sum to 1."""

    train_frac: float = 0.7
    val_frac: float = 0.15
    test_frac: float = 0.15

    def __post_init__(self):
        fracs = (self.train_frac, self.val_frac, self.test_frac)
        if any(f < 0 for f in fracs):
            raise DataError("split fractions must be nonnegative")
        if not math.isclose(sum(fracs), 1.0, abs_tol=1e-9):
            raise DataError(f"split fractions must sum to 1, got {sum(fracs)}")


def _fmt(x: float) -> str:
    """Shortest round-trip decimal form; empty string for gaps."""
    if math.isnan(x):
        return ""
    if x == int(x) and abs(x) < 1e15:
        return str(int(x))
    return repr(x)


def load_speed_csv(path) -> SpeedSeries:
    """Parse a speed CSV; gaps stay explicit as NaN, never zeros."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SeriesFormatError("empty file", row=1) from None
        if len(header) < 2 or header[0] != "timestamp":
            raise SeriesFormatError("header must be 'timestamp,<sensor ids...>'", row=1)
        node_ids = tuple(header[1:])
        times: list[float] = []
        rows: list[list[float]] = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise SeriesFormatError(
                    f"expected {len(header)} columns, got {len(row)}", row=lineno
                )
            try:
                t = float(row[0])
            except ValueError:
                raise SeriesFormatError(f"unparsable timestamp {row[0]!r}", row=lineno) from None
            if times and t <= times[-1]:
                raise SeriesFormatError(
                    f"timestamp {row[0]} not strictly increasing", row=lineno
                )
            vals = []
            for cell in row[1:]:
                if cell == "":
                    vals.append(float("nan"))
                    continue
                try:
                    vals.append(float(cell))
                except ValueError:
                    raise SeriesFormatError(f"unparsable value {cell!r}", row=lineno) from None
            times.append(t)
            rows.append(vals)
    try:
        return SpeedSeries(
            node_ids=node_ids,
            timestamps=np.asarray(times, dtype=np.float64),
            values=np.asarray(rows, dtype=np.float64),
        )
    except SeriesFormatError as err:
        raise SeriesFormatError(str(err)) from None


def save_speed_csv(series: SpeedSeries, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["timestamp", *series.node_ids])
        for t, row in zip(series.timestamps, series.values):
            writer.writerow([_fmt(float(t)), *(_fmt(float(x)) for x in row)])


def load_distances_csv(path, node_ids) -> np.ndarray:
    """Directed (from, to, distance) rows -> dense matrix aligned to node_ids.

    Absent pairs are np.inf; omitted self pairs are 0.
    """
    index = {nid: i for i, nid in enumerate(node_ids)}
    n = len(index)
    d = np.full((n, n), np.inf)
    np.fill_diagonal(d, 0.0)
    seen: set[tuple[int, int]] = set()
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [c.strip() for c in header[:3]] != ["from", "to", "distance"]:
            raise SeriesFormatError("header must be 'from,to,distance'", row=1)
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 3:
                raise SeriesFormatError(f"expected 3 columns, got {len(row)}", row=lineno)
            src, dst, dist_s = row
            if src not in index or dst not in index:
                raise SeriesFormatError(f"unknown sensor id in pair ({src}, {dst})", row=lineno)
            try:
                dist = float(dist_s)
            except ValueError:
                raise SeriesFormatError(f"unparsable distance {dist_s!r}", row=lineno) from None
            if dist < 0:
                raise SeriesFormatError(f"negative distance {dist}", row=lineno)
            key = (index[src], index[dst])
            if key in seen:
                raise SeriesFormatError(f"duplicate pair ({src}, {dst})", row=lineno)
            seen.add(key)
            d[key] = dist
    return d


def save_distances_csv(distances: np.ndarray, node_ids, path) -> None:
    """Write finite off-diagonal entries as directed rows."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["from", "to", "distance"])
        n = len(node_ids)
        for i in range(n):
            for j in range(n):
                if i != j and np.isfinite(distances[i, j]):
                    writer.writerow([node_ids[i], node_ids[j], _fmt(float(distances[i, j]))])


def split(
    series: SpeedSeries, spec: SplitSpec, min_steps: int | None = None
) -> tuple[SpeedSeries, SpeedSeries, SpeedSeries]:
    """Contiguous chronological train/val/test slices (floor-rounded)."""
    n = series.steps
    n_train = int(n * spec.train_frac)
    n_val = int(n * spec.val_frac)
    parts = (
        series.slice_steps(0, n_train),
        series.slice_steps(n_train, n_train + n_val),
        series.slice_steps(n_train + n_val, n),
    )
    if min_steps is not None:
        for name, part in zip(("train", "val", "test"), parts):
            if 0 < part.steps < min_steps:
                raise DataError(
                    f"{name} slice has {part.steps} steps, need at least {min_steps}"
                )
        if parts[0].steps < min_steps:
            raise DataError(f"train slice too short: {parts[0].steps} < {min_steps}")
    return parts


def hide_locations(graph: RoadGraph, count, rng: np.random.Generator) -> RoadGraph:
    """Uniformly mark ``count`` nodes (or a fraction in (0,1)) as missing.

    Only visibility flags change; series values are never altered.
    """
    n = graph.n
    if isinstance(count, float) and 0 < count < 1:
        count = int(n * count)
    count = int(count)
    if not 0 <= count < n:
        raise DataError(f"hide count must be in [0, {n}), got {count}")
    missing = np.sort(rng.choice(n, size=count, replace=False).astype(np.int64))
    observable = np.setdiff1d(np.arange(n, dtype=np.int64), missing)
    return graph.with_partition(observable, missing)


def fill_small_gaps(values: np.ndarray, max_gap: int = 2) -> np.ndarray:
    """Linearly interpolate interior NaN runs of length <= max_gap per column.

    Longer runs (and leading/trailing gaps) stay NaN so the sampler can skip
    those windows.
    """
    out = values.copy()
    steps = out.shape[0]
    for col in range(out.shape[1]):
        v = out[:, col]
        isnan = np.isnan(v)
        i = 0
        while i < steps:
            if not isnan[i]:
                i += 1
                continue
            j = i
            while j < steps and isnan[j]:
                j += 1
            run = j - i
            if 0 < i and j < steps and run <= max_gap:
                left, right = v[i - 1], v[j]
                for k in range(run):
                    v[i + k] = left + (right - left) * (k + 1) / (run + 1)
            i = j
    return out


def generate_synthetic(
    n_nodes: int,
    steps: int,
    rng: np.random.Generator,
    *,
    resolution: float = 300.0,
    spacing_km: float = 1.0,
    base_speed: float = 60.0,
    diurnal_amp: float = 12.0,
    wave_amp: float = 8.0,
    wave_het: float = 0.0,
    noise_amp: float = 2.0,
    kappa_hops: float = 2.5,
    speed_cap: float = 80.0,
    districts: "Sequence[int] | None" = None,
    district_gap_km: float = 2.0,
) -> tuple[RoadGraph, SpeedSeries]:
    """Ring-corridor network with spatially correlated traveling slowdowns.

    Nodes sit on a ring with ``spacing_km`` between neighbors; road distance
    is the shorter arc. Speeds are a free-flow baseline minus a diurnal
    congestion bump and a faster traveling wave, both phase-lagged with ring
    position so neighboring sensors carry information about each other, plus
    bounded uniform noise; everything is clipped to [0, speed_cap]. With
    noise_amp=0 the series is exactly periodic with the diurnal period.

    ``wave_het`` in [0, 1) modulates the wave amplitude smoothly around the
    ring (two strong and two calm arcs), making some regions intrinsically
    richer in local signal; 0 keeps every node statistically identical.

    ``districts`` switches to a district layout: groups of the given sizes
    (summing to n_nodes) laid around the ring, members ``spacing_km`` apart
    and ``district_gap_km`` of road between consecutive districts. Nodes in
    one district share the district's signal phase (one congestion state per
    district), and a kernel cutoff of ``kappa_hops * spacing_km`` below the
    gap keeps districts internally connected but mutually disconnected, the
    way separated arterials are.
    """
    if n_nodes < 4:
        raise DataError(f"need at least 4 nodes, got {n_nodes}")
    idx = np.arange(n_nodes)
    if districts is None:
        positions = idx.astype(np.float64) * spacing_km
        circumference = n_nodes * spacing_km
        phase_positions = positions
    else:
        sizes = [int(s) for s in districts]
        if sum(sizes) != n_nodes or any(s < 1 for s in sizes):
            raise DataError("district sizes must be positive and sum to n_nodes")
        positions = np.empty(n_nodes)
        phase_positions = np.empty(n_nodes)
        cursor = 0.0
        node = 0
        for size in sizes:
            span = (size - 1) * spacing_km
            positions[node : node + size] = cursor + np.arange(size) * spacing_km
            phase_positions[node : node + size] = cursor + span / 2.0
            cursor += span + district_gap_km
            node += size
        circumference = cursor
    gaps = np.abs(positions[:, None] - positions[None, :])
    distances = np.minimum(gaps, circumference - gaps)

    node_ids = tuple(f"s{i:03d}" for i in range(n_nodes))
    graph = build_adjacency(
        distances, sigma=None, kappa=kappa_hops * spacing_km, node_ids=node_ids
    )

    steps_per_day = (24 * 3600.0) / resolution
    t = np.arange(steps, dtype=np.float64)[:, None]
    phase = (2.0 * np.pi * phase_positions / circumference)[None, :]
    omega = 2.0 * np.pi / steps_per_day
    diurnal = diurnal_amp * (0.5 + 0.5 * np.sin(omega * t - phase)) ** 2
    wave_scale = 1.0 + wave_het * np.sin(2.0 * phase + 1.3)
    wave = wave_amp * wave_scale * (0.5 + 0.5 * np.sin(3.0 * omega * t - 3.0 * phase + 0.7))
    noise = noise_amp * rng.uniform(-1.0, 1.0, size=(steps, n_nodes))
    values = np.clip(base_speed - diurnal - wave + noise, 0.0, speed_cap)

    series = SpeedSeries(
        node_ids=node_ids,
        timestamps=np.arange(steps, dtype=np.float64) * resolution,
        values=values,
    )
    return graph, series
