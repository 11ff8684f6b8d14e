"""Dataset management: trajectory loading with trip termination, splits,
and the network traffic state built from vehicle accumulation counts.

A vehicle counts toward a cell at a minute mark when its trip interval
covers that instant and its most recent point at or before it maps to the
cell (piecewise-constant occupancy between detections).
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .cellspace import CellMap, RawTrajectory, assign_points
from .tokens import Token

ACCUMULATION_VERSION = "accum-v1"
TRIP_GAP_SECONDS = 3600.0
WINDOW_MINUTES = 10

Row = tuple[str, float, float, float]  # trip_id, t, x, y


@dataclass(frozen=True)
class SequenceRecord:
    """One discretized trip: id, departure time, full token sequence."""

    trip_id: str
    start_time: float
    tokens: tuple[Token, ...]

    @property
    def m(self) -> int:
        return len(self.tokens) - 2


@dataclass(frozen=True)
class Dataset:
    train: tuple[SequenceRecord, ...]
    validation: tuple[SequenceRecord, ...]
    test: tuple[SequenceRecord, ...]

    def all(self) -> tuple[SequenceRecord, ...]:
        return self.train + self.validation + self.test

    def sizes(self) -> tuple[int, int, int]:
        return (len(self.train), len(self.validation), len(self.test))


def read_trajectory_rows(path: str | Path) -> list[Row]:
    """Parse the point file: one ``trip_id<TAB>t<TAB>x<TAB>y`` row per line."""
    rows: list[Row] = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise ValueError(f"malformed row at line {lineno}: expected 4 fields, got {len(parts)}")
            try:
                rows.append((parts[0], float(parts[1]), float(parts[2]), float(parts[3])))
            except ValueError:
                raise ValueError(f"malformed row at line {lineno}: non-numeric field") from None
    return rows


def write_trajectories(path: str | Path, trips: Iterable[RawTrajectory]) -> None:
    with open(path, "w") as fh:
        fh.write("# trip_id\tt\tx\ty\n")
        for trip in trips:
            for x, y, t in trip.points:
                fh.write(f"{trip.trip_id}\t{float(t)!r}\t{float(x)!r}\t{float(y)!r}\n")


def load_and_terminate(rows: Sequence[Row], gap_seconds: float = TRIP_GAP_SECONDS) -> list[RawTrajectory]:
    """Group rows by device and cut a new trip wherever the time gap between
    consecutive points exceeds ``gap_seconds``."""
    trips: list[RawTrajectory] = []
    seen: set[str] = set()
    i = 0
    n = len(rows)
    while i < n:
        device = rows[i][0]
        if device in seen:
            raise ValueError(f"input not sorted: trip id {device!r} appears in separate blocks")
        seen.add(device)
        j = i
        while j < n and rows[j][0] == device:
            if j > i and rows[j][1] < rows[j - 1][1]:
                raise ValueError(f"input not sorted: time decreases within {device!r}")
            j += 1
        block = rows[i:j]
        part = 0
        seg_start = 0
        for k in range(1, len(block) + 1):
            if k == len(block) or block[k][1] - block[k - 1][1] > gap_seconds:
                pts = np.array([(x, y, t) for _, t, x, y in block[seg_start:k]])
                suffix = f"#{part:02d}" if (seg_start > 0 or k < len(block)) else ""
                trips.append(RawTrajectory(trip_id=device + suffix, points=pts))
                part += 1
                seg_start = k
        i = j
    return trips


def split_indices(
    n: int, fractions: tuple[float, float, float], seed: int
) -> tuple[list[int], list[int], list[int]]:
    """Disjoint index assignment for n items under a seeded shuffle."""
    if n < 1:
        raise ValueError("no sequences to split")
    if len(fractions) != 3 or any(f < 0 for f in fractions) or sum(fractions) > 1.0 + 1e-9:
        raise ValueError("fractions must be three non-negative values summing to at most 1")
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    counts = [int(n * f) for f in fractions]
    remainder = min(n, round(n * sum(fractions))) - sum(counts)
    for i in range(len(counts)):
        if remainder <= 0:
            break
        counts[i] += 1
        remainder -= 1
    cut1, cut2 = counts[0], counts[0] + counts[1]
    cut3 = cut2 + counts[2]
    return (
        [int(i) for i in order[:cut1]],
        [int(i) for i in order[cut1:cut2]],
        [int(i) for i in order[cut2:cut3]],
    )


def split_dataset(
    seqs: Sequence[SequenceRecord], fractions: tuple[float, float, float], seed: int
) -> Dataset:
    """Random disjoint train/validation/test assignment, fixed under seed."""
    train_idx, val_idx, test_idx = split_indices(len(seqs), fractions, seed)
    return Dataset(
        train=tuple(seqs[i] for i in train_idx),
        validation=tuple(seqs[i] for i in val_idx),
        test=tuple(seqs[i] for i in test_idx),
    )


@dataclass(frozen=True)
class AccumulationSeries:
    """Per-minute vehicle counts per cell, plus per-cell historical maxima.

    ``counts[i, j]`` is the value at minute ``minute0 + i`` for cell
    ``cells[j]``. Raw series hold integer counts; normalized series hold
    values in [0, 1] with the maxima they were divided by.
    """

    cells: tuple[int, ...]
    minute0: int
    counts: np.ndarray
    maxima: np.ndarray
    normalized: bool = False
    clamped: int = 0

    def __post_init__(self):
        if self.counts.ndim != 2 or self.counts.shape[1] != len(self.cells):
            raise ValueError("counts must be [minutes, n_cells]")
        if self.maxima.shape != (len(self.cells),):
            raise ValueError("one maximum per cell required")
        if np.any(self.counts < 0):
            raise ValueError("counts must be non-negative")

    @property
    def n_minutes(self) -> int:
        return self.counts.shape[0]

    def minute_index(self, minute: int) -> int:
        return minute - self.minute0


def compute_accumulation(
    trips: Sequence[RawTrajectory],
    cmap: CellMap,
    pad_minutes: int = WINDOW_MINUTES,
) -> AccumulationSeries:
    """Count vehicles present per cell at every epoch-minute mark.

    The series is padded ``pad_minutes`` before the earliest trip so that a
    traffic window is available for every trip start. Maxima are the
    column-wise peaks of this series.
    """
    n_cells = cmap.n_cells
    cells = tuple(range(1, n_cells + 1))
    if not trips:
        counts = np.zeros((pad_minutes + 1, n_cells), dtype=np.int64)
        return AccumulationSeries(cells, 0, counts, counts.max(axis=0).astype(float))

    first = min(int(np.floor(t.start_time / 60.0)) for t in trips)
    last = max(int(np.floor(t.times[-1] / 60.0)) for t in trips)
    minute0 = first - pad_minutes
    counts = np.zeros((last - minute0 + 1, n_cells), dtype=np.int64)
    for trip in trips:
        times = trip.times
        pcells = assign_points(trip.xy, cmap)
        m_lo = int(np.ceil(times[0] / 60.0))
        m_hi = int(np.floor(times[-1] / 60.0))
        if m_hi < m_lo:
            continue  # trip never spans a minute mark
        marks = np.arange(m_lo, m_hi + 1) * 60.0
        idx = np.searchsorted(times, marks, side="right") - 1
        for mark_minute, pi in zip(range(m_lo, m_hi + 1), idx):
            counts[mark_minute - minute0, pcells[pi] - 1] += 1
    return AccumulationSeries(cells, minute0, counts, counts.max(axis=0).astype(float))


def normalize(series: AccumulationSeries, maxima: np.ndarray | None = None) -> AccumulationSeries:
    """Divide each cell's counts by its historical maximum, clamped to [0, 1].

    Cells with zero maximum map to zero everywhere. Counts above the maximum
    (possible when maxima come from a training period) clamp to 1 and are
    counted on the result.
    """
    if series.normalized:
        raise ValueError("series already normalized")
    maxima = series.maxima if maxima is None else np.asarray(maxima, dtype=float)
    if maxima.shape != (len(series.cells),):
        raise ValueError("one maximum per cell required")
    safe = np.where(maxima > 0, maxima, 1.0)
    values = series.counts / safe
    values[:, maxima == 0] = 0.0
    clamped = int(np.sum(values > 1.0))
    values = np.clip(values, 0.0, 1.0)
    return AccumulationSeries(
        cells=series.cells,
        minute0=series.minute0,
        counts=values,
        maxima=maxima.copy(),
        normalized=True,
        clamped=clamped,
    )


def traffic_window(
    series: AccumulationSeries,
    trip_start: float,
    cells: Sequence[int] | None = None,
) -> np.ndarray:
    """Normalized [N, 10] tensor for the ten minutes before the trip start.

    Rows follow ``cells`` (default: every cell in the series); columns are
    minutes start-10 .. start-1 in chronological order.
    """
    if not series.normalized:
        raise ValueError("traffic window requires a normalized series")
    start_minute = int(np.floor(trip_start / 60.0))
    lo = start_minute - WINDOW_MINUTES - series.minute0
    hi = start_minute - series.minute0
    if lo < 0:
        raise ValueError("insufficient history")
    if hi > series.n_minutes:
        raise ValueError("insufficient history")
    block = series.counts[lo:hi]  # [10, n_cells]
    if cells is not None:
        col = {c: i for i, c in enumerate(series.cells)}
        sel = [col[c] for c in cells]
        block = block[:, sel]
    return block.T.copy()


class TrafficLookup:
    """Window extractor bound to a normalized series and an active-cell order."""

    def __init__(self, series: AccumulationSeries, cells: Sequence[int] | None = None):
        if not series.normalized:
            raise ValueError("traffic lookup requires a normalized series")
        self.series = series
        self.cells = tuple(cells) if cells is not None else series.cells

    def window(self, trip_start: float) -> np.ndarray:
        return traffic_window(self.series, trip_start, self.cells)


def save_accumulation(path: str | Path, series: AccumulationSeries) -> None:
    """Versioned header, per-cell maxima, then one row of counts per minute."""
    kind = "normalized" if series.normalized else "raw"
    lines = [
        f"{ACCUMULATION_VERSION}\tkind={kind}\tn={len(series.cells)}"
        f"\tminute0={series.minute0}\tminutes={series.n_minutes}\tclamped={series.clamped}"
    ]
    lines.append("cells\t" + "\t".join(str(c) for c in series.cells))
    lines.append("maxima\t" + "\t".join(repr(float(v)) for v in series.maxima))
    for row in series.counts:
        lines.append("\t".join(repr(float(v)) if series.normalized else str(int(v)) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def load_accumulation(path: str | Path) -> AccumulationSeries:
    lines = Path(path).read_text().splitlines()
    header = lines[0].split("\t")
    if header[0] != ACCUMULATION_VERSION:
        raise ValueError(f"unsupported accumulation version: {header[0]!r}")
    fields = dict(part.split("=", 1) for part in header[1:])
    normalized = fields["kind"] == "normalized"
    n = int(fields["n"])
    minute0 = int(fields["minute0"])
    minutes = int(fields["minutes"])
    clamped = int(fields.get("clamped", "0"))
    cells = tuple(int(c) for c in lines[1].split("\t")[1:])
    maxima = np.array([float(v) for v in lines[2].split("\t")[1:]])
    dtype = float if normalized else np.int64
    counts = np.array(
        [[dtype(v) for v in line.split("\t")] for line in lines[3 : 3 + minutes]], dtype=dtype
    ).reshape(minutes, n)
    return AccumulationSeries(cells, minute0, counts, maxima, normalized=normalized, clamped=clamped)


SEQUENCES_VERSION = "sequences-v1"


def save_sequences(path: str | Path, dataset: Dataset) -> None:
    """One row per trip: id, split, start time, space-joined interior cells."""
    lines = [f"{SEQUENCES_VERSION}"]
    for split_name in ("train", "validation", "test"):
        for rec in getattr(dataset, split_name):
            cells = " ".join(str(t) for t in rec.tokens[1:-1])
            lines.append(f"{rec.trip_id}\t{split_name}\t{rec.start_time!r}\t{cells}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_sequences(path: str | Path) -> Dataset:
    from .tokens import END, START

    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != SEQUENCES_VERSION:
        raise ValueError("unsupported sequences file")
    buckets: dict[str, list[SequenceRecord]] = {"train": [], "validation": [], "test": []}
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        trip_id, split_name, start, cells = line.split("\t")
        tokens = (START, *(int(c) for c in cells.split()), END)
        buckets[split_name].append(SequenceRecord(trip_id, float(start), tokens))
    return Dataset(
        train=tuple(buckets["train"]),
        validation=tuple(buckets["validation"]),
        test=tuple(buckets["test"]),
    )
