"""ETT-style multichannel series: CSV ingestion, chronological splits,
train-fitted z-score normalization, sliding attack windows, and synthetic
generators for offline runs.
"""

from __future__ import annotations

import csv
import datetime
import logging
from dataclasses import dataclass, field

import numpy as np

from .engine import Tensor2

__all__ = [
    "Series",
    "Window",
    "NormStats",
    "DatasetPreset",
    "PRESETS",
    "load_csv",
    "write_csv",
    "split",
    "fit_zscore",
    "apply_zscore",
    "invert_zscore",
    "make_windows",
    "ett_like",
    "last_value_windows",
]

log = logging.getLogger(__name__)

ETT_CHANNELS = ("HUFL", "HULL", "MUFL", "MULL", "LUFL", "LULL", "OT")


@dataclass(frozen=True)
class DatasetPreset:
    """Row counts and sampling layout of one named benchmark dataset."""

    name: str
    n_channels: int
    train_rows: int
    val_rows: int
    test_rows: int
    default_rows: int
    steps_per_day: int
    step_minutes: int


PRESETS = {
    "etth1": DatasetPreset("etth1", 7, 8545, 2881, 2881, 17420, 24, 60),
    "etth2": DatasetPreset("etth2", 7, 8545, 2881, 2881, 17420, 24, 60),
    "ettm1": DatasetPreset("ettm1", 7, 34465, 11521, 11521, 69680, 96, 15),
    "ettm2": DatasetPreset("ettm2", 7, 34465, 11521, 11521, 69680, 96, 15),
    "weather": DatasetPreset("weather", 21, 36792, 5271, 10540, 52696, 144, 10),
    "ecl": DatasetPreset("ecl", 321, 18317, 2633, 5261, 26304, 24, 60),
}


@dataclass(frozen=True)
class Series:
    """A multichannel time series: n_steps x n_channels values plus names."""

    values: Tensor2
    channel_names: tuple
    timestamps: tuple | None = None

    def __post_init__(self):
        if self.values.cols < 1:
            raise ValueError("Series needs at least one channel")
        if len(self.channel_names) != self.values.cols:
            raise ValueError(
                f"{len(self.channel_names)} channel names for "
                f"{self.values.cols} channels"
            )
        if self.timestamps is not None and len(self.timestamps) != self.values.rows:
            raise ValueError("timestamp count does not match row count")

    @property
    def n_steps(self):
        return self.values.rows

    @property
    def n_channels(self):
        return self.values.cols

    def slice_rows(self, start, stop):
        ts = None if self.timestamps is None else self.timestamps[start:stop]
        return Series(
            Tensor2._wrap(self.values.array[start:stop]),
            self.channel_names,
            ts,
        )


@dataclass(frozen=True)
class Window:
    """One attack instance: an input history and the future that follows it."""

    input: Tensor2
    truth: Tensor2
    origin_index: int

    def __post_init__(self):
        if self.input.cols != self.truth.cols:
            raise ValueError(
                f"window channels differ: input {self.input.cols}, "
                f"truth {self.truth.cols}"
            )


@dataclass(frozen=True, eq=False)
class NormStats:
    """Per-channel mean and standard deviation fitted on a training split."""

    mean: np.ndarray
    std: np.ndarray

    def close_to(self, other, tol=1e-9):
        return (
            self.mean.shape == other.mean.shape
            and np.allclose(self.mean, other.mean, atol=tol, rtol=0)
            and np.allclose(self.std, other.std, atol=tol, rtol=0)
        )


def load_csv(path):
    """Load a CSV whose first column is a timestamp and the rest numeric.

    A header row is required; its first cell names the timestamp column and
    the remaining cells become channel names.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file, expected a header row") from None
        if len(header) < 2:
            raise ValueError(f"{path}: need a timestamp column plus channels")
        names = tuple(h.strip() for h in header[1:])
        timestamps = []
        rows = []
        for i, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise ValueError(
                    f"{path}: row {i} has {len(row)} cells, expected {len(header)}"
                )
            timestamps.append(row[0])
            try:
                rows.append([float(cell) for cell in row[1:]])
            except ValueError:
                for j, cell in enumerate(row[1:], start=1):
                    try:
                        float(cell)
                    except ValueError:
                        raise ValueError(
                            f"{path}: row {i}, column {header[j]!r}: "
                            f"non-numeric cell {cell!r}"
                        ) from None
                raise
    if not rows:
        raise ValueError(f"{path}: no data rows")
    return Series(Tensor2(np.array(rows)), names, tuple(timestamps))


def write_csv(series, path):
    """Write a Series in the same CSV layout that load_csv reads."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["date", *series.channel_names])
        arr = series.values.array
        for i in range(series.n_steps):
            ts = series.timestamps[i] if series.timestamps else str(i)
            writer.writerow([ts, *(repr(v) for v in arr[i])])


def split(series, kind):
    """Chronological train/val/test split.

    ``kind`` is either a preset name (Table-style fixed row counts) or a
    (train, val, test) triple of fractions summing to at most 1.
    """
    if isinstance(kind, str):
        try:
            preset = PRESETS[kind]
        except KeyError:
            raise ValueError(
                f"unknown dataset preset {kind!r}; choose from "
                f"{sorted(PRESETS)}"
            ) from None
        counts = (preset.train_rows, preset.val_rows, preset.test_rows)
    else:
        fracs = tuple(float(f) for f in kind)
        if len(fracs) != 3 or any(f < 0 for f in fracs) or sum(fracs) > 1 + 1e-12:
            raise ValueError(f"split fractions must be 3 non-negatives summing <= 1, got {kind}")
        counts = tuple(int(series.n_steps * f) for f in fracs)
    total = sum(counts)
    if total > series.n_steps:
        raise ValueError(
            f"series has {series.n_steps} steps, split needs {total}"
        )
    a, b, c = counts
    return (
        series.slice_rows(0, a),
        series.slice_rows(a, a + b),
        series.slice_rows(a + b, a + b + c),
    )


def fit_zscore(train):
    """Per-channel mean/std from a training split (population std).

    Constant channels get std clamped to 1 with a warning so degenerate
    synthetic inputs stay usable.
    """
    arr = train.values.array
    mean = arr.mean(axis=0)
    std = arr.std(axis=0)
    zero = std == 0.0
    if zero.any():
        names = [train.channel_names[i] for i in np.flatnonzero(zero)]
        log.warning("zero-variance channels %s: clamping std to 1", names)
        std = np.where(zero, 1.0, std)
    return NormStats(mean=mean, std=std)


def apply_zscore(series, stats):
    arr = (series.values.array - stats.mean) / stats.std
    return Series(Tensor2(arr), series.channel_names, series.timestamps)


def invert_zscore(series, stats):
    arr = series.values.array * stats.std + stats.mean
    return Series(Tensor2(arr), series.channel_names, series.timestamps)


def make_windows(series, input_len, horizon, stride=1):
    """Sliding windows of ``input_len`` history plus ``horizon`` truth.

    Origins run 0, stride, 2*stride, ...; returns an empty list when the
    series is too short. Window tensors are zero-copy views of the series.
    """
    if input_len < 1 or horizon < 1 or stride < 1:
        raise ValueError("input_len, horizon and stride must all be >= 1")
    n = series.n_steps
    arr = series.values.array
    windows = []
    last_origin = n - input_len - horizon
    origin = 0
    while origin <= last_origin:
        windows.append(
            Window(
                input=Tensor2._wrap(arr[origin : origin + input_len]),
                truth=Tensor2._wrap(
                    arr[origin + input_len : origin + input_len + horizon]
                ),
                origin_index=origin,
            )
        )
        origin += stride
    return windows


# -- synthetic data -----------------------------------------------------------


def _timestamps(n, step_minutes, start="2016-07-01 00:00:00"):
    t0 = datetime.datetime.fromisoformat(start)
    step = datetime.timedelta(minutes=step_minutes)
    return tuple((t0 + i * step).strftime("%Y-%m-%d %H:%M:%S") for i in range(n))


def ett_like(preset="etth1", seed=0, n_steps=None):
    """Deterministic stand-in for a benchmark dataset.

    Channels mix daily and weekly harmonics, a slow drift, and heavy-tailed
    AR(1) noise; the mix is chosen so that a trained linear forecaster lands
    in the error range typical for these benchmarks. Real CSVs can be used
    instead wherever a Series is accepted.
    """
    if preset not in PRESETS:
        raise ValueError(f"unknown dataset preset {preset!r}")
    spec = PRESETS[preset]
    n = int(n_steps) if n_steps is not None else spec.default_rows
    if n < 1:
        raise ValueError("n_steps must be positive")
    rng = np.random.default_rng(seed)
    period = spec.steps_per_day
    t = np.arange(n, dtype=np.float64)
    values = np.empty((n, spec.n_channels))
    for c in range(spec.n_channels):
        daily_amp = rng.uniform(0.8, 1.2)
        half_amp = rng.uniform(0.2, 0.4)
        weekly_amp = rng.uniform(0.5, 0.9)
        phases = rng.uniform(0.0, 2.0 * np.pi, size=4)
        signal = (
            daily_amp * np.sin(2.0 * np.pi * t / period + phases[0])
            + half_amp * np.sin(4.0 * np.pi * t / period + phases[1])
            + weekly_amp * np.sin(2.0 * np.pi * t / (7 * period) + phases[2])
            + 0.5 * np.sin(2.0 * np.pi * t / (n / 3.0) + phases[3])
            + rng.uniform(-0.3, 0.3) * (t / n)
        )
        # AR(1) with Student-t innovations: unpredictable at long horizons,
        # heavier-tailed than the harmonics it rides on.
        phi = 0.85
        innov_scale = 0.30
        innov = innov_scale * rng.standard_t(df=5, size=n)
        noise = np.empty(n)
        acc = 0.0
        for i in range(n):
            acc = phi * acc + innov[i]
            noise[i] = acc
        offset = rng.uniform(-5.0, 5.0)
        scale = rng.uniform(0.5, 3.0)
        values[:, c] = offset + scale * (signal + noise)
    names = ETT_CHANNELS if spec.n_channels == 7 else tuple(
        f"V{i + 1}" for i in range(spec.n_channels)
    )
    return Series(Tensor2(values), names, _timestamps(n, spec.step_minutes))


def last_value_windows(n_windows, input_len, horizon, n_channels=1, seed=0):
    """Noiseless supervised task: every future step equals the last input row.

    A linear forecaster can represent this mapping exactly, which makes the
    task a convenient training and attack-efficacy fixture.
    """
    if n_windows < 1:
        raise ValueError("n_windows must be >= 1")
    rng = np.random.default_rng(seed)
    windows = []
    for i in range(n_windows):
        steps = rng.normal(0.0, 0.25, size=(input_len, n_channels))
        x = np.cumsum(steps, axis=0)
        x -= x.mean(axis=0)
        scale = np.maximum(x.std(axis=0), 1e-6)
        x /= scale
        truth = np.tile(x[-1], (horizon, 1))
        windows.append(Window(Tensor2(x), Tensor2(truth), origin_index=i))
    return windows
