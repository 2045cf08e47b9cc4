"""Uniformly sampled power time series: ingestion, resampling, alignment,
date splitting, normalization, and windowing.

Conventions used throughout the package:

* A channel is a :class:`PowerSeries`: watt readings on an implicit grid
  ``start_time + i * period`` (UTC seconds). Timestamps are never stored.
* Gaps are ``NaN``. Non-gap values are finite and >= 0.
* All objects are immutable after construction; every operation returns a
  new object.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from datetime import datetime, timezone

import numpy as np

from .errors import DataError

GAP = float("nan")

GAP_POLICIES = ("fill_zero", "forward_fill", "drop_row")


def date_to_epoch(day: str) -> int:
    """UTC midnight of an ISO date ('2014-03-13') as seconds since the epoch."""
    dt = datetime.strptime(day, "%Y-%m-%d").replace(tzinfo=timezone.utc)
    return int(dt.timestamp())


def _as_channel(values, label: str = "") -> np.ndarray:
    # copy so freezing the channel never flips a caller's array read-only
    arr = np.array(values, dtype=np.float64)
    if arr.ndim != 1 or arr.size < 1:
        raise DataError(f"channel {label!r}: values must be a non-empty 1-d sequence")
    finite = np.isfinite(arr)
    gaps = np.isnan(arr)
    if not np.all(finite | gaps):
        raise DataError(f"channel {label!r}: values must be finite or gap markers")
    if np.any(arr[finite] < 0):
        raise DataError(f"channel {label!r}: negative watt reading")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class PowerSeries:
    """One channel of watt readings on a uniform time grid.

    ``values`` is a read-only float64 array; ``NaN`` marks a gap. The
    timestamp of sample ``i`` is exactly ``start_time + i * period``.
    """

    start_time: int
    period: float
    values: np.ndarray
    label: str = ""

    def __post_init__(self):
        if self.period <= 0:
            raise DataError("period must be > 0")
        object.__setattr__(self, "values", _as_channel(self.values, self.label))

    def __len__(self) -> int:
        return self.values.size

    @property
    def end_time(self) -> float:
        """Exclusive end of the covered range."""
        return self.start_time + len(self) * self.period

    def timestamps(self) -> np.ndarray:
        return self.start_time + np.arange(len(self)) * self.period

    @property
    def has_gaps(self) -> bool:
        return bool(np.isnan(self.values).any())

    def with_values(self, values, label: str | None = None) -> "PowerSeries":
        return PowerSeries(self.start_time, self.period,
                           np.array(values, dtype=np.float64),
                           self.label if label is None else label)


@dataclass(frozen=True)
class AlignedDataset:
    """An aggregate channel plus per-appliance channels on one shared grid.

    Construction requires identical grid parameters and no remaining gaps in
    any channel. The residual aggregate minus the appliance sum is the model
    noise; it is never materialized as a channel.
    """

    aggregate: PowerSeries
    appliances: tuple[PowerSeries, ...]

    def __post_init__(self):
        object.__setattr__(self, "appliances", tuple(self.appliances))
        channels = (self.aggregate, *self.appliances)
        for ch in channels:
            if (ch.start_time, ch.period, len(ch)) != (
                self.aggregate.start_time,
                self.aggregate.period,
                len(self.aggregate),
            ):
                raise DataError(f"channel {ch.label!r} is not on the shared grid")
            if ch.has_gaps:
                raise DataError(f"channel {ch.label!r} still contains gaps")

    def __len__(self) -> int:
        return len(self.aggregate)

    @property
    def start_time(self) -> int:
        return self.aggregate.start_time

    @property
    def period(self) -> float:
        return self.aggregate.period

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(a.label for a in self.appliances)

    def appliance(self, label: str) -> PowerSeries:
        for a in self.appliances:
            if a.label == label:
                return a
        raise KeyError(f"no appliance channel {label!r}")

    def take(self, start: int, stop: int) -> "AlignedDataset":
        """Contiguous sample slice [start, stop) as a new dataset."""
        if not 0 <= start < stop <= len(self):
            raise DataError("slice outside dataset")
        t0 = int(self.start_time + start * self.period)

        def cut(ch: PowerSeries) -> PowerSeries:
            return PowerSeries(t0, ch.period, ch.values[start:stop].copy(), ch.label)

        return AlignedDataset(cut(self.aggregate), tuple(cut(a) for a in self.appliances))


@dataclass(frozen=True)
class SplitSpec:
    """Half-open train/validation/test date boundaries, UTC epoch seconds."""

    train_start: int
    train_end: int
    val_end: int
    test_end: int

    def __post_init__(self):
        if not self.train_start < self.train_end < self.val_end < self.test_end:
            raise DataError("split boundaries must be strictly increasing")

    @classmethod
    def from_dates(cls, train_start: str, train_end: str, val_end: str, test_end: str) -> "SplitSpec":
        return cls(*(date_to_epoch(d) for d in (train_start, train_end, val_end, test_end)))


def load_csv(stream, period: float | None = None) -> list[PowerSeries]:
    """Parse the documented CSV dataset format into one series per column.

    Format: header ``timestamp,aggregate,<appliance>,...``; integer UTC-second
    timestamps, strictly increasing; empty cell = gap. The grid period is
    inferred as the smallest timestamp delta unless given. Rows missing from
    the grid become gaps in every channel.
    """
    if isinstance(stream, (str, bytes)):
        raise TypeError("load_csv takes an open stream or file object, not a path string")
    raw = stream.read()
    if isinstance(raw, bytes):
        raw = raw.decode("utf-8")
    reader = csv.reader(io.StringIO(raw))
    try:
        header = next(reader)
    except StopIteration:
        raise DataError("empty CSV") from None
    header = [h.strip() for h in header]
    if len(header) < 2 or header[0] != "timestamp":
        raise DataError("CSV header must be 'timestamp,<channel>,...'")
    labels = header[1:]

    times: list[int] = []
    columns: list[list[float]] = [[] for _ in labels]
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise DataError(f"line {lineno}: expected {len(header)} cells, got {len(row)}")
        try:
            t = int(row[0])
        except ValueError:
            raise DataError(f"line {lineno}: unparseable timestamp {row[0]!r}") from None
        if times and t <= times[-1]:
            raise DataError(f"line {lineno}: non-monotone timestamps")
        times.append(t)
        for j, cell in enumerate(row[1:]):
            cell = cell.strip()
            if cell == "":
                columns[j].append(GAP)
            else:
                try:
                    columns[j].append(float(cell))
                except ValueError:
                    raise DataError(f"line {lineno}: unparseable number {cell!r}") from None

    if not times:
        raise DataError("CSV contains zero data rows")
    ts = np.asarray(times, dtype=np.int64)
    if period is None:
        if ts.size < 2:
            raise DataError("cannot infer period from a single row; pass period=")
        period = float(np.diff(ts).min())
    if period <= 0:
        raise DataError("period must be > 0")
    offsets = (ts - ts[0]) / period
    idx = np.rint(offsets).astype(np.int64)
    if not np.allclose(offsets, idx):
        raise DataError("timestamps do not lie on a uniform grid")

    n = int(idx[-1]) + 1
    out = []
    for label, col in zip(labels, columns):
        values = np.full(n, GAP)
        values[idx] = col
        out.append(PowerSeries(int(ts[0]), period, values, label))
    return out


def write_csv(ds_or_channels, stream) -> None:
    """Write channels in the documented CSV format; gaps become empty cells."""
    if isinstance(ds_or_channels, AlignedDataset):
        channels = [ds_or_channels.aggregate, *ds_or_channels.appliances]
    else:
        channels = list(ds_or_channels)
    first = channels[0]
    for ch in channels:
        if (ch.start_time, ch.period, len(ch)) != (first.start_time, first.period, len(first)):
            raise DataError("write_csv needs channels on one shared grid")
    stream.write("timestamp," + ",".join(ch.label for ch in channels) + "\n")
    times = first.timestamps()
    for i in range(len(first)):
        cells = [str(int(times[i]))]
        for ch in channels:
            v = ch.values[i]
            cells.append("" if np.isnan(v) else repr(float(v)))
        stream.write(",".join(cells) + "\n")


def resample(series: PowerSeries, target_period: float, max_gap: int = 3) -> PowerSeries:
    """Change the grid period by an integer factor.

    Downsampling takes per-bin means, skipping gaps; an all-gap bin stays a
    gap, and a trailing partial bin is dropped. Upsampling forward-fills,
    reaching back across at most ``max_gap`` source gaps.
    """
    if target_period <= 0:
        raise DataError("target_period must be > 0")
    if target_period == series.period:
        return series
    if target_period > series.period:
        ratio = target_period / series.period
        n = int(round(ratio))
        if not math.isclose(ratio, n) or n < 1:
            raise DataError("target_period must be an integer multiple of the period")
        nbins = len(series) // n
        if nbins == 0:
            raise DataError("series shorter than one target bin")
        chunks = series.values[: nbins * n].reshape(nbins, n)
        counts = np.sum(~np.isnan(chunks), axis=1)
        with np.errstate(invalid="ignore"):
            sums = np.nansum(chunks, axis=1)
            means = np.where(counts > 0, sums / np.maximum(counts, 1), GAP)
        return PowerSeries(series.start_time, target_period, means, series.label)

    ratio = series.period / target_period
    k = int(round(ratio))
    if not math.isclose(ratio, k) or k < 1:
        raise DataError("period must be an integer multiple of target_period")
    filled = _forward_fill(series.values, max_gap)
    out = np.repeat(filled, k)
    return PowerSeries(series.start_time, target_period, out, series.label)


def _forward_fill(values: np.ndarray, max_gap: int) -> np.ndarray:
    """Forward-fill NaN runs of length <= max_gap; longer runs stay gaps."""
    out = values.copy()
    isnan = np.isnan(out)
    if not isnan.any() or max_gap <= 0:
        return out
    idx = np.arange(out.size)
    last_valid = np.where(~isnan, idx, -1)
    np.maximum.accumulate(last_valid, out=last_valid)
    reach = (last_valid >= 0) & (idx - last_valid <= max_gap)
    fill = isnan & reach
    out[fill] = out[last_valid[fill]]
    return out


def align(aggregate: PowerSeries, appliances, gap_policy: str = "forward_fill",
          max_gap: int = 3) -> AlignedDataset:
    """Trim all channels to their common time range and resolve gaps.

    ``forward_fill`` fills gaps from the most recent reading (at most
    ``max_gap`` samples back) and zeroes whatever remains, so no load is
    fabricated over long outages. ``fill_zero`` zeroes every gap.
    ``drop_row`` removes grid points where any channel has a gap, which must
    leave a single contiguous run.
    """
    if gap_policy not in GAP_POLICIES:
        raise DataError(f"unknown gap_policy {gap_policy!r}")
    channels = [aggregate, *appliances]
    period = aggregate.period
    if any(ch.period != period for ch in channels):
        raise DataError("mixed periods; resample channels first")
    for ch in channels:
        if (ch.start_time - aggregate.start_time) % period != 0:
            raise DataError(f"channel {ch.label!r} grid is offset by a non-multiple of the period")

    start = max(ch.start_time for ch in channels)
    end = min(ch.end_time for ch in channels)
    if end <= start:
        raise DataError("empty intersection of channel time ranges")

    def window(ch: PowerSeries) -> np.ndarray:
        i0 = int((start - ch.start_time) / period)
        i1 = int((end - ch.start_time) / period)
        return ch.values[i0:i1].copy()

    mats = [window(ch) for ch in channels]
    start = int(start)

    if gap_policy == "drop_row":
        keep = ~np.any(np.isnan(np.stack(mats)), axis=0)
        if not keep.any():
            raise DataError("drop_row removed every grid point")
        first, last = np.flatnonzero(keep)[[0, -1]]
        if not keep[first : last + 1].all():
            raise DataError("drop_row would fragment the grid into multiple runs")
        mats = [m[first : last + 1] for m in mats]
        start = int(start + first * period)
    else:
        for i, m in enumerate(mats):
            if gap_policy == "forward_fill":
                m = _forward_fill(m, max_gap)
            m[np.isnan(m)] = 0.0
            mats[i] = m

    series = [PowerSeries(start, period, m, ch.label) for ch, m in zip(channels, mats)]
    return AlignedDataset(series[0], tuple(series[1:]))


def split_by_date(ds: AlignedDataset, spec: SplitSpec):
    """Partition into (train, val, test) by half-open timestamp intervals.

    A sample at exactly a boundary belongs to the later split.
    """
    if spec.train_start < ds.start_time or spec.test_end > ds.aggregate.end_time:
        raise DataError("split boundaries lie outside the data range")

    def index_of(t: int) -> int:
        return int(math.ceil((t - ds.start_time) / ds.period))

    i0, i1, i2, i3 = (index_of(t) for t in
                      (spec.train_start, spec.train_end, spec.val_end, spec.test_end))
    if not (i0 < i1 < i2 < i3):
        raise DataError("a split interval contains no samples")
    return ds.take(i0, i1), ds.take(i1, i2), ds.take(i2, i3)


def standardize(values) -> tuple[np.ndarray, float, float]:
    """Z-score an array of watts; returns (normalized, mean, std).

    Population std; a std below 1e-6 W is replaced by 1.0 so constant
    channels normalize to zeros. Gaps pass through untouched. Returns plain
    arrays because z-scored values violate the non-negative watt invariant
    of PowerSeries.
    """
    if isinstance(values, PowerSeries):
        values = values.values
    arr = np.asarray(values, dtype=np.float64)
    valid = arr[~np.isnan(arr)]
    if valid.size < 2:
        raise DataError("standardize needs at least 2 non-gap samples")
    mean = float(valid.mean())
    std = float(valid.std())
    if std < 1e-6:
        std = 1.0
    return (arr - mean) / std, mean, std


def destandardize(values, mean: float, std: float) -> np.ndarray:
    return np.asarray(values, dtype=np.float64) * std + mean


def make_windows(values, window: int, stride: int = 1, pad: str = "zero"):
    """Slice a value array into fixed-size windows centered on grid points.

    Window ``i`` is centered on index ``stride * i`` (the center sits at
    offset ``window // 2`` inside the row); out-of-range positions are
    padded with zeros or the edge value. With stride 1 there is exactly one
    window per input sample. Returns (matrix, center indices).
    """
    if window < 1 or stride < 1:
        raise DataError("window and stride must be >= 1")
    if pad not in ("zero", "edge"):
        raise DataError(f"unknown pad mode {pad!r}")
    arr = np.asarray(values, dtype=np.float64)
    n = arr.size
    left = window // 2
    right = window - 1 - left
    mode = "constant" if pad == "zero" else "edge"
    padded = np.pad(arr, (left, right), mode=mode)
    all_rows = np.lib.stride_tricks.sliding_window_view(padded, window)
    centers = np.arange(0, n, stride)
    return all_rows[centers].copy(), centers
