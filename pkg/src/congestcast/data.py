"""Core domain types, CSV ingestion and profile normalization.

Units are fixed here so downstream modules never convert: electricity in kWh
per interval, travel time in seconds, times of day in fractional hours after
midnight. An interval is labeled by its start time (left-closed, right-open).
"""

from __future__ import annotations

import datetime as dt
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import pandas as pd

from .errors import ContractError, EmptyCalendarError, GapError, ParseError

ELECTRICITY_COLUMNS = ["household_id", "timestamp", "kwh"]
TRAVEL_COLUMNS = ["segment_id", "timestamp", "travel_time_s"]

WEEKDAY_NAMES = ("mon", "tue", "wed", "thu", "fri", "sat", "sun")


def _parse_clock(value) -> int:
    """'HH:MM' (or a minute count) -> minutes after midnight. '24:00' is allowed."""
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, dt.time):
        return value.hour * 60 + value.minute
    hh, mm = str(value).strip().split(":")
    return int(hh) * 60 + int(mm)


def format_clock(minute: int) -> str:
    return f"{minute // 60:02d}:{minute % 60:02d}"


@dataclass(frozen=True)
class TimeGrid:
    """A regular time-of-day grid of ``count`` intervals starting at ``start_minute``."""

    interval_minutes: int = 5
    start_minute: int = 0
    count: int = 72

    def __post_init__(self):
        if self.interval_minutes <= 0 or 60 % self.interval_minutes:
            raise ContractError(f"interval_minutes must divide 60, got {self.interval_minutes}")
        if self.count <= 0:
            raise ContractError("grid must contain at least one interval")
        if self.start_minute < 0 or self.end_minute > 24 * 60:
            raise ContractError("grid must lie within one day")

    @classmethod
    def between(cls, start, end, interval_minutes: int = 5) -> "TimeGrid":
        s, e = _parse_clock(start), _parse_clock(end)
        span = e - s
        if span <= 0 or span % interval_minutes:
            raise ContractError(
                f"window {start}-{end} is not a positive multiple of {interval_minutes} min"
            )
        return cls(interval_minutes, s, span // interval_minutes)

    @classmethod
    def full_day(cls, interval_minutes: int = 5) -> "TimeGrid":
        return cls(interval_minutes, 0, 24 * 60 // interval_minutes)

    @property
    def end_minute(self) -> int:
        return self.start_minute + self.count * self.interval_minutes

    @property
    def T(self) -> int:
        return self.count

    def minutes(self) -> np.ndarray:
        return self.start_minute + self.interval_minutes * np.arange(self.count)

    def hours(self) -> np.ndarray:
        """Start time of every interval in fractional hours."""
        return self.minutes() / 60.0

    def hour_of(self, index: int) -> float:
        return (self.start_minute + index * self.interval_minutes) / 60.0

    def index_of(self, minute: int) -> int | None:
        off = minute - self.start_minute
        if off < 0 or off % self.interval_minutes or off // self.interval_minutes >= self.count:
            return None
        return off // self.interval_minutes

    def sub_grid(self, start, end) -> "TimeGrid":
        g = TimeGrid.between(start, end, self.interval_minutes)
        if g.start_minute < self.start_minute or g.end_minute > self.end_minute:
            raise ContractError("sub-grid must lie inside the parent grid")
        return g

    def slice_of(self, other: "TimeGrid") -> slice:
        i0 = (other.start_minute - self.start_minute) // self.interval_minutes
        return slice(i0, i0 + other.count)

    def describe(self) -> str:
        return f"{format_clock(self.start_minute)}-{format_clock(self.end_minute)}/{self.interval_minutes}min"


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


def _unit_scale(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Scale along the last axis to unit sum of squares; all-zero rows pass through."""
    # divide by the largest magnitude first so tiny readings do not underflow
    peak = np.max(np.abs(values), axis=-1, keepdims=True)
    zero = peak == 0.0
    scaled = values / np.where(zero, 1.0, peak)
    norm = np.sqrt(np.sum(scaled * scaled, axis=-1, keepdims=True))
    out = np.where(zero, values, scaled / np.where(zero, 1.0, norm))
    return out, zero[..., 0]


@dataclass(frozen=True)
class DailyProfile:
    household_id: str
    day: dt.date
    values: np.ndarray
    normalized: bool = False
    all_zero: bool = False

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen(np.asarray(self.values, dtype=float)))

    @property
    def T(self) -> int:
        return len(self.values)


def normalize_profile(p: DailyProfile) -> DailyProfile:
    """Rescale a raw profile so its sum of squares is one."""
    if p.normalized:
        raise ContractError(f"profile ({p.household_id}, {p.day}) is already normalized")
    values, zero = _unit_scale(p.values)
    return DailyProfile(p.household_id, p.day, values, normalized=True, all_zero=bool(zero))


@dataclass
class IngestReport:
    source: str = ""
    grid: str = ""
    retained_households: list = field(default_factory=list)
    dropped_households: dict = field(default_factory=dict)
    retained_days: list = field(default_factory=list)
    dropped_days: dict = field(default_factory=dict)
    all_zero_profiles: list = field(default_factory=list)
    rows_outside_grid: int = 0

    def to_dict(self) -> dict:
        return {
            "source": self.source,
            "grid": self.grid,
            "retained_households": list(self.retained_households),
            "dropped_households": dict(sorted(self.dropped_households.items())),
            "retained_days": [str(d) for d in self.retained_days],
            "dropped_days": {str(k): v for k, v in sorted(self.dropped_days.items())},
            "all_zero_profiles": [[h, str(d)] for h, d in self.all_zero_profiles],
            "rows_outside_grid": self.rows_outside_grid,
        }

    def write(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")


@dataclass(frozen=True)
class ProfilePanel:
    """Dense H x D x T tensor of daily profiles on one grid."""

    households: tuple
    days: tuple
    values: np.ndarray
    grid: TimeGrid
    normalized: bool = False
    all_zero: np.ndarray | None = None
    report: IngestReport | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        H, D = len(self.households), len(self.days)
        if values.shape != (H, D, self.grid.count):
            raise ContractError(f"values shape {values.shape} != ({H}, {D}, {self.grid.count})")
        if np.isnan(values).any():
            raise ContractError("panel has missing cells")
        object.__setattr__(self, "households", tuple(self.households))
        object.__setattr__(self, "days", tuple(self.days))
        object.__setattr__(self, "values", _frozen(values))
        zero = self.all_zero
        if zero is None:
            zero = ~np.any(values != 0.0, axis=-1)
        object.__setattr__(self, "all_zero", _frozen(np.asarray(zero, dtype=bool)))

    @property
    def H(self) -> int:
        return len(self.households)

    @property
    def D(self) -> int:
        return len(self.days)

    @property
    def T(self) -> int:
        return self.grid.count

    def profile(self, h: int, d: int) -> DailyProfile:
        return DailyProfile(
            self.households[h], self.days[d], self.values[h, d], self.normalized, bool(self.all_zero[h, d])
        )

    def flat(self) -> np.ndarray:
        """(H*D, T) view, household-major."""
        return self.values.reshape(self.H * self.D, self.T)

    def select_days(self, mask) -> "ProfilePanel":
        mask = np.asarray(mask, dtype=bool)
        days = tuple(d for d, keep in zip(self.days, mask) if keep)
        return ProfilePanel(
            self.households, days, self.values[:, mask], self.grid, self.normalized, self.all_zero[:, mask]
        )

    def window(self, start, end) -> "ProfilePanel":
        """Restrict to a time-of-day sub-window (raw values; re-normalize afterwards)."""
        if self.normalized:
            raise ContractError("take the time window before normalizing")
        g = self.grid.sub_grid(start, end)
        return ProfilePanel(self.households, self.days, self.values[:, :, self.grid.slice_of(g)], g)


def normalize_panel(panel: ProfilePanel) -> ProfilePanel:
    if panel.normalized:
        raise ContractError("panel is already normalized")
    values, zero = _unit_scale(panel.values)
    return ProfilePanel(panel.households, panel.days, values, panel.grid, True, zero, report=panel.report)


def _weekday_index(name) -> int:
    if isinstance(name, (int, np.integer)):
        return int(name)
    key = str(name).strip().lower()[:3]
    if key not in WEEKDAY_NAMES:
        raise ContractError(f"unknown weekday {name!r}")
    return WEEKDAY_NAMES.index(key)


def _as_date(value) -> dt.date:
    if isinstance(value, dt.datetime):
        return value.date()
    if isinstance(value, dt.date):
        return value
    return dt.date.fromisoformat(str(value))


def calendar_mask(days: Sequence[dt.date], weekdays=None, day_range=None) -> np.ndarray:
    wd = None if weekdays is None else {_weekday_index(w) for w in weekdays}
    lo = hi = None
    if day_range is not None:
        lo, hi = day_range
        lo = None if lo is None else _as_date(lo)
        hi = None if hi is None else _as_date(hi)
    keep = []
    for d in days:
        ok = wd is None or d.weekday() in wd
        ok = ok and (lo is None or d >= lo) and (hi is None or d <= hi)
        keep.append(ok)
    return np.array(keep, dtype=bool)


def filter_calendar(panel: ProfilePanel, weekdays=None, day_range=None) -> ProfilePanel:
    """Keep the days whose weekday is in ``weekdays`` and that fall in ``day_range`` (inclusive)."""
    mask = calendar_mask(panel.days, weekdays, day_range)
    if not mask.any():
        raise EmptyCalendarError(f"no day of {len(panel.days)} survives the calendar filter")
    return panel.select_days(mask)


def _read_table(path, columns) -> pd.DataFrame:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    try:
        df = pd.read_csv(path, dtype=str, keep_default_na=False, na_filter=False)
    except pd.errors.ParserError as exc:
        raise ParseError(str(exc)) from exc
    if list(df.columns) != columns:
        raise ParseError(f"expected header {','.join(columns)}, got {','.join(df.columns)}", line=1)
    return df


def _parse_floats(col: pd.Series, what: str) -> np.ndarray:
    try:
        return col.astype(float).to_numpy()
    except ValueError:
        bad = pd.to_numeric(col, errors="coerce").isna().to_numpy()
        i = int(np.flatnonzero(bad)[0])
        raise ParseError(f"cannot parse {what} {col.iloc[i]!r}", line=i + 2) from None


def _parse_timestamps(col: pd.Series) -> pd.Series:
    ts = pd.to_datetime(col, format="ISO8601", errors="coerce")
    bad = ts.isna().to_numpy()
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise ParseError(f"cannot parse timestamp {col.iloc[i]!r}", line=i + 2)
    return ts


def _grid_positions(ts: pd.Series, grid: TimeGrid):
    """Map timestamps to (date, grid index); index -1 for rows outside the window."""
    minute = (ts.dt.hour * 60 + ts.dt.minute).to_numpy()
    seconds = ts.dt.second.to_numpy()
    off = minute - grid.start_minute
    misaligned = (off % grid.interval_minutes != 0) | (seconds != 0)
    inside = (off >= 0) & (off < grid.count * grid.interval_minutes)
    if (misaligned & inside).any():
        i = int(np.flatnonzero(misaligned & inside)[0])
        raise ParseError(f"timestamp {ts.iloc[i]} is not aligned to the {grid.interval_minutes}-min grid", line=i + 2)
    idx = np.where(inside, off // grid.interval_minutes, -1)
    return ts.dt.date.to_numpy(), idx


def load_electricity_csv(path, grid: TimeGrid, days: Iterable | None = None) -> ProfilePanel:
    """Read a ``household_id,timestamp,kwh`` file into a raw (unnormalized) panel.

    Only households observed on every requested day are kept (``days=None`` means
    every day present in the file). Households missing whole days are dropped with
    a warning; a kept household with a partial day is an error.
    """
    df = _read_table(path, ELECTRICITY_COLUMNS)
    kwh = _parse_floats(df["kwh"], "kwh")
    bad = ~np.isfinite(kwh) | (kwh < 0)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise ParseError(f"kwh must be a finite non-negative number, got {df['kwh'].iloc[i]!r}", line=i + 2)
    ts = _parse_timestamps(df["timestamp"])
    dates, idx = _grid_positions(ts, grid)
    report = IngestReport(source=str(path), grid=grid.describe(), rows_outside_grid=int((idx < 0).sum()))

    inside = idx >= 0
    hh = df["household_id"].to_numpy()[inside]
    dates, idx, kwh = dates[inside], idx[inside], kwh[inside]
    if days is None:
        all_days = sorted(set(dates))
    else:
        all_days = sorted({_as_date(d) for d in days})
        wanted = set(all_days)
        keep = np.array([d in wanted for d in dates], dtype=bool)
        hh, dates, idx, kwh = hh[keep], dates[keep], idx[keep], kwh[keep]
    if not all_days:
        raise EmptyCalendarError(f"{path}: no rows fall inside the requested days and grid")

    households = sorted(set(hh))
    h_pos = {h: i for i, h in enumerate(households)}
    d_pos = {d: i for i, d in enumerate(all_days)}
    hi = np.fromiter((h_pos[h] for h in hh), dtype=np.int64, count=len(hh))
    di = np.fromiter((d_pos[d] for d in dates), dtype=np.int64, count=len(dates))

    H, D, T = len(households), len(all_days), grid.count
    flat = (hi * D + di) * T + idx
    counts = np.bincount(flat, minlength=H * D * T)
    if (counts > 1).any():
        k = int(np.flatnonzero(counts > 1)[0])
        h, rem = divmod(k, D * T)
        d, t = divmod(rem, T)
        raise ParseError(f"duplicate reading for {households[h]} at {all_days[d]} {format_clock(grid.start_minute + t * grid.interval_minutes)}")
    values = np.full(H * D * T, np.nan)
    values[flat] = kwh
    values = values.reshape(H, D, T)

    observed = counts.reshape(H, D, T)
    day_seen = observed.any(axis=2)
    day_full = observed.all(axis=2)
    keep_h = day_seen.all(axis=1)
    for h in np.flatnonzero(~keep_h):
        missing = [str(all_days[d]) for d in np.flatnonzero(~day_seen[h])]
        report.dropped_households[households[h]] = f"absent on {len(missing)} day(s): {', '.join(missing[:5])}"
    if report.dropped_households:
        warnings.warn(
            f"dropped {len(report.dropped_households)} household(s) not present on every day: "
            + ", ".join(sorted(report.dropped_households)),
            stacklevel=2,
        )
    gaps = [(households[h], all_days[d]) for h, d in zip(*np.nonzero(keep_h[:, None] & day_seen & ~day_full))]
    if gaps:
        raise GapError(gaps)
    if not keep_h.any():
        raise EmptyCalendarError(f"{path}: no household is present on every day")

    kept = [households[h] for h in np.flatnonzero(keep_h)]
    panel_values = values[keep_h]
    report.retained_households = kept
    report.retained_days = list(all_days)
    panel = ProfilePanel(tuple(kept), tuple(all_days), panel_values, grid, report=report)
    report.all_zero_profiles = [(kept[h], all_days[d]) for h, d in zip(*np.nonzero(panel.all_zero))]
    return panel


def _stamp(day: dt.date, minute: int) -> str:
    return f"{day.isoformat()}T{minute // 60:02d}:{minute % 60:02d}"


def write_electricity_csv(panel: ProfilePanel, path) -> None:
    """Write a panel back out in the ingest schema (values written with ``repr`` so they round-trip)."""
    minutes = panel.grid.minutes()
    lines = [",".join(ELECTRICITY_COLUMNS)]
    for h, hid in enumerate(panel.households):
        for d, day in enumerate(panel.days):
            row = panel.values[h, d]
            lines.extend(f"{hid},{_stamp(day, m)},{float(v)!r}" for m, v in zip(minutes, row))
    Path(path).write_text("\n".join(lines) + "\n")


@dataclass(frozen=True)
class TravelTimeSeries:
    """Travel times (seconds) of one segment on one day; NaN marks a missing interval."""

    segment_id: str
    day: dt.date
    times: np.ndarray
    grid: TimeGrid = field(default_factory=TimeGrid.full_day)

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        if times.shape != (self.grid.count,):
            raise ContractError(f"series length {times.shape} != grid count {self.grid.count}")
        obs = times[~np.isnan(times)]
        if (obs <= 0).any() or not np.isfinite(obs).all():
            raise ContractError("travel times must be finite and positive")
        object.__setattr__(self, "times", _frozen(times))

    @property
    def missing(self) -> np.ndarray:
        return np.isnan(self.times)

    @property
    def complete(self) -> bool:
        return not self.missing.any()


def load_travel_time_csv(path, grid: TimeGrid | None = None) -> list[TravelTimeSeries]:
    """Read ``segment_id,timestamp,travel_time_s`` into one series per (segment, day).

    Absent intervals stay NaN; filling them is a congestion-module policy.
    """
    grid = grid or TimeGrid.full_day()
    df = _read_table(path, TRAVEL_COLUMNS)
    tt = _parse_floats(df["travel_time_s"], "travel_time_s")
    bad = ~np.isfinite(tt) | (tt <= 0)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise ParseError(f"travel time must be positive, got {df['travel_time_s'].iloc[i]!r}", line=i + 2)
    ts = _parse_timestamps(df["timestamp"])
    dates, idx = _grid_positions(ts, grid)
    seg = df["segment_id"].to_numpy()
    keep = idx >= 0
    frame = pd.DataFrame({"seg": seg[keep], "day": dates[keep], "idx": idx[keep], "tt": tt[keep]})
    if frame.duplicated(["seg", "day", "idx"]).any():
        i = int(np.flatnonzero(frame.duplicated(["seg", "day", "idx"]).to_numpy())[0])
        raise ParseError(f"duplicate reading for segment {frame.seg.iloc[i]} on {frame.day.iloc[i]}")
    out = []
    for (s, d), g in frame.groupby(["seg", "day"], sort=True):
        times = np.full(grid.count, np.nan)
        times[g["idx"].to_numpy()] = g["tt"].to_numpy()
        out.append(TravelTimeSeries(str(s), d, times, grid))
    return out


def write_travel_time_csv(series: Iterable[TravelTimeSeries], path) -> None:
    lines = [",".join(TRAVEL_COLUMNS)]
    for s in series:
        for m, v in zip(s.grid.minutes(), s.times):
            if not np.isnan(v):
                lines.append(f"{s.segment_id},{_stamp(s.day, int(m))},{float(v)!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def group_by_segment(series: Iterable[TravelTimeSeries]) -> dict[str, list[TravelTimeSeries]]:
    out: dict[str, list[TravelTimeSeries]] = {}
    for s in sorted(series, key=lambda s: (s.segment_id, s.day)):
        out.setdefault(s.segment_id, []).append(s)
    return out
