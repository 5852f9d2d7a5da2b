"""Congestion starting time (CST) and duration from travel-time series.

A segment is stationarily congested at interval t when travel time / FFTT is at
least ``ratio`` at t and for the following ``persistence - 1`` intervals
(ratio 2 over three 5-min intervals by default). Congestion ends at the start
of the first equally long run of intervals below the threshold.

Missing intervals never satisfy the congestion condition unless short gaps are
interpolated first (``fill_gaps``).
"""

from __future__ import annotations

import datetime as dt
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import pandas as pd

from .data import TravelTimeSeries, _parse_clock, group_by_segment
from .errors import ContractError, DataError

RECORD_COLUMNS = ["segment_id", "day", "cst_hours", "duration_hours", "fftt_s"]


@dataclass(frozen=True)
class CongestionParams:
    ratio: float = 2.0
    persistence: int = 3
    window: tuple = ("05:00", "12:00")
    fftt_mode: str = "min"
    fftt_percentile: float = 5.0
    fill_gaps: bool = False
    max_gap: int = 2

    def window_minutes(self) -> tuple[int, int]:
        lo, hi = (_parse_clock(w) for w in self.window)
        if not 0 <= lo < hi <= 24 * 60:
            raise ContractError(f"bad search window {self.window}")
        return lo, hi


@dataclass(frozen=True)
class CongestionRecord:
    segment_id: str
    day: dt.date
    cst: float | None
    duration: float | None
    fftt: float

    def __post_init__(self):
        if (self.cst is None) != (self.duration is None):
            raise ContractError("duration is present iff cst is present")
        if self.duration is not None and not self.duration > 0:
            raise ContractError("duration must be positive")

    @property
    def congested(self) -> bool:
        return self.cst is not None


def free_flow_travel_time(series: Iterable[TravelTimeSeries], mode: str = "min", percentile: float = 5.0) -> float:
    """FFTT of one segment: the minimum observed travel time over all its days.

    ``mode="percentile"`` uses a low percentile instead, which is not dragged
    down by a single spurious reading.
    """
    obs = [s.times[~s.missing] for s in series]
    values = np.concatenate(obs) if obs else np.empty(0)
    if values.size == 0:
        raise DataError("no observed travel times to compute FFTT from")
    if mode == "min":
        return float(values.min())
    if mode == "percentile":
        return float(np.percentile(values, percentile))
    raise ContractError(f"unknown FFTT mode {mode!r}")


def fill_short_gaps(times: np.ndarray, max_gap: int = 2) -> np.ndarray:
    """Linearly interpolate interior NaN runs of at most ``max_gap`` intervals."""
    times = np.array(times, dtype=float)
    miss = np.isnan(times)
    if not miss.any() or miss.all():
        return times
    idx = np.arange(len(times))
    i = 0
    while i < len(times):
        if not miss[i]:
            i += 1
            continue
        j = i
        while j < len(times) and miss[j]:
            j += 1
        if i > 0 and j < len(times) and j - i <= max_gap:
            times[i:j] = np.interp(idx[i:j], [i - 1, j], [times[i - 1], times[j]])
        i = j
    return times


def _prepared(series: TravelTimeSeries, fill_gaps: bool, max_gap: int) -> np.ndarray:
    return fill_short_gaps(series.times, max_gap) if fill_gaps else np.asarray(series.times)


def congested_mask(times: np.ndarray, fftt: float, ratio: float = 2.0) -> np.ndarray:
    """Per-interval condition r/FFTT >= ratio; missing values are False."""
    with np.errstate(invalid="ignore"):
        return np.asarray(times) / fftt >= ratio


def _run_starts(flags: np.ndarray, length: int) -> np.ndarray:
    """ok[t] is True iff flags[t:t+length] are all True (t = 0 .. T-length)."""
    c = np.concatenate([[0], np.cumsum(flags, dtype=np.int64)])
    return (c[length:] - c[:-length]) == length


def is_stationarily_congested(series: TravelTimeSeries, t: int, fftt: float, ratio: float = 2.0,
                              persistence: int = 3, fill_gaps: bool = False, max_gap: int = 2) -> bool:
    T = len(series.times)
    if t < 0 or t + persistence - 1 >= T:
        raise ContractError(f"interval {t} + persistence {persistence} runs past the end of the day")
    mask = congested_mask(_prepared(series, fill_gaps, max_gap), fftt, ratio)
    return bool(mask[t : t + persistence].all())


def _window_indices(series: TravelTimeSeries, window_minutes) -> tuple[int, int]:
    g = series.grid
    lo, hi = window_minutes
    i0 = max(0, math.ceil((lo - g.start_minute) / g.interval_minutes))
    i1 = min(g.count, math.ceil((hi - g.start_minute) / g.interval_minutes))
    return i0, i1


def cst_index(mask: np.ndarray, i0: int, i1: int, persistence: int) -> int | None:
    ok = _run_starts(mask, persistence)
    hits = np.flatnonzero(ok[i0 : min(i1, len(ok))])
    return int(hits[0]) + i0 if hits.size else None


def end_index(mask: np.ndarray, start: int, persistence: int) -> int:
    """Index where congestion starting at ``start`` ends; len(mask) if it never does."""
    below = _run_starts(~mask, persistence)
    hits = np.flatnonzero(below[start + 1 :])
    return int(hits[0]) + start + 1 if hits.size else len(mask)


def extract_cst(series: TravelTimeSeries, fftt: float, window=("05:00", "12:00"), ratio: float = 2.0,
                persistence: int = 3, fill_gaps: bool = False, max_gap: int = 2) -> float | None:
    """Start (hours) of the earliest interval in ``window`` where stationary congestion begins."""
    lo, hi = CongestionParams(window=tuple(window)).window_minutes()
    mask = congested_mask(_prepared(series, fill_gaps, max_gap), fftt, ratio)
    k = cst_index(mask, *_window_indices(series, (lo, hi)), persistence)
    return None if k is None else series.grid.hour_of(k)


def extract_duration(series: TravelTimeSeries, fftt: float, cst: float, ratio: float = 2.0,
                     persistence: int = 3, fill_gaps: bool = False, max_gap: int = 2) -> float:
    g = series.grid
    k = round((cst * 60 - g.start_minute) / g.interval_minutes)
    if not 0 <= k < g.count:
        raise ContractError(f"cst {cst} is outside the series grid")
    mask = congested_mask(_prepared(series, fill_gaps, max_gap), fftt, ratio)
    return g.hour_of(end_index(mask, k, persistence)) - g.hour_of(k)


def extract_record(series: TravelTimeSeries, fftt: float, params: CongestionParams = CongestionParams()) -> CongestionRecord:
    kw = dict(ratio=params.ratio, persistence=params.persistence, fill_gaps=params.fill_gaps, max_gap=params.max_gap)
    cst = extract_cst(series, fftt, params.window, **kw)
    dur = None if cst is None else extract_duration(series, fftt, cst, **kw)
    return CongestionRecord(series.segment_id, series.day, cst, dur, fftt)


def extract_records(series: Iterable[TravelTimeSeries], params: CongestionParams = CongestionParams()) -> list[CongestionRecord]:
    """Records for every (segment, day), ordered by segment then day; FFTT is per segment."""
    out = []
    for seg, items in group_by_segment(series).items():
        fftt = free_flow_travel_time(items, params.fftt_mode, params.fftt_percentile)
        out.extend(extract_record(s, fftt, params) for s in items)
    return out


def _fmt(v) -> str:
    return "" if v is None else repr(float(v))


def write_records(records: Sequence[CongestionRecord], path) -> None:
    lines = [",".join(RECORD_COLUMNS)]
    for r in records:
        lines.append(f"{r.segment_id},{r.day.isoformat()},{_fmt(r.cst)},{_fmt(r.duration)},{_fmt(r.fftt)}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_records(path) -> list[CongestionRecord]:
    df = pd.read_csv(path, dtype={"segment_id": str, "day": str}, float_precision="round_trip")
    if list(df.columns) != RECORD_COLUMNS:
        raise DataError(f"{path}: expected header {','.join(RECORD_COLUMNS)}")
    out = []
    for row in df.itertuples(index=False):
        cst = None if pd.isna(row.cst_hours) else float(row.cst_hours)
        dur = None if pd.isna(row.duration_hours) else float(row.duration_hours)
        out.append(CongestionRecord(row.segment_id, dt.date.fromisoformat(row.day), cst, dur, float(row.fftt_s)))
    return out


def records_by_segment(records: Iterable[CongestionRecord]) -> dict[str, list[CongestionRecord]]:
    out: dict[str, list[CongestionRecord]] = {}
    for r in sorted(records, key=lambda r: (r.segment_id, r.day)):
        out.setdefault(r.segment_id, []).append(r)
    return out
