"""Joint synthetic electricity / travel-time scenarios with planted coupling.

Each household-day follows one of ``K_true`` template profiles drawn from a
per-day categorical distribution. Each segment's CST on a day is

    base_cst + offset + sum_k coupling_k * share_k + noise

where share_k is the realized fraction of households in template k. Travel
times sit at free flow (ratio 1) except for one block at ratio 2.5 that
starts at the planted CST (rounded to the grid) and lasts the planted
duration, so extraction recovers both exactly up to grid rounding. An
optional linear ramp below the threshold can precede the block.
"""

from __future__ import annotations

import datetime as dt
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .data import (
    ProfilePanel,
    TimeGrid,
    TravelTimeSeries,
    _parse_clock,
    calendar_mask,
    write_electricity_csv,
    write_travel_time_csv,
)
from .errors import ConfigError


@dataclass
class ScenarioSpec:
    H: int = 322
    D: int = 79
    K_true: int = 10
    interval_minutes: int = 5
    profile_window: tuple = ("00:00", "06:00")
    start_date: str = "2014-05-06"
    weekdays: tuple = ("Tue", "Wed", "Thu")
    pattern_templates: list | None = None
    day_concentration: float = 1.0
    pattern_day_distribution: list | None = None
    coupling: list | None = None
    base_cst: float = 7.0
    cst_noise_sd: float = 0.1
    duration_base: float = 1.5
    duration_coupling: list | None = None
    duration_noise_sd: float = 0.1
    profile_noise_sd: float = 0.02
    household_scale_sd: float = 0.5
    n_segments: int = 3
    segment_offsets: list | None = None
    fftt_range: tuple = (60.0, 180.0)
    congested_ratio: float = 2.5
    tt_noise_sd: float = 0.0
    ramp_hours: float = 0.0
    ramp_peak: float = 1.95
    no_congestion_prob: float = 0.0
    search_window: tuple = ("05:00", "12:00")
    persistence: int = 3
    seed: int = 0

    def grid(self) -> TimeGrid:
        return TimeGrid.between(*self.profile_window, interval_minutes=self.interval_minutes)

    def resolved_coupling(self) -> np.ndarray:
        if self.coupling is None:
            return np.array([0.25 if k % 2 == 0 else -0.25 for k in range(self.K_true)])
        c = np.asarray(self.coupling, dtype=float)
        if c.shape != (self.K_true,):
            raise ConfigError(f"coupling needs {self.K_true} entries")
        return c

    def resolved_duration_coupling(self) -> np.ndarray:
        if self.duration_coupling is None:
            return self.resolved_coupling()
        c = np.asarray(self.duration_coupling, dtype=float)
        if c.shape != (self.K_true,):
            raise ConfigError(f"duration_coupling needs {self.K_true} entries")
        return c

    def resolved_offsets(self) -> np.ndarray:
        if self.segment_offsets is None:
            return np.linspace(-0.25, 0.25, self.n_segments) if self.n_segments > 1 else np.zeros(1)
        off = np.asarray(self.segment_offsets, dtype=float)
        if off.shape != (self.n_segments,):
            raise ConfigError(f"segment_offsets needs {self.n_segments} entries")
        return off


def analysis_days(start: str, n: int, weekdays) -> list[dt.date]:
    """The first ``n`` dates on or after ``start`` whose weekday is in ``weekdays``."""
    days, d = [], dt.date.fromisoformat(start)
    while len(days) < n:
        if calendar_mask([d], weekdays).all():
            days.append(d)
        d += dt.timedelta(days=1)
    return days


def make_templates(K: int, grid: TimeGrid, rng: np.random.Generator) -> np.ndarray:
    """K smooth non-negative load shapes that differ throughout the window.

    Bumps sit every 30 minutes with random heights, so any sub-window of an
    hour or more still tells the templates apart.
    """
    hours = grid.hours() + grid.interval_minutes / 120.0
    centers = np.arange(grid.start_minute / 60.0, grid.end_minute / 60.0 + 1e-9, 0.5)
    templates = np.empty((K, grid.count))
    for k in range(K):
        base = rng.uniform(0.05, 0.15)
        heights = rng.exponential(0.3, size=len(centers)) * (rng.random(len(centers)) < 0.6)
        bumps = heights[:, None] * np.exp(-0.5 * ((hours[None, :] - centers[:, None]) / 0.25) ** 2)
        templates[k] = base + bumps.sum(axis=0)
    return templates


@dataclass
class SyntheticDataset:
    spec: ScenarioSpec
    panel: ProfilePanel
    series: list
    truth: dict = field(repr=False)

    def write(self, outdir) -> dict:
        out = Path(outdir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {
            "electricity": out / "electricity.csv",
            "travel_times": out / "travel_times.csv",
            "ground_truth": out / "ground_truth.json",
        }
        write_electricity_csv(self.panel, paths["electricity"])
        write_travel_time_csv(self.series, paths["travel_times"])
        paths["ground_truth"].write_text(json.dumps(self.truth, indent=1, sort_keys=True) + "\n")
        return paths


def generate(spec: ScenarioSpec) -> SyntheticDataset:
    if not 1.0 <= spec.ramp_peak < 2.0 or spec.ramp_hours < 0:
        raise ConfigError("ramp_peak must lie in [1, 2) and ramp_hours must be non-negative")
    rng = np.random.default_rng(spec.seed)
    grid = spec.grid()
    full = TimeGrid.full_day(spec.interval_minutes)
    K, H, D = spec.K_true, spec.H, spec.D
    days = analysis_days(spec.start_date, D, spec.weekdays)

    if spec.pattern_templates is None:
        templates = make_templates(K, grid, rng)
    else:
        templates = np.asarray(spec.pattern_templates, dtype=float)
        if templates.shape != (K, grid.count) or (templates < 0).any():
            raise ConfigError(f"pattern_templates must be a non-negative ({K}, {grid.count}) array")

    if spec.pattern_day_distribution is None:
        weights = rng.dirichlet(np.full(K, spec.day_concentration), size=D)
    else:
        weights = np.asarray(spec.pattern_day_distribution, dtype=float)
        if weights.shape != (D, K) or (weights < 0).any() or not np.allclose(weights.sum(axis=1), 1.0):
            raise ConfigError("pattern_day_distribution must be (D, K) rows summing to 1")

    z = np.empty((H, D), dtype=np.int64)
    for d in range(D):
        z[:, d] = rng.choice(K, size=H, p=weights[d])
    scale = np.exp(spec.household_scale_sd * rng.standard_normal(H))
    noise = spec.profile_noise_sd * rng.standard_normal((H, D, grid.count))
    values = np.clip(templates[z] + noise, 0.0, None) * scale[:, None, None]
    values = np.round(values, 4)
    households = tuple(f"h{h:04d}" for h in range(H))
    panel = ProfilePanel(households, tuple(days), values, grid)

    shares = np.stack([(z == k).mean(axis=0) for k in range(K)], axis=1)
    coupling, dcoupling = spec.resolved_coupling(), spec.resolved_duration_coupling()
    offsets = spec.resolved_offsets()
    win_lo, win_hi = (_parse_clock(w) for w in spec.search_window)
    step = spec.interval_minutes

    series, seg_truth = [], []
    for s in range(spec.n_segments):
        seg = f"seg{s + 1:02d}"
        fftt = float(np.round(rng.uniform(*spec.fftt_range), 1))
        cst = spec.base_cst + offsets[s] + shares @ coupling + spec.cst_noise_sd * rng.standard_normal(D)
        dur = spec.duration_base + shares @ dcoupling + spec.duration_noise_sd * rng.standard_normal(D)
        congested = rng.random(D) >= spec.no_congestion_prob
        start_idx = np.round(cst * 60 / step).astype(int)
        n_int = np.maximum(spec.persistence, np.round(dur * 60 / step).astype(int))
        for d, day in enumerate(days):
            if congested[d]:
                lo_min = start_idx[d] * step
                if not win_lo <= lo_min < win_hi or start_idx[d] + n_int[d] > full.count:
                    raise ConfigError(
                        f"planted CST {cst[d]:.3f} h / duration {dur[d]:.3f} h on {day} does not fit the search window"
                    )
            ratio = np.ones(full.count)
            if spec.tt_noise_sd > 0:
                ratio += np.minimum(np.abs(spec.tt_noise_sd * rng.standard_normal(full.count)), 0.9)
            if congested[d]:
                n_ramp = min(int(round(spec.ramp_hours * 60 / step)), start_idx[d])
                if n_ramp:
                    # linear build-up below the threshold, visible to a forecaster before the CST
                    ratio[start_idx[d] - n_ramp : start_idx[d]] = np.maximum(
                        ratio[start_idx[d] - n_ramp : start_idx[d]],
                        np.linspace(1.0, spec.ramp_peak, n_ramp + 1)[1:])
                ratio[start_idx[d] : start_idx[d] + n_int[d]] = spec.congested_ratio
            series.append(TravelTimeSeries(seg, day, np.round(fftt * ratio, 3), full))
        seg_truth.append({
            "segment_id": seg,
            "fftt_s": fftt,
            "offset_h": float(offsets[s]),
            "congested": congested.tolist(),
            "cst_planted_h": cst.tolist(),
            "duration_planted_h": dur.tolist(),
            "cst_grid_h": [float(i * step / 60) if c else None for i, c in zip(start_idx, congested)],
            "duration_grid_h": [float(n * step / 60) if c else None for n, c in zip(n_int, congested)],
        })

    spec_dict = asdict(spec)
    spec_dict["pattern_templates"] = templates.tolist()
    truth = {
        "spec": spec_dict,
        "days": [d.isoformat() for d in days],
        "households": list(households),
        "coupling": coupling.tolist(),
        "duration_coupling": dcoupling.tolist(),
        "day_weights": weights.tolist(),
        "household_scale": scale.tolist(),
        "pattern_assignment": (z + 1).tolist(),
        "shares": shares.tolist(),
        "segments": seg_truth,
    }
    return SyntheticDataset(spec, panel, series, truth)
