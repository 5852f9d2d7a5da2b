import datetime as dt
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from conftest import full_rows, write_electricity
from congestcast.data import (
    DailyProfile,
    ProfilePanel,
    TimeGrid,
    TravelTimeSeries,
    filter_calendar,
    load_electricity_csv,
    load_travel_time_csv,
    normalize_panel,
    normalize_profile,
    write_electricity_csv,
    write_travel_time_csv,
)
from congestcast.errors import ContractError, EmptyCalendarError, GapError, ParseError

GRID = TimeGrid.between("00:00", "06:00")


def test_grid_shape():
    assert GRID.T == 72
    assert GRID.end_minute - GRID.start_minute == GRID.T * GRID.interval_minutes
    assert TimeGrid.full_day().T == 288
    with pytest.raises(ContractError):
        TimeGrid(interval_minutes=7)
    with pytest.raises(ContractError):
        TimeGrid.between("00:00", "00:07")


def test_grid_index_and_subgrid():
    assert GRID.index_of(65) == 13
    assert GRID.index_of(66) is None
    assert GRID.index_of(360) is None
    sub = GRID.sub_grid("02:00", "04:00")
    assert sub.T == 24 and GRID.slice_of(sub) == slice(24, 48)
    with pytest.raises(ContractError):
        GRID.sub_grid("05:00", "07:00")


def test_load_complete(tmp_path, two_days):
    path = tmp_path / "e.csv"
    write_electricity(path, full_rows(["A", "B"], two_days, GRID))
    panel = load_electricity_csv(path, GRID)
    assert (panel.H, panel.D, panel.T) == (2, 2, 72)
    assert panel.values[0, 0, 3] == pytest.approx(0.4)
    assert not panel.normalized


def test_household_missing_day_dropped(tmp_path, two_days):
    rows = full_rows(["A"], two_days, GRID) + full_rows(["B"], two_days[:1], GRID)
    path = tmp_path / "e.csv"
    write_electricity(path, rows)
    with pytest.warns(UserWarning, match="B"):
        panel = load_electricity_csv(path, GRID)
    assert panel.households == ("A",)
    assert "B" in panel.report.dropped_households


def test_partial_day_is_gap_error(tmp_path, two_days):
    rows = full_rows(["A"], two_days, GRID)
    del rows[10]
    path = tmp_path / "e.csv"
    write_electricity(path, rows)
    with pytest.raises(GapError, match=r"\(A, 2014-06-03\)"):
        load_electricity_csv(path, GRID)


def test_negative_kwh_reports_line(tmp_path, two_days):
    rows = full_rows(["h1"], two_days, GRID)
    rows[4] = ("h1", "2014-06-03T01:00", -0.2)
    path = tmp_path / "e.csv"
    write_electricity(path, rows)
    with pytest.raises(ParseError, match="line 6"):
        load_electricity_csv(path, GRID)


def test_malformed_rows(tmp_path, two_days):
    rows = full_rows(["h1"], two_days, GRID)
    rows[0] = ("h1", "not-a-time", 0.1)
    path = tmp_path / "e.csv"
    write_electricity(path, rows)
    with pytest.raises(ParseError, match="line 2"):
        load_electricity_csv(path, GRID)
    rows = full_rows(["h1"], two_days, GRID)
    rows[3] = ("h1", "2014-06-03T00:17", 0.1)
    write_electricity(path, rows)
    with pytest.raises(ParseError, match="aligned"):
        load_electricity_csv(path, GRID)
    rows = full_rows(["h1"], two_days, GRID) + [("h1", "2014-06-03T00:00", 0.5)]
    write_electricity(path, rows)
    with pytest.raises(ParseError, match="duplicate"):
        load_electricity_csv(path, GRID)


def test_rows_outside_window_ignored(tmp_path, two_days):
    rows = full_rows(["A"], two_days, GRID) + [("A", "2014-06-03T07:00", 9.0)]
    path = tmp_path / "e.csv"
    write_electricity(path, rows)
    panel = load_electricity_csv(path, GRID)
    assert panel.report.rows_outside_grid == 1
    assert panel.values.max() < 9.0


def test_roundtrip_bit_exact(tmp_path, rng, two_days):
    vals = np.round(rng.random((3, 2, 72)) * 3, 4)
    panel = ProfilePanel(("a", "b", "c"), tuple(two_days), vals, GRID)
    path = tmp_path / "e.csv"
    write_electricity_csv(panel, path)
    again = load_electricity_csv(path, GRID)
    assert np.array_equal(again.values, panel.values)
    assert again.households == panel.households and again.days == panel.days


@pytest.mark.parametrize(
    "raw, expected",
    [
        ([3, 4] + [0] * 70, [0.6, 0.8] + [0] * 70),
        ([1, 1, 1, 1], [0.5, 0.5, 0.5, 0.5]),
    ],
)
def test_normalize_examples(raw, expected):
    p = normalize_profile(DailyProfile("h", dt.date(2014, 6, 3), raw))
    assert np.allclose(p.values, expected, atol=1e-15)
    assert p.normalized and not p.all_zero


def test_normalize_all_zero_and_twice():
    p = normalize_profile(DailyProfile("h", dt.date(2014, 6, 3), np.zeros(72)))
    assert p.all_zero and not p.values.any()
    with pytest.raises(ContractError):
        normalize_profile(p)


@given(hnp.arrays(float, 72, elements=st.floats(0, 50, allow_subnormal=False)))
@settings(max_examples=200, deadline=None)
def test_normalize_properties(v):
    p = normalize_profile(DailyProfile("h", dt.date(2014, 6, 3), v))
    if not v.any():
        assert p.all_zero
        return
    assert np.sum(p.values**2) == pytest.approx(1.0, abs=1e-9)
    u = v / v.max()
    cos = p.values @ u / (np.linalg.norm(p.values) * np.linalg.norm(u))
    assert cos == pytest.approx(1.0, abs=1e-12)
    again = normalize_profile(DailyProfile("h", p.day, p.values))
    assert np.max(np.abs(again.values - p.values)) <= 1e-12


def test_panel_normalize_and_window(rng, two_days):
    vals = rng.random((2, 2, 72))
    vals[1, 1] = 0
    panel = ProfilePanel(("a", "b"), tuple(two_days), vals, GRID)
    norm = normalize_panel(panel)
    assert norm.all_zero[1, 1] and norm.all_zero.sum() == 1
    assert np.allclose(np.sum(norm.values[0] ** 2, axis=-1), 1.0)
    with pytest.raises(ContractError):
        norm.window("00:00", "02:00")
    win = panel.window("01:00", "02:00")
    assert win.T == 12 and np.array_equal(win.values, vals[:, :, 12:24])
    with pytest.raises(ValueError):
        panel.values[0, 0, 0] = 1.0


def _calendar_panel(days):
    return ProfilePanel(("a",), tuple(days), np.ones((1, len(days), 4)), TimeGrid(60, 0, 4))


def test_filter_calendar():
    days = [dt.date(2014, 6, 2) + dt.timedelta(days=i) for i in range(10)]
    # brute force: names of each weekday
    expected = [d for d in days if d.strftime("%a") in ("Tue", "Wed", "Thu")]
    out = filter_calendar(_calendar_panel(days), ["Tue", "Wed", "Thu"])
    assert list(out.days) == expected and len(expected) <= 6
    same = filter_calendar(_calendar_panel(days), ["Mon", "Tue", "Wed", "Thu", "Fri", "Sat", "Sun"],
                           (days[0], days[-1]))
    assert same.days == tuple(days)
    with pytest.raises(EmptyCalendarError):
        filter_calendar(_calendar_panel(days), None, ("2015-01-01", "2015-02-01"))


def _travel_rows(seg, day, times):
    out = []
    for t, v in enumerate(times):
        m = 5 * t
        if v is not None:
            out.append(f"{seg},{day}T{m // 60:02d}:{m % 60:02d},{v}")
    return out


def test_travel_time_loading(tmp_path):
    times = [100.0 + t for t in range(288)]
    path = tmp_path / "t.csv"
    path.write_text("segment_id,timestamp,travel_time_s\n" + "\n".join(_travel_rows("s1", "2014-06-03", times)) + "\n")
    (series,) = load_travel_time_csv(path)
    assert series.complete and series.times[5] == 105.0

    times[39] = None  # 03:15
    path.write_text("segment_id,timestamp,travel_time_s\n" + "\n".join(_travel_rows("s1", "2014-06-03", times)) + "\n")
    (series,) = load_travel_time_csv(path)
    assert not series.complete and list(np.flatnonzero(series.missing)) == [39]

    times[39] = 0
    path.write_text("segment_id,timestamp,travel_time_s\n" + "\n".join(_travel_rows("s1", "2014-06-03", times)) + "\n")
    with pytest.raises(ParseError):
        load_travel_time_csv(path)


def test_travel_roundtrip(tmp_path, rng):
    times = np.round(60 + 100 * rng.random(288), 3)
    times[[4, 100]] = np.nan
    s = TravelTimeSeries("x", dt.date(2014, 6, 3), times)
    path = tmp_path / "t.csv"
    write_travel_time_csv([s], path)
    (again,) = load_travel_time_csv(path)
    assert np.array_equal(again.times, s.times, equal_nan=True)


def test_synthetic_loads_without_warnings(tmp_path):
    from congestcast.synth import ScenarioSpec, generate

    ds = generate(ScenarioSpec(H=8, D=4, n_segments=1, seed=3))
    paths = ds.write(tmp_path)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        panel = load_electricity_csv(paths["electricity"], ds.spec.grid())
    assert np.array_equal(panel.values, ds.panel.values)
