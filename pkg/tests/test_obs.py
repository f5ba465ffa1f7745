from datetime import datetime, timedelta, timezone

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ifrnow.errors import EmptySeries, MixedStations
from ifrnow.metar import Observation
from ifrnow.obs import (
    FIELDS,
    FILLED,
    MISSING,
    OBSERVED,
    downsample_hourly,
    forward_fill,
    hour_index,
    read_metar_archive,
    read_series_csv,
    write_series_csv,
)

H = datetime(2024, 3, 15, 12, tzinfo=timezone.utc)


def ob(minutes, temp=10.0, station="KJFK", **kw):
    fields = dict(wind_dir_deg=310, wind_speed_kt=8, visibility_sm=10.0, dewpoint_c=5.0, pressure_hpa=1015.0)
    fields.update(kw)
    return Observation(station, H + timedelta(minutes=minutes), temp_c=temp, **fields)


def test_nearest_report_wins():
    reports = [ob(m, temp=m) for m in range(-25, 30, 5) if m] + [ob(2, temp=99.0)]
    s = downsample_hourly(reports)
    assert s.values["temp_c"][s.index_of(H)] == 99.0


def test_report_without_temperature_leaves_hour_missing():
    s = downsample_hourly([ob(-60), ob(1, temp=None), ob(60)])
    i = s.index_of(H)
    assert all(s.flags[f][i] == MISSING for f in FIELDS)
    assert len(s) == 3


def test_closer_report_after_the_hour():
    s = downsample_hourly([ob(-25, temp=1.0), ob(20, temp=2.0)])
    assert s.values["temp_c"][s.index_of(H)] == 2.0


def test_equal_distance_keeps_earlier():
    s = downsample_hourly([ob(-10, temp=1.0), ob(10, temp=2.0)])
    assert s.values["temp_c"][s.index_of(H)] == 1.0


def test_window_is_half_open():
    # H+30 belongs to the next hour, H-30 to this one
    s = downsample_hourly([ob(-30, temp=1.0), ob(30, temp=2.0)])
    assert s.values["temp_c"][s.index_of(H)] == 1.0
    assert s.values["temp_c"][s.index_of(H + timedelta(hours=1))] == 2.0


def test_missing_fields_stay_missing():
    s = downsample_hourly([ob(0, pressure_hpa=None)])
    assert np.isnan(s.values["pressure_hpa"][0]) and s.flags["pressure_hpa"][0] == MISSING
    assert s.flags["temp_c"][0] == OBSERVED


def test_errors():
    with pytest.raises(EmptySeries):
        downsample_hourly([])
    with pytest.raises(MixedStations):
        downsample_hourly([ob(0), ob(60, station="KLGA")])


def _gappy(gap):
    reports = [ob(0)] + [ob(60 * k, pressure_hpa=None, visibility_sm=None) for k in range(1, gap + 1)] + [ob(60 * (gap + 1))]
    return downsample_hourly(reports)


def test_fill_within_gap():
    s = forward_fill(_gappy(2), max_gap_h=3)
    assert list(s.flags["pressure_hpa"]) == [OBSERVED, FILLED, FILLED, OBSERVED]
    assert s.values["pressure_hpa"][2] == 1015.0
    assert list(s.origin["pressure_hpa"][1:3]) == [0, 0]


def test_no_fill_beyond_gap():
    s = forward_fill(_gappy(4), max_gap_h=3)
    assert list(s.flags["visibility_sm"]) == [OBSERVED, FILLED, FILLED, FILLED, MISSING, OBSERVED]


def test_zero_gap_is_identity():
    s = _gappy(2)
    assert forward_fill(s, max_gap_h=0).equals(s)


def test_fill_refuses_fast_fields():
    with pytest.raises(ValueError):
        forward_fill(_gappy(1), fields=("temp_c",))
    with pytest.raises(ValueError):
        forward_fill(_gappy(1), max_gap_h=-1)


def test_fill_does_not_touch_input():
    s = _gappy(2)
    before = s.copy()
    forward_fill(s)
    assert s.equals(before)


def _random_reports(seed, n):
    rng = np.random.default_rng(seed)
    minutes = np.sort(rng.choice(60 * 48, size=n, replace=False))
    out = []
    for m in minutes:
        out.append(ob(
            int(m) - 600,
            temp=None if rng.random() < 0.1 else float(rng.integers(-5, 20)),
            pressure_hpa=None if rng.random() < 0.3 else float(rng.uniform(990, 1030)),
            visibility_sm=None if rng.random() < 0.3 else float(rng.choice([0.5, 2.0, 10.0])),
        ))
    return out


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(1, 150), gap=st.integers(0, 6))
def test_grid_and_fill_properties(seed, n, gap):
    reports = _random_reports(seed, n)
    s = downsample_hourly(reports)
    first = min(hour_index(o.time + timedelta(minutes=30)) for o in reports)
    last = max(hour_index(o.time + timedelta(minutes=30)) for o in reports)
    assert s.start_hour == first and len(s) == last - first + 1
    # every kept value came from a report with a temperature
    assert np.all(np.isnan(s.values["temp_c"]) == (s.flags["temp_c"] == MISSING))
    filled = forward_fill(s, max_gap_h=gap)
    assert forward_fill(filled, max_gap_h=gap).equals(filled)
    for f in ("pressure_hpa", "visibility_sm"):
        k = np.flatnonzero(filled.flags[f] == FILLED)
        origin = filled.origin[f][k]
        assert np.all((k - origin >= 1) & (k - origin <= gap))
        assert np.all(filled.values[f][k] == s.values[f][origin])
    for f in ("temp_c", "dewpoint_c", "wind_dir_deg", "wind_speed_kt"):
        assert np.array_equal(filled.flags[f], s.flags[f])


def test_series_csv_round_trip(tmp_path):
    s = forward_fill(downsample_hourly(_random_reports(3, 80)))
    s.wx_codes[0] = ("BR", "-RA")
    path = tmp_path / "hourly.csv"
    write_series_csv(s, path)
    back = read_series_csv(path)
    assert back.equals(s)
    for f in FIELDS:
        assert np.array_equal(back.origin[f], s.origin[f])


def test_archive_reader_csv_and_text(tmp_path):
    csv_path = tmp_path / "m.csv"
    csv_path.write_text(
        "station,valid,metar\r\n"
        "KJFK,2024-03-15 11:51,KJFK 151151Z 31015KT 10SM 10/05 A3000\r\n"
        "KJFK,2024-03-15 12:51,not a report\r\n"
        "KLGA,2024-03-15 12:51,KLGA 151251Z 31015KT 10SM 10/05 A3000\r\n"
    )
    obs = read_metar_archive(csv_path, station="KJFK")
    assert len(obs) == 1 and obs[0].time == datetime(2024, 3, 15, 11, 51, tzinfo=timezone.utc)
    assert len(read_metar_archive(csv_path)) == 2
    txt = tmp_path / "m.txt"
    txt.write_text("KJFK 151151Z 31015KT 10SM 10/05 A3000\n\ngarbage\n")
    assert len(read_metar_archive(txt)) == 1
