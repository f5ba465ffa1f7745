"""Hourly regularisation of raw report streams.

A station's reports are reduced to one slot per UTC hour (nearest report
with a temperature, within half an hour), then slowly varying fields may be
carried forward across short gaps. Hours without data stay in the grid so
that lag arithmetic is calendar-true.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from datetime import datetime, timedelta, timezone
from typing import Iterable, Sequence

import numpy as np

from .errors import EmptySeries, MixedStations
from .metar import MalformedReport, Observation, parse_metar

FIELDS = ("temp_c", "dewpoint_c", "wind_dir_deg", "wind_speed_kt", "visibility_sm", "pressure_hpa")
FILLABLE = ("pressure_hpa", "visibility_sm")
NEVER_FILLED = ("temp_c", "dewpoint_c", "wind_dir_deg", "wind_speed_kt")

MISSING, OBSERVED, FILLED = 0, 1, 2
_FLAG_CHARS = "-of"

SELECTION_WINDOW_MIN = 30
DEFAULT_MAX_FILL_GAP_H = 3

_EPOCH = datetime(1970, 1, 1, tzinfo=timezone.utc)


def hour_index(t: datetime) -> int:
    """Whole hours since the Unix epoch (floor)."""
    return int((t - _EPOCH).total_seconds() // 3600)


def hour_time(h: int) -> datetime:
    return _EPOCH + timedelta(hours=int(h))


@dataclass
class HourlySeries:
    """Column-oriented hourly grid for one station.

    ``values[f]`` holds float64 with NaN for missing, ``flags[f]`` holds
    MISSING/OBSERVED/FILLED, and ``origin[f]`` is the grid hour a filled value
    was carried from (-1 elsewhere).
    """

    station: str
    start_hour: int
    values: dict[str, np.ndarray]
    flags: dict[str, np.ndarray]
    origin: dict[str, np.ndarray]
    wx_codes: list[tuple[str, ...]]
    source_time: list[datetime | None] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.wx_codes)

    @property
    def hours(self) -> np.ndarray:
        return np.arange(self.start_hour, self.start_hour + len(self), dtype=np.int64)

    @property
    def times(self) -> list[datetime]:
        return [hour_time(h) for h in self.hours]

    def index_of(self, t: datetime) -> int:
        i = hour_index(t) - self.start_hour
        if not 0 <= i < len(self):
            raise KeyError(t)
        return i

    def copy(self) -> "HourlySeries":
        return replace(
            self,
            values={k: v.copy() for k, v in self.values.items()},
            flags={k: v.copy() for k, v in self.flags.items()},
            origin={k: v.copy() for k, v in self.origin.items()},
            wx_codes=list(self.wx_codes),
            source_time=list(self.source_time),
        )

    def flag_string(self, i: int) -> str:
        return "".join(_FLAG_CHARS[self.flags[f][i]] for f in FIELDS)

    def equals(self, other: "HourlySeries") -> bool:
        if (self.station, self.start_hour, len(self)) != (other.station, other.start_hour, len(other)):
            return False
        for f in FIELDS:
            if not np.array_equal(self.values[f], other.values[f], equal_nan=True):
                return False
            if not np.array_equal(self.flags[f], other.flags[f]):
                return False
        return self.wx_codes == other.wx_codes


def _empty(station: str, start_hour: int, n: int) -> HourlySeries:
    return HourlySeries(
        station=station,
        start_hour=start_hour,
        values={f: np.full(n, np.nan) for f in FIELDS},
        flags={f: np.zeros(n, dtype=np.uint8) for f in FIELDS},
        origin={f: np.full(n, -1, dtype=np.int64) for f in FIELDS},
        wx_codes=[() for _ in range(n)],
        source_time=[None] * n,
    )


def downsample_hourly(reports: Iterable[Observation]) -> HourlySeries:
    """Pick one report per UTC hour.

    A report belongs to the hour it rounds to (window [H-30 min, H+30 min)).
    Within an hour the report closest to the top of the hour wins, earlier
    on ties, and only reports with a temperature qualify.
    """
    reports = sorted(reports, key=lambda o: o.time)
    if not reports:
        raise EmptySeries("no reports")
    stations = {o.station for o in reports}
    if len(stations) > 1:
        raise MixedStations(f"reports from {sorted(stations)}")
    station = reports[0].station

    def slot(o: Observation) -> tuple[int, float]:
        minutes = (o.time - _EPOCH).total_seconds() / 60.0
        h = int(np.floor((minutes + SELECTION_WINDOW_MIN) / 60.0))
        return h, minutes - 60.0 * h

    slots = [slot(o) for o in reports]
    first, last = slots[0][0], slots[-1][0]
    series = _empty(station, first, last - first + 1)
    best_offset: dict[int, float] = {}
    for o, (h, offset) in zip(reports, slots):
        if o.temp_c is None:
            continue
        prev = best_offset.get(h)
        # strict '<' keeps the earlier report on equal distance
        if prev is not None and not abs(offset) < abs(prev):
            continue
        best_offset[h] = offset
        i = h - first
        for f in FIELDS:
            v = getattr(o, f)
            series.values[f][i] = np.nan if v is None else v
            series.flags[f][i] = MISSING if v is None else OBSERVED
        series.wx_codes[i] = tuple(o.wx_codes)
        series.source_time[i] = o.time
    return series


def forward_fill(
    series: HourlySeries, max_gap_h: int = DEFAULT_MAX_FILL_GAP_H, fields: Sequence[str] = FILLABLE
) -> HourlySeries:
    """Carry observed values forward across gaps of at most ``max_gap_h`` hours.

    Only observed values seed a fill, so the operation is idempotent.
    """
    if max_gap_h < 0:
        raise ValueError("max_gap_h must be >= 0")
    bad = set(fields) & set(NEVER_FILLED)
    if bad:
        raise ValueError(f"fields {sorted(bad)} must never be forward-filled")
    out = series.copy()
    if max_gap_h == 0:
        return out
    for f in fields:
        vals, flags, origin = out.values[f], out.flags[f], out.origin[f]
        last = -1
        for i in range(len(out)):
            if flags[i] == OBSERVED:
                last = i
            elif flags[i] == MISSING and last >= 0 and i - last <= max_gap_h:
                vals[i] = vals[last]
                flags[i] = FILLED
                origin[i] = last
    return out


def read_metar_archive(path, station: str | None = None) -> list[Observation]:
    """Parse an archive CSV (columns station, valid, metar) or a raw text file.

    Undecodable reports are skipped. For CSV input the ``valid`` timestamp
    anchors the day-of-month.
    """
    out: list[Observation] = []
    with open(path, newline="") as fh:
        head = fh.readline()
        fh.seek(0)
        if "metar" in [c.strip() for c in head.lower().split(",")]:
            for row in csv.DictReader(fh):
                ref = None
                if row.get("valid"):
                    ref = datetime.fromisoformat(row["valid"].strip().replace("Z", "")).replace(
                        tzinfo=timezone.utc
                    )
                try:
                    obs = parse_metar(row["metar"], ref=ref)
                except MalformedReport:
                    continue
                if station is None or obs.station == station:
                    out.append(obs)
        else:
            for line in fh:
                if not line.strip():
                    continue
                try:
                    obs = parse_metar(line.strip())
                except MalformedReport:
                    continue
                if station is None or obs.station == station:
                    out.append(obs)
    return out


CSV_COLUMNS = ("station", "valid_utc", *FIELDS, "wx_codes", "fill_flags")


def write_series_csv(series: HourlySeries, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for i, t in enumerate(series.times):
            row = [series.station, t.strftime("%Y-%m-%dT%H:%MZ")]
            for f in FIELDS:
                v = series.values[f][i]
                row.append("" if np.isnan(v) else repr(float(v)))
            row.append(";".join(series.wx_codes[i]))
            row.append(series.flag_string(i))
            w.writerow(row)


def read_series_csv(path) -> HourlySeries:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise EmptySeries(f"{path} has no rows")
    parse = lambda s: datetime.strptime(s, "%Y-%m-%dT%H:%MZ").replace(tzinfo=timezone.utc)  # noqa: E731
    start = hour_index(parse(rows[0]["valid_utc"]))
    series = _empty(rows[0]["station"], start, len(rows))
    for i, row in enumerate(rows):
        if hour_index(parse(row["valid_utc"])) != start + i:
            raise EmptySeries(f"{path}: grid is not contiguous at row {i}")
        flags = row["fill_flags"]
        for k, f in enumerate(FIELDS):
            cell = row[f]
            series.values[f][i] = float(cell) if cell else np.nan
            series.flags[f][i] = _FLAG_CHARS.index(flags[k])
        series.wx_codes[i] = tuple(c for c in row["wx_codes"].split(";") if c)
    # origins are not serialised; rebuild them from the flags
    for f in FILLABLE:
        last = -1
        for i in range(len(series)):
            if series.flags[f][i] == OBSERVED:
                last = i
            elif series.flags[f][i] == FILLED:
                series.origin[f][i] = last
    return series
