"""Synthetic radiation-fog archive with a known causal rule.

Fog (IFR visibility) is observed at hour t + h exactly when the report at
hour t had relative humidity above 95 % during night. Humidity is drawn
independently each hour, so only the decision-hour RH and the day/night flag
carry signal; every other field is noise.

Label noise of rate ``noise`` suppresses that fraction of the fog events and
adds the same number of spurious events at other hours, which keeps the
prevalence unchanged.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone

import numpy as np

from .features import MAGNUS_A, MAGNUS_B
from .metar import HPA_PER_INHG, Observation
from .obs import hour_index, hour_time
from .solar import is_night_hours

FOG_RH = 95.0
IFR_VIS_SM = (0.25, 0.5, 0.75, 1.0, 1.5, 2.0, 2.5)
VFR_VIS_SM = (4.0, 5.0, 6.0, 7.0, 10.0)
REPORT_MINUTE = 51  # reports filed at hh:51 belong to the next hour


@dataclass
class SyntheticArchive:
    station: str
    lat: float
    lon: float
    horizon_h: int
    reports: list[Observation]
    hours: np.ndarray  # epoch hour of each grid slot
    fog_driver: np.ndarray  # RH > 95 and night at the decision hour
    event: np.ndarray  # IFR observed at this hour, after label noise

    @property
    def prevalence(self) -> float:
        return float(self.event.mean())


def _magnus(t, td):
    return 100.0 * np.exp(MAGNUS_A * td / (MAGNUS_B + td) - MAGNUS_A * t / (MAGNUS_B + t))


def _dewpoint_for(t, rh):
    gamma = np.log(rh / 100.0) + MAGNUS_A * t / (MAGNUS_B + t)
    return MAGNUS_B * gamma / (MAGNUS_A - gamma)


def _vis_token(v: float) -> str:
    whole, frac = int(v), v - int(v)
    fracs = {0.25: "1/4", 0.5: "1/2", 0.75: "3/4"}
    if frac == 0:
        return f"{whole}SM"
    return f"{fracs[frac]}SM" if whole == 0 else f"{whole} {fracs[frac]}SM"


def _temp_token(v: float) -> str:
    r = int(round(v))
    return f"M{abs(r):02d}" if r < 0 else f"{r:02d}"


def _tenths(v: float) -> str:
    return f"{1 if v < 0 else 0}{abs(int(round(v * 10))):03d}"


def format_metar(station, t: datetime, wdir, wspd, vis, temp, dew, altim_inhg) -> str:
    """Encode one report, with tenths-precision temperatures in the remarks."""
    wind = f"{int(wdir):03d}{int(wspd):02d}KT"
    body = [
        station,
        t.strftime("%d%H%MZ"),
        wind,
        _vis_token(vis),
        "BR" if 1.0 <= vis < 3.0 else ("FG" if vis < 1.0 else ""),
        f"{_temp_token(temp)}/{_temp_token(dew)}",
        f"A{int(round(altim_inhg * 100)):04d}",
        "RMK",
        f"T{_tenths(temp)}{_tenths(dew)}",
    ]
    return " ".join(tok for tok in body if tok)


def fog_archive(
    n_hours: int = 12000,
    horizon_h: int = 3,
    prevalence: float = 0.08,
    noise: float = 0.02,
    lat: float = 45.0,
    lon: float = 0.0,
    station: str = "ZZZZ",
    start: datetime = datetime(2021, 1, 1, tzinfo=timezone.utc),
    missing_rate: float = 0.01,
    seed: int = 0,
) -> SyntheticArchive:
    rng = np.random.default_rng(seed)
    h0 = hour_index(start)
    hours = h0 + np.arange(n_hours, dtype=np.int64)
    night = is_night_hours(lat, lon, hours).astype(bool)
    # humid hours are drawn so that humid-and-night hits the target prevalence
    p_humid = min(prevalence / max(night.mean(), 1e-9), 1.0)
    humid = rng.random(n_hours) < p_humid
    rh_target = np.where(humid, rng.uniform(95.3, 100.0, n_hours), rng.uniform(35.0, 94.7, n_hours))
    temp = np.round(rng.uniform(-5.0, 30.0, n_hours), 1)
    dew = np.minimum(np.round(_dewpoint_for(temp, rh_target), 1), temp)
    rh = _magnus(temp, dew)
    driver = (rh > FOG_RH) & night

    event = np.zeros(n_hours, dtype=bool)
    event[horizon_h:] = driver[: n_hours - horizon_h]
    pos, neg = np.flatnonzero(event), np.flatnonzero(~event)
    n_flip = int(round(noise * len(pos)))
    if n_flip:
        event[rng.choice(pos, n_flip, replace=False)] = False
        event[rng.choice(neg, n_flip, replace=False)] = True

    vis = np.where(event, rng.choice(IFR_VIS_SM, n_hours), rng.choice(VFR_VIS_SM, n_hours))
    wdir = rng.integers(1, 37, n_hours) * 10
    wspd = rng.integers(3, 25, n_hours)
    altim = np.round(rng.uniform(29.60, 30.40, n_hours), 2)
    dropped = rng.random(n_hours) < missing_rate

    reports = []
    for i in range(n_hours):
        if dropped[i]:
            continue
        t = hour_time(int(hours[i])) - timedelta(minutes=60 - REPORT_MINUTE)
        raw = format_metar(station, t, wdir[i], wspd[i], vis[i], temp[i], dew[i], altim[i])
        reports.append(
            Observation(
                station=station,
                time=t,
                wind_dir_deg=float(wdir[i] % 360),
                wind_speed_kt=float(wspd[i]),
                visibility_sm=float(vis[i]),
                temp_c=float(temp[i]),
                dewpoint_c=float(dew[i]),
                pressure_hpa=float(int(round(altim[i] * 100)) / 100.0 * HPA_PER_INHG),
                raw=raw,
            )
        )
    event_obs = event & ~dropped
    return SyntheticArchive(station, lat, lon, horizon_h, reports, hours, driver, event_obs)


def write_metar_csv(archive: SyntheticArchive, path) -> None:
    """Archive CSV in the layout ``read_metar_archive`` expects."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["station", "valid", "metar"])
        for o in archive.reports:
            w.writerow([o.station, o.time.strftime("%Y-%m-%d %H:%M"), o.raw])
