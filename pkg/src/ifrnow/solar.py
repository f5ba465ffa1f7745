"""Low-precision solar elevation (NOAA fractional-year series).

Good to about 0.1 degree, which is ample for a day/night flag.
"""
from __future__ import annotations

from datetime import datetime, timezone

import numpy as np

NIGHT_ELEVATION_DEG = -0.833


def solar_elevation(lat: float, lon: float, unix_seconds) -> np.ndarray:
    """Solar elevation in degrees for UTC instants given as Unix seconds."""
    t = np.asarray(unix_seconds, dtype=np.float64)
    days = t / 86400.0
    # day of year and fractional hour, from the civil calendar
    dt64 = (t * 1e6).astype("datetime64[us]")
    year_start = dt64.astype("datetime64[Y]")
    doy = (dt64.astype("datetime64[D]") - year_start.astype("datetime64[D]")).astype(np.float64) + 1.0
    hours = (days - np.floor(days)) * 24.0
    year = year_start.astype(np.int64) + 1970
    ndays = np.where((year % 4 == 0) & ((year % 100 != 0) | (year % 400 == 0)), 366.0, 365.0)

    g = 2.0 * np.pi / ndays * (doy - 1.0 + (hours - 12.0) / 24.0)
    eqtime = 229.18 * (
        0.000075
        + 0.001868 * np.cos(g)
        - 0.032077 * np.sin(g)
        - 0.014615 * np.cos(2 * g)
        - 0.040849 * np.sin(2 * g)
    )
    decl = (
        0.006918
        - 0.399912 * np.cos(g)
        + 0.070257 * np.sin(g)
        - 0.006758 * np.cos(2 * g)
        + 0.000907 * np.sin(2 * g)
        - 0.002697 * np.cos(3 * g)
        + 0.00148 * np.sin(3 * g)
    )
    true_solar_min = hours * 60.0 + eqtime + 4.0 * lon
    hour_angle = np.radians(true_solar_min / 4.0 - 180.0)
    phi = np.radians(lat)
    cos_zen = np.sin(phi) * np.sin(decl) + np.cos(phi) * np.cos(decl) * np.cos(hour_angle)
    return 90.0 - np.degrees(np.arccos(np.clip(cos_zen, -1.0, 1.0)))


def is_night(lat: float, lon: float, t: datetime) -> int:
    if abs(lat) > 90 or abs(lon) > 180:
        raise ValueError(f"bad coordinates ({lat}, {lon})")
    if t.tzinfo is None:
        t = t.replace(tzinfo=timezone.utc)
    elev = solar_elevation(lat, lon, t.timestamp())
    return int(elev < NIGHT_ELEVATION_DEG)


def is_night_hours(lat: float, lon: float, hours: np.ndarray) -> np.ndarray:
    """Vectorised night flag for epoch-hour indices."""
    elev = solar_elevation(lat, lon, np.asarray(hours, dtype=np.float64) * 3600.0)
    return (elev < NIGHT_ELEVATION_DEG).astype(np.float64)
