"""Physics-guided feature matrix, IFR labels and chronological splits."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from datetime import datetime, timezone
from typing import Iterator, Sequence

import numpy as np

from .errors import EmptySeries, TooFewExamples
from .metar import Observation
from .obs import OBSERVED, HourlySeries, hour_index, hour_time
from .solar import is_night as _is_night
from .solar import is_night_hours

FEATURE_NAMES = (
    "dew_point_depression",
    "relative_humidity",
    "surface_pressure",
    "cooling_rate",
    "current_visibility",
    "wind_speed",
    "wind_sin",
    "wind_cos",
    "visibility_lag_1h",
    "visibility_lag_3h",
    "visibility_lag_6h",
    "is_night",
)
FEATURE_SET_VERSION = 1
N_FEATURES = len(FEATURE_NAMES)
HORIZONS = (2, 3, 6)
IFR_THRESHOLD_SM = 3.0

MAGNUS_A = 17.625
MAGNUS_B = 243.04
SUPERSATURATION_TOL_C = 0.5

FEATURE_GROUPS = {
    "lags": ("current_visibility", "visibility_lag_1h", "visibility_lag_3h", "visibility_lag_6h"),
    "thermodynamic": ("dew_point_depression", "cooling_rate", "relative_humidity"),
    "kinematic": ("wind_sin", "wind_cos", "wind_speed"),
}


def relative_humidity(temp_c, dewpoint_c):
    """Relative humidity (%) from the Magnus form of saturation vapour pressure.

    Works on scalars or arrays. Missing inputs, or a dewpoint more than half a
    degree above the temperature, give NaN; a dewpoint within that tolerance
    above the temperature is treated as saturation.
    """
    t = np.asarray(temp_c, dtype=np.float64)
    td = np.asarray(dewpoint_c, dtype=np.float64)
    bad = td > t + SUPERSATURATION_TOL_C
    td = np.minimum(td, t)
    rh = 100.0 * np.exp(MAGNUS_A * td / (MAGNUS_B + td) - MAGNUS_A * t / (MAGNUS_B + t))
    rh = np.where(bad, np.nan, rh)
    return float(rh) if rh.ndim == 0 else rh


def wind_encoding(direction_deg):
    """Unit-circle encoding of wind direction; NaN in, NaN out."""
    rad = np.radians(np.asarray(direction_deg, dtype=np.float64))
    return np.sin(rad), np.cos(rad)


def is_night(lat: float, lon: float, t: datetime) -> int:
    return _is_night(lat, lon, t)


def derive_instant_features(obs: Observation, lat: float | None = None, lon: float | None = None) -> dict:
    """Features computable from a single report (no lags, no cooling rate)."""
    nan = float("nan")
    t = nan if obs.temp_c is None else obs.temp_c
    td = nan if obs.dewpoint_c is None else obs.dewpoint_c
    s, c = wind_encoding(nan if obs.wind_dir_deg is None else obs.wind_dir_deg)
    dpd = t - td
    if dpd < -SUPERSATURATION_TOL_C:
        dpd = nan
    return {
        "dew_point_depression": dpd,
        "relative_humidity": relative_humidity(t, td),
        "surface_pressure": nan if obs.pressure_hpa is None else obs.pressure_hpa,
        "current_visibility": nan if obs.visibility_sm is None else obs.visibility_sm,
        "wind_speed": nan if obs.wind_speed_kt is None else obs.wind_speed_kt,
        "wind_sin": float(s),
        "wind_cos": float(c),
        "is_night": nan if lat is None or lon is None else float(is_night(lat, lon, obs.time)),
    }


def _shift(a: np.ndarray, k: int) -> np.ndarray:
    """Value at row i-k (NaN before the start of the grid)."""
    out = np.full_like(a, np.nan)
    if k < len(a):
        out[k:] = a[: len(a) - k]
    return out


def _observed(series: HourlySeries, f: str) -> np.ndarray:
    return np.where(series.flags[f] == OBSERVED, series.values[f], np.nan)


def cooling_rate(series: HourlySeries, t: datetime | int) -> float:
    """T(t) - T(t-3h) in degrees C; negative means cooling."""
    i = series.index_of(t) if isinstance(t, datetime) else int(t)
    temp = _observed(series, "temp_c")
    if i < 3:
        return float("nan")
    return float(temp[i] - temp[i - 3])


def feature_block(series: HourlySeries, lat: float | None, lon: float | None) -> np.ndarray:
    """Feature rows for every grid hour, shape (len(series), N_FEATURES)."""
    n = len(series)
    temp = _observed(series, "temp_c")
    dew = _observed(series, "dewpoint_c")
    vis = series.values["visibility_sm"]
    X = np.full((n, N_FEATURES), np.nan)
    dpd = temp - dew
    X[:, 0] = np.where(dpd < -SUPERSATURATION_TOL_C, np.nan, dpd)
    with np.errstate(invalid="ignore"):
        X[:, 1] = relative_humidity(temp, dew)
    X[:, 2] = series.values["pressure_hpa"]
    X[:, 3] = temp - _shift(temp, 3)
    X[:, 4] = vis
    X[:, 5] = _observed(series, "wind_speed_kt")
    s, c = wind_encoding(_observed(series, "wind_dir_deg"))
    X[:, 6] = s
    X[:, 7] = c
    X[:, 8] = _shift(vis, 1)
    X[:, 9] = _shift(vis, 3)
    X[:, 10] = _shift(vis, 6)
    if lat is not None and lon is not None:
        X[:, 11] = is_night_hours(lat, lon, series.hours)
    return X


@dataclass(frozen=True)
class LabeledExample:
    t: datetime
    features: np.ndarray
    label: int
    horizon_h: int

    @property
    def label_time(self) -> datetime:
        return hour_time(hour_index(self.t) + self.horizon_h)


@dataclass
class FeatureMatrix:
    """Examples stored column-wise; indexing yields ``LabeledExample``."""

    hours: np.ndarray  # epoch hour of the decision time
    X: np.ndarray
    y: np.ndarray
    horizon_h: int
    station: str = ""
    feature_names: tuple[str, ...] = FEATURE_NAMES

    def __len__(self) -> int:
        return len(self.hours)

    def __getitem__(self, i):
        if isinstance(i, (slice, np.ndarray, list)):
            return self.subset(i)
        return LabeledExample(hour_time(self.hours[i]), self.X[i].copy(), int(self.y[i]), self.horizon_h)

    def __iter__(self) -> Iterator[LabeledExample]:
        for i in range(len(self)):
            yield self[i]

    def subset(self, idx) -> "FeatureMatrix":
        return FeatureMatrix(self.hours[idx], self.X[idx], self.y[idx], self.horizon_h, self.station, self.feature_names)

    @property
    def label_hours(self) -> np.ndarray:
        return self.hours + self.horizon_h

    def with_missing(self, columns: Sequence[str]) -> "FeatureMatrix":
        X = self.X.copy()
        for name in columns:
            X[:, self.feature_names.index(name)] = np.nan
        return FeatureMatrix(self.hours, X, self.y, self.horizon_h, self.station, self.feature_names)


def build_matrix(
    series: HourlySeries,
    lat: float | None,
    lon: float | None,
    horizon_h: int,
    label_window_h: int = 0,
) -> FeatureMatrix:
    """Labeled examples for every usable decision hour.

    A decision hour needs an observed temperature now and an observed (never
    filled) visibility at exactly ``t + horizon_h``. With ``label_window_h`` w
    > 0 the label is IFR if any observed visibility in [t+h-w, t+h] is below
    threshold.
    """
    if horizon_h not in HORIZONS:
        raise ValueError(f"horizon must be one of {HORIZONS}")
    if not 0 <= label_window_h < horizon_h:
        raise ValueError("label window must satisfy 0 <= w < horizon")
    if len(series) == 0:
        raise EmptySeries("empty series")
    X = feature_block(series, lat, lon)
    temp_ok = series.flags["temp_c"] == OBSERVED
    vis_obs = _observed(series, "visibility_sm")
    n = len(series)
    target = np.full(n, np.nan)
    target[: max(n - horizon_h, 0)] = vis_obs[horizon_h:]
    with np.errstate(invalid="ignore"):
        ifr = target < IFR_THRESHOLD_SM
        for w in range(1, label_window_h + 1):
            earlier = np.full(n, np.nan)
            earlier[: max(n - horizon_h + w, 0)] = vis_obs[horizon_h - w:]
            ifr |= earlier < IFR_THRESHOLD_SM
    keep = temp_ok & ~np.isnan(target)
    idx = np.flatnonzero(keep)
    if len(idx) == 0:
        raise EmptySeries("no hour has both a temperature and a verifying observation")
    return FeatureMatrix(
        hours=series.hours[idx],
        X=X[idx],
        y=ifr[idx].astype(np.int8),
        horizon_h=horizon_h,
        station=series.station,
    )


def temporal_split(
    examples: FeatureMatrix, train_fraction: float = 0.8, purge: bool = True
) -> tuple[FeatureMatrix, FeatureMatrix]:
    """Chronological split; the first floor(n*f) examples train.

    With ``purge`` the tail of the training block is trimmed so that no
    training label time lies after the first test decision time.
    """
    if not 0 < train_fraction < 1:
        raise ValueError("train_fraction must lie in (0, 1)")
    n = len(examples)
    if n < 100:
        raise TooFewExamples(f"{n} examples; need at least 100")
    order = np.argsort(examples.hours, kind="stable")
    ordered = examples.subset(order)
    cut = int(np.floor(n * train_fraction))
    train_idx = np.arange(cut)
    test = ordered.subset(np.arange(cut, n))
    if purge and len(test):
        train_idx = train_idx[ordered.label_hours[:cut] <= test.hours[0]]
    return ordered.subset(train_idx), test


def write_matrix_csv(fm: FeatureMatrix, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["valid_utc", *fm.feature_names, "label", "horizon"])
        for i in range(len(fm)):
            row = [hour_time(fm.hours[i]).strftime("%Y-%m-%dT%H:%MZ")]
            row += ["" if np.isnan(v) else repr(float(v)) for v in fm.X[i]]
            row += [int(fm.y[i]), fm.horizon_h]
            w.writerow(row)


def read_matrix_csv(path, station: str = "") -> FeatureMatrix:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        names = tuple(header[1:-2])
        hours, X, y, horizon = [], [], [], None
        for row in reader:
            t = datetime.strptime(row[0], "%Y-%m-%dT%H:%MZ")
            hours.append(hour_index(t.replace(tzinfo=timezone.utc)))
            X.append([float(c) if c else np.nan for c in row[1:-2]])
            y.append(int(row[-2]))
            horizon = int(row[-1])
    if horizon is None:
        raise EmptySeries(f"{path} has no rows")
    return FeatureMatrix(
        np.asarray(hours, dtype=np.int64),
        np.asarray(X, dtype=np.float64).reshape(-1, len(names)),
        np.asarray(y, dtype=np.int8),
        horizon,
        station,
        names,
    )
