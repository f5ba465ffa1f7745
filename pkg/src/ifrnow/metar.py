"""METAR decoding into unit-normalized observations.

Only the groups the feature set needs are decoded (wind, visibility, present
weather, temperature/dewpoint, altimeter). Sky condition and RVR groups are
recognised so they do not pollute diagnostics, and anything after a trend or
remarks marker is ignored.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from fractions import Fraction

from .errors import MalformedReport, UnparseableVisibility

METERS_PER_SM = 1609.344
HPA_PER_INHG = 33.8639
UNLIMITED_VIS_SM = 10000.0 / METERS_PER_SM
PRESSURE_RANGE_HPA = (850.0, 1100.0)

KT_PER_MPS = 1.943844
KT_PER_KMH = 0.539957

_STATION_RE = re.compile(r"^[A-Z][A-Z0-9]{3}$")
_TIME_RE = re.compile(r"^(\d{2})(\d{2})(\d{2})Z$")
_WIND_RE = re.compile(r"^(\d{3}|VRB|///)(\d{2,3}|//)(?:G(\d{2,3}))?(KT|MPS|KMH)$")
_WIND_VAR_RE = re.compile(r"^\d{3}V\d{3}$")
_VIS_METERS_RE = re.compile(r"^(\d{4})(NDV)?$")
_VIS_DIR_RE = re.compile(r"^\d{4}(N|NE|E|SE|S|SW|W|NW)$")
_VIS_SM_RE = re.compile(r"^([PM])?(\d+)?(?:\s*(\d+)/(\d+))?SM$")
_WHOLE_RE = re.compile(r"^\d$")
_FRACTION_SM_RE = re.compile(r"^M?\d/\d{1,2}SM$")
_RVR_RE = re.compile(r"^R\d{2}[LRC]?/")
_SKY_RE = re.compile(r"^(FEW|SCT|BKN|OVC|VV)(\d{3}|///)(CB|TCU|///)?$|^(SKC|CLR|NSC|NCD)$")
_TEMP_RE = re.compile(r"^(M?\d{2}|//)/(M?\d{2}|//)?$")
_ALTIM_RE = re.compile(r"^([AQ])(\d{4})$")
_WX_RE = re.compile(
    r"^(?:[-+]|VC)?(?:MI|PR|BC|DR|BL|SH|TS|FZ)?"
    r"(?:DZ|RA|SN|SG|IC|PL|GR|GS|UP|BR|FG|FU|VA|DU|SA|HZ|PY|PO|SQ|FC|SS|DS)*$"
)
_WX_BARE_DESCRIPTOR = {"TS", "VCTS", "VCSH"}
_RMK_TEMP_RE = re.compile(r"^T([01])(\d{3})(?:([01])(\d{3}))?$")
_STOP_TOKENS = {"RMK", "TEMPO", "BECMG", "NOSIG", "FCST"}
_HEADER_TOKENS = {"METAR", "SPECI"}


@dataclass(frozen=True)
class Observation:
    """One decoded surface report. ``None`` marks a missing field."""

    station: str
    time: datetime
    wind_dir_deg: float | None = None
    wind_speed_kt: float | None = None
    visibility_sm: float | None = None
    temp_c: float | None = None
    dewpoint_c: float | None = None
    pressure_hpa: float | None = None
    wx_codes: tuple[str, ...] = ()
    raw: str = ""
    diagnostics: tuple[str, ...] = field(default=(), compare=False)


def resolve_day(day: int, hour: int, minute: int, ref: datetime, past_only: bool = False) -> datetime:
    """Place a day-of-month/hour/minute triple in the month nearest ``ref``.

    Reports carry only the day of month; the candidate month that lands
    closest to ``ref`` wins, which handles month and year rollover. With
    ``past_only`` candidates more than an hour after ``ref`` are skipped.
    """
    ref = ref.astimezone(timezone.utc) if ref.tzinfo else ref.replace(tzinfo=timezone.utc)
    best = None
    for month_shift in (-1, 0, 1):
        y, m = ref.year, ref.month + month_shift
        if m == 0:
            y, m = y - 1, 12
        elif m == 13:
            y, m = y + 1, 1
        try:
            cand = datetime(y, m, day, tzinfo=timezone.utc)
        except ValueError:
            continue
        cand += timedelta(hours=hour, minutes=minute)
        if past_only and cand > ref + timedelta(hours=1):
            continue
        if best is None or abs(cand - ref) < abs(best - ref):
            best = cand
    if best is None:
        raise ValueError(f"day {day} is not valid near {ref:%Y-%m}")
    return best


def normalize_visibility(token: str, region_convention: str | None = None) -> float:
    """Convert a visibility group to statute miles.

    ``region_convention`` only matters for bare numbers without a unit:
    ``"statute"`` reads them as miles, anything else as metres.
    """
    tok = token.strip()
    if tok in ("CAVOK", "9999"):
        return UNLIMITED_VIS_SM
    if tok == "P6SM":
        return UNLIMITED_VIS_SM
    m = _VIS_METERS_RE.match(tok)
    if m and region_convention != "statute":
        return int(m.group(1)) / METERS_PER_SM
    m = _VIS_SM_RE.match(tok)
    if m and (m.group(2) or m.group(3)):
        modifier, whole, num, den = m.groups()
        value = Fraction(int(whole)) if whole else Fraction(0)
        if num:
            if int(den) == 0:
                raise UnparseableVisibility(token)
            value += Fraction(int(num), int(den))
        if modifier == "P" and value >= 6:
            return UNLIMITED_VIS_SM
        # "M1/4SM" is below the smallest reportable value; floor at it
        return float(value)
    if region_convention == "statute":
        try:
            parts = tok.split()
            return float(sum(Fraction(p) for p in parts))
        except (ValueError, ZeroDivisionError):
            pass
    raise UnparseableVisibility(token)


def _temp(tok: str) -> float | None:
    if tok is None or tok.startswith("//"):
        return None
    return -float(tok[1:]) if tok.startswith("M") else float(tok)


def _remark_temps(remarks: list[str], fields: dict) -> None:
    """Tenths-of-a-degree temperature/dewpoint from a remarks ``TsTTTsDDD`` group."""
    for tok in remarks:
        if tok in ("TEMPO", "BECMG", "NOSIG"):
            return
        m = _RMK_TEMP_RE.match(tok)
        if m:
            ts, tv, ds, dv = m.groups()
            fields["temp_c"] = (-1 if ts == "1" else 1) * int(tv) / 10.0
            if dv is not None:
                fields["dewpoint_c"] = (-1 if ds == "1" else 1) * int(dv) / 10.0
            return


def parse_metar(raw: str, ref: datetime | None = None) -> Observation:
    """Decode one METAR string.

    ``ref`` anchors the day-of-month to a calendar month. Without it the
    report is taken to be recent: the latest matching day not in the future. Unknown groups are recorded in ``diagnostics``.
    """
    if not isinstance(raw, str):
        raise MalformedReport(f"report must be text, got {type(raw).__name__}")
    tokens = raw.strip().rstrip("=").split()
    while tokens and tokens[0] in _HEADER_TOKENS | {"COR"}:
        tokens.pop(0)
    if len(tokens) < 2 or not _STATION_RE.match(tokens[0]):
        raise MalformedReport(f"no station group in {raw!r}")
    station = tokens[0]
    tm = _TIME_RE.match(tokens[1])
    if not tm:
        raise MalformedReport(f"no time group in {raw!r}")
    day, hour, minute = (int(g) for g in tm.groups())
    if not (1 <= day <= 31 and hour <= 23 and minute <= 59):
        raise MalformedReport(f"impossible time group {tokens[1]!r}")
    try:
        if ref is None:
            time = resolve_day(day, hour, minute, datetime.now(timezone.utc), past_only=True)
        else:
            time = resolve_day(day, hour, minute, ref)
    except ValueError as exc:
        raise MalformedReport(str(exc)) from None

    fields: dict = {}
    wx: list[str] = []
    diag: list[str] = []
    rest = tokens[2:]
    i = 0
    while i < len(rest):
        tok = rest[i]
        i += 1
        if tok in _STOP_TOKENS:
            diag.append(f"ignored from {tok}: {' '.join(rest[i - 1:])}")
            if tok == "RMK":
                _remark_temps(rest[i:], fields)
            break
        if tok in ("AUTO", "COR", "NIL"):
            continue
        if "wind" not in fields and (m := _WIND_RE.match(tok)):
            d, spd, _gust, unit = m.groups()
            fields["wind"] = True
            if spd != "//":
                speed = float(spd)
                if unit == "MPS":
                    speed *= KT_PER_MPS
                elif unit == "KMH":
                    speed *= KT_PER_KMH
                fields["wind_speed_kt"] = speed
                if d not in ("VRB", "///") and speed > 0:
                    fields["wind_dir_deg"] = float(int(d) % 360)
            continue
        if _WIND_VAR_RE.match(tok):
            continue
        if "visibility_sm" not in fields:
            if tok == "CAVOK":
                fields["visibility_sm"] = UNLIMITED_VIS_SM
                continue
            if _WHOLE_RE.match(tok) and i < len(rest) and _FRACTION_SM_RE.match(rest[i]):
                i += 1
                try:
                    fields["visibility_sm"] = normalize_visibility(f"{tok} {rest[i - 1]}")
                except UnparseableVisibility:
                    diag.append(f"bad visibility {tok} {rest[i - 1]}")
                continue
            if _VIS_METERS_RE.match(tok) or _VIS_SM_RE.match(tok):
                try:
                    fields["visibility_sm"] = normalize_visibility(tok)
                    continue
                except UnparseableVisibility:
                    pass
            if tok in ("////", "////SM"):
                fields["visibility_sm"] = None
                continue
        if _VIS_DIR_RE.match(tok) or _RVR_RE.match(tok):
            diag.append(f"skipped {tok}")
            continue
        if _SKY_RE.match(tok):
            diag.append(f"sky {tok}")
            continue
        if (m := _TEMP_RE.match(tok)) and "temp" not in fields:
            fields["temp"] = True
            fields["temp_c"] = _temp(m.group(1))
            fields["dewpoint_c"] = _temp(m.group(2))
            continue
        if (m := _ALTIM_RE.match(tok)) and "pressure" not in fields:
            fields["pressure"] = True
            kind, digits = m.groups()
            value = int(digits) / 100.0 * HPA_PER_INHG if kind == "A" else float(digits)
            lo, hi = PRESSURE_RANGE_HPA
            if lo <= value <= hi:
                fields["pressure_hpa"] = value
            else:
                diag.append(f"implausible pressure {tok}")
            continue
        if tok and (_WX_RE.match(tok) or tok in _WX_BARE_DESCRIPTOR) and tok not in ("-", "+", "VC"):
            if any(c.isalpha() for c in tok) and len(tok) >= 2:
                wx.append(tok)
                continue
        diag.append(f"unknown {tok}")

    return Observation(
        station=station,
        time=time,
        wind_dir_deg=fields.get("wind_dir_deg"),
        wind_speed_kt=fields.get("wind_speed_kt"),
        visibility_sm=fields.get("visibility_sm"),
        temp_c=fields.get("temp_c"),
        dewpoint_c=fields.get("dewpoint_c"),
        pressure_hpa=fields.get("pressure_hpa"),
        wx_codes=tuple(wx),
        raw=raw,
        diagnostics=tuple(diag),
    )


def encode_wind(obs: Observation) -> str | None:
    """Re-encode the decoded wind as a knots group, or None if absent."""
    if obs.wind_speed_kt is None:
        return None
    speed = int(round(obs.wind_speed_kt))
    if speed == 0:
        return "00000KT"
    if obs.wind_dir_deg is None:
        return f"VRB{speed:02d}KT"
    direction = int(round(obs.wind_dir_deg)) or 360
    return f"{direction:03d}{speed:02d}KT"


def audit(obs: Observation) -> list[str]:
    """Cross-check decoded fields against the raw text.

    Returns a list of contradictions (empty when consistent). Only plain
    knots wind groups without gusts are re-encoded.
    """
    problems = []
    for tok in obs.raw.split():
        m = _WIND_RE.match(tok)
        if not m:
            continue
        d, spd, gust, unit = m.groups()
        if unit == "KT" and gust is None and d not in ("VRB", "///") and spd != "//":
            expected = tok
            if int(d) == 0 and int(spd) > 0:
                expected = f"360{spd}KT"
            if int(spd) == 0:
                expected = "00000KT"
            got = encode_wind(obs)
            if got != expected:
                problems.append(f"wind {tok} re-encodes as {got}")
        break
    if obs.visibility_sm is not None and obs.visibility_sm < 0:
        problems.append("negative visibility")
    if obs.pressure_hpa is not None and not (
        PRESSURE_RANGE_HPA[0] <= obs.pressure_hpa <= PRESSURE_RANGE_HPA[1]
    ):
        problems.append("pressure outside plausibility gate")
    return problems
