"""TAF bulletin decoding and time-resolved visibility lookup.

Only visibility is tracked. Change groups are resolved onto absolute UTC
windows at parse time so that lookups are a scan over a short list.
"""
from __future__ import annotations

import bisect
import csv
import re
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from typing import Iterable, Sequence

from .errors import MalformedBulletin, UnparseableVisibility, UnresolvableGroupTime
from .metar import UNLIMITED_VIS_SM, normalize_visibility, resolve_day

IFR_THRESHOLD_SM = 3.0

_STATION_RE = re.compile(r"^[A-Z][A-Z0-9]{3}$")
_ISSUE_RE = re.compile(r"^(\d{2})(\d{2})(\d{2})Z$")
_PERIOD_RE = re.compile(r"^(\d{2})(\d{2})/(\d{2})(\d{2})$")
_FM_RE = re.compile(r"^FM(\d{2})(\d{2})(\d{2})$")
_PROB_RE = re.compile(r"^PROB(\d{2})$")
_VIS_RE = re.compile(r"^(\d{4}|CAVOK|P6SM|[PM]?\d+SM|M?\d/\d{1,2}SM)$")
_FRACTION_SM_RE = re.compile(r"^M?\d/\d{1,2}SM$")


@dataclass(frozen=True)
class ForecastGroup:
    kind: str  # BASE, FM, BECMG, TEMPO or PROB
    start: datetime
    end: datetime
    visibility_sm: float | None
    probability_pct: int | None = None
    inherited: bool = False

    def contains(self, t: datetime, closed_end: bool = False) -> bool:
        return self.start <= t < self.end or (closed_end and t == self.end)


@dataclass(frozen=True)
class TafBulletin:
    station: str
    issue_time: datetime
    valid_from: datetime
    valid_to: datetime
    groups: tuple[ForecastGroup, ...]
    amended: bool = False
    corrected: bool = False
    raw: str = ""

    @property
    def prevailing(self) -> tuple[ForecastGroup, ...]:
        return tuple(g for g in self.groups if g.kind in ("BASE", "FM"))


def _resolve_dh(day: int, hour: int, anchor: datetime) -> datetime:
    # hour 24 means midnight at the end of the given day
    extra = 0
    if hour == 24:
        hour, extra = 0, 1
    if hour > 24:
        raise UnresolvableGroupTime(f"hour {hour}")
    try:
        t = resolve_day(day, hour, 0, anchor)
    except ValueError as exc:
        raise UnresolvableGroupTime(str(exc)) from None
    return t + timedelta(days=extra)


def _parse_vis(tokens: list[str], i: int) -> tuple[float | None, int]:
    """Visibility at tokens[i] (two tokens for '1 1/2SM'); returns (value, consumed)."""
    tok = tokens[i]
    if re.fullmatch(r"\d", tok) and i + 1 < len(tokens) and _FRACTION_SM_RE.match(tokens[i + 1]):
        try:
            return normalize_visibility(f"{tok} {tokens[i + 1]}"), 2
        except UnparseableVisibility:
            return None, 2
    if _VIS_RE.match(tok):
        try:
            return normalize_visibility(tok), 1
        except UnparseableVisibility:
            return None, 1
    return None, 0


def _extract_vis(tokens: list[str]) -> float | None:
    i = 0
    while i < len(tokens):
        vis, used = _parse_vis(tokens, i)
        if used:
            if vis is not None:
                return vis
            i += used
        else:
            i += 1
    return None


def parse_taf(raw: str, ref: datetime | None = None) -> TafBulletin:
    """Decode one TAF bulletin.

    ``ref`` anchors the issue day to a month (defaults to now). Group windows
    are clipped to the bulletin validity.
    """
    tokens = raw.replace("\n", " ").strip().rstrip("=").split()
    amended = corrected = False
    while tokens and tokens[0] in ("TAF", "AMD", "COR"):
        tok = tokens.pop(0)
        amended |= tok == "AMD"
        corrected |= tok == "COR"
    if not tokens or not _STATION_RE.match(tokens[0]):
        raise MalformedBulletin(f"no station in {raw!r}")
    station = tokens.pop(0)
    anchor = ref or datetime.now(timezone.utc)
    issue = None
    if tokens and (m := _ISSUE_RE.match(tokens[0])):
        tokens.pop(0)
        d, h, mi = (int(g) for g in m.groups())
        try:
            issue = resolve_day(d, h, mi, anchor)
        except ValueError as exc:
            raise MalformedBulletin(str(exc)) from None
        anchor = issue
    if not tokens or not (m := _PERIOD_RE.match(tokens[0])):
        raise MalformedBulletin(f"no validity window in {raw!r}")
    tokens.pop(0)
    d1, h1, d2, h2 = (int(g) for g in m.groups())
    valid_from = _resolve_dh(d1, h1, anchor)
    valid_to = _resolve_dh(d2, h2, valid_from)
    if valid_to <= valid_from:
        raise MalformedBulletin(f"empty validity window in {raw!r}")
    if issue is None:
        issue = valid_from
    if "RMK" in tokens:
        tokens = tokens[: tokens.index("RMK")]

    # split into (marker, time tokens, body) sections
    sections: list[tuple[str, list[str]]] = [("BASE", [])]
    i = 0
    while i < len(tokens):
        tok = tokens[i]
        if _FM_RE.match(tok) or tok in ("BECMG", "TEMPO") or _PROB_RE.match(tok):
            if _PROB_RE.match(tok) and i + 1 < len(tokens) and tokens[i + 1] == "TEMPO":
                sections.append((tok + " TEMPO", []))
                i += 2
                continue
            sections.append((tok, []))
        else:
            sections[-1][1].append(tok)
        i += 1

    def window(body: list[str], what: str) -> tuple[datetime, datetime, list[str]]:
        if not body or not (pm := _PERIOD_RE.match(body[0])):
            raise UnresolvableGroupTime(f"{what} group without period")
        a, b, c, e = (int(g) for g in pm.groups())
        s = _resolve_dh(a, b, valid_from)
        t = _resolve_dh(c, e, s)
        if t <= s or s < valid_from - timedelta(hours=1) or t > valid_to + timedelta(hours=1):
            raise UnresolvableGroupTime(f"{what} {body[0]} outside {valid_from:%d%H}/{valid_to:%d%H}")
        return max(s, valid_from), min(t, valid_to), body[1:]

    # first pass: prevailing chain onsets
    raw_groups: list[tuple[str, datetime, datetime | None, list[str], int | None]] = []
    for marker, body in sections:
        if marker == "BASE":
            raw_groups.append(("BASE", valid_from, None, body, None))
        elif m := _FM_RE.match(marker):
            d, h, mi = (int(g) for g in m.groups())
            try:
                t = resolve_day(d, h, mi, valid_from)
            except ValueError as exc:
                raise UnresolvableGroupTime(str(exc)) from None
            if not (valid_from <= t <= valid_to):
                raise UnresolvableGroupTime(f"{marker} outside validity")
            raw_groups.append(("FM", t, None, body, None))
        elif marker == "BECMG":
            s, e, rest = window(body, marker)
            raw_groups.append(("BECMG", s, e, rest, None))
        elif marker == "TEMPO":
            s, e, rest = window(body, marker)
            raw_groups.append(("TEMPO", s, e, rest, None))
        else:
            pct = int(_PROB_RE.match(marker.split()[0]).group(1))
            s, e, rest = window(body, marker)
            raw_groups.append(("PROB", s, e, rest, pct))

    fm_onsets = sorted(t for kind, t, _e, _b, _p in raw_groups if kind == "FM")
    groups: list[ForecastGroup] = []
    prevailing_vis: float | None = None
    for kind, start, end, body, pct in raw_groups:
        vis = _extract_vis(body)
        inherited = vis is None
        if kind in ("BASE", "FM"):
            if kind == "BASE":
                end = fm_onsets[0] if fm_onsets else valid_to
            else:
                k = bisect.bisect_right(fm_onsets, start)
                end = fm_onsets[k] if k < len(fm_onsets) else valid_to
            if vis is None:
                vis = prevailing_vis
            prevailing_vis = vis
        elif kind == "BECMG":
            if vis is None:
                vis = prevailing_vis
            else:
                prevailing_vis = vis
        elif vis is None:
            vis = prevailing_vis
        groups.append(ForecastGroup(kind, start, end, vis, pct, inherited))
    return TafBulletin(
        station, issue, valid_from, valid_to, tuple(groups), amended, corrected, raw
    )


def resolve_visibility(
    bulletin: TafBulletin, t: datetime, include_prob: bool = True
) -> float | None:
    """Worst-case forecast visibility at ``t`` (None outside validity).

    The prevailing BASE/FM value is adjusted by BECMG groups in its segment
    (new value from window start, old value dropped at window end) and then
    minimised against every TEMPO (and optionally PROB) group covering ``t``.
    """
    if not (bulletin.valid_from <= t <= bulletin.valid_to):
        return None
    closed = t == bulletin.valid_to
    current = None
    segment = None
    for g in bulletin.prevailing:
        if g.contains(t, closed_end=closed and g.end == bulletin.valid_to):
            current, segment = g.visibility_sm, g
    candidates: list[float] = []
    for g in bulletin.groups:
        if g.kind != "BECMG" or segment is None or not (segment.start <= g.start < segment.end):
            continue
        if g.visibility_sm is None:
            continue
        if t >= g.end:
            current = g.visibility_sm
        elif t >= g.start:
            candidates.append(g.visibility_sm)
    if current is not None:
        candidates.append(current)
    for g in bulletin.groups:
        if g.kind == "TEMPO" or (g.kind == "PROB" and include_prob):
            if g.visibility_sm is not None and g.contains(t, closed_end=closed):
                candidates.append(g.visibility_sm)
    return min(candidates) if candidates else None


def taf_predicts_ifr(
    bulletin: TafBulletin | None, t: datetime, include_prob: bool = True
) -> int | None:
    if bulletin is None:
        return None
    vis = resolve_visibility(bulletin, t, include_prob)
    if vis is None:
        return None
    return int(vis < IFR_THRESHOLD_SM)


def select_bulletin(bulletins: Sequence[TafBulletin], decision_time: datetime) -> TafBulletin | None:
    """Latest bulletin issued at or before ``decision_time``.

    ``bulletins`` must be sorted by issue time; amendments therefore replace
    their predecessor from their own issue time forward.
    """
    keys = [b.issue_time for b in bulletins]
    k = bisect.bisect_right(keys, decision_time)
    return bulletins[k - 1] if k else None


def read_taf_archive(path, ref_column: str = "issued_utc") -> list[TafBulletin]:
    """Read an archive CSV with columns station, issued_utc, raw_taf.

    Bulletins that fail to decode are skipped. The result is sorted by issue
    time.
    """
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            ref = _parse_utc(row[ref_column])
            try:
                out.append(parse_taf(row["raw_taf"], ref=ref))
            except (MalformedBulletin, UnresolvableGroupTime):
                continue
    out.sort(key=lambda b: b.issue_time)
    return out


def _parse_utc(text: str) -> datetime:
    text = text.strip().replace("Z", "")
    dt = datetime.fromisoformat(text.replace(" ", "T"))
    return dt.replace(tzinfo=timezone.utc) if dt.tzinfo is None else dt.astimezone(timezone.utc)


def write_predictions(path, station: str, rows: Iterable[tuple[datetime, float | None, int | None]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["station", "valid_utc", "taf_vis_sm", "taf_ifr"])
        for t, vis, ifr in rows:
            w.writerow([
                station,
                t.strftime("%Y-%m-%dT%H:%MZ"),
                "" if vis is None else f"{vis:.3f}",
                "" if ifr is None else ifr,
            ])


__all__ = [
    "ForecastGroup",
    "TafBulletin",
    "UNLIMITED_VIS_SM",
    "parse_taf",
    "read_taf_archive",
    "resolve_visibility",
    "select_bulletin",
    "taf_predicts_ifr",
    "write_predictions",
]
