"""ICAO identifier to coordinates, from the bundled table."""
from __future__ import annotations

import csv
import io
from functools import lru_cache
from importlib import resources


@lru_cache(maxsize=1)
def table() -> dict[str, tuple[float, float]]:
    text = resources.files("ifrnow.data").joinpath("stations.csv").read_text()
    return {r["icao"]: (float(r["lat"]), float(r["lon"])) for r in csv.DictReader(io.StringIO(text))}


def coordinates(icao: str, lat: float | None = None, lon: float | None = None) -> tuple[float | None, float | None]:
    """Explicit lat/lon win; otherwise the table entry, or (None, None) if unknown."""
    if lat is not None and lon is not None:
        return lat, lon
    return table().get(icao.upper(), (None, None))
