"""Rate-limited, cached archive downloads.

A job's window is cut into ``batch_days`` chunks. Each chunk is fetched at
most once and stored verbatim under
``cache_dir/<source>/<station>/<chunk-start>.txt``; ``manifest.json`` in the
same directory lists every chunk with its byte count and SHA-256.

Endpoints, query templates and column names come from a JSON config
(the bundled ``data/sources.json`` unless ``IFRNOW_SOURCES`` points elsewhere).
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
import os
import threading
import time
from dataclasses import dataclass, field
from datetime import date, timedelta
from importlib import resources
from pathlib import Path
from typing import Callable
from urllib.parse import urlsplit

import httpx

from .errors import CacheCorrupt, ExhaustedRetries, FetchFailed

log = logging.getLogger(__name__)

SOURCES = ("observation-archive", "taf-archive")
DEFAULT_BATCH_DAYS = 30
DEFAULT_MIN_INTERVAL_MS = 1000
BACKOFF_BASE_S = 1.0
BACKOFF_FACTOR = 2.0
MAX_ATTEMPTS = 5
MANIFEST = "manifest.json"


@dataclass(frozen=True)
class FetchJob:
    station: str
    start: date
    end: date  # exclusive
    source: str = "observation-archive"
    batch_days: int = DEFAULT_BATCH_DAYS
    min_interval_ms: int = DEFAULT_MIN_INTERVAL_MS

    def __post_init__(self):
        if self.source not in SOURCES:
            raise ValueError(f"source must be one of {SOURCES}")
        if self.end <= self.start:
            raise ValueError("window must be non-empty (end after start)")
        if self.batch_days < 1:
            raise ValueError("batch_days must be >= 1")
        if self.min_interval_ms < 0:
            raise ValueError("min_interval_ms must be >= 0")

    @property
    def window_days(self) -> int:
        return (self.end - self.start).days

    def chunks(self) -> list[tuple[date, date]]:
        n = math.ceil(self.window_days / self.batch_days)
        out = []
        for k in range(n):
            a = self.start + timedelta(days=k * self.batch_days)
            out.append((a, min(a + timedelta(days=self.batch_days), self.end)))
        return out


def load_sources(path=None) -> dict:
    path = path or os.environ.get("IFRNOW_SOURCES")
    if path:
        return json.loads(Path(path).read_text())
    return json.loads(resources.files("ifrnow.data").joinpath("sources.json").read_text())


class HostPacer:
    """Serialises requests per host and spaces them by a minimum interval.

    Every request start is appended to ``log`` as (host, monotonic seconds).
    """

    def __init__(self, clock: Callable[[], float] = time.monotonic, sleep: Callable[[float], None] = time.sleep):
        self.clock = clock
        self.sleep = sleep
        self.log: list[tuple[str, float]] = []
        self._last: dict[str, float] = {}
        self._locks: dict[str, threading.Lock] = {}
        self._guard = threading.Lock()

    def lock(self, host: str) -> threading.Lock:
        with self._guard:
            return self._locks.setdefault(host, threading.Lock())

    def wait_turn(self, host: str, min_interval_s: float) -> None:
        """Block until ``host`` may be hit again; caller holds ``lock(host)``."""
        last = self._last.get(host)
        if last is not None:
            remaining = last + min_interval_s - self.clock()
            if remaining > 0:
                self.sleep(remaining)
        now = self.clock()
        self._last[host] = now
        self.log.append((host, now))


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


@dataclass
class Fetcher:
    sources: dict = field(default_factory=load_sources)
    pacer: HostPacer = field(default_factory=HostPacer)
    timeout_s: float = 60.0
    backoff_base_s: float = BACKOFF_BASE_S
    backoff_factor: float = BACKOFF_FACTOR
    max_attempts: int = MAX_ATTEMPTS
    transport: httpx.BaseTransport | None = None
    requests_made: int = 0

    def _request(self, url: str, params: dict, headers: dict, min_interval_s: float) -> bytes:
        host = urlsplit(url).netloc
        with httpx.Client(timeout=self.timeout_s, transport=self.transport) as client:
            for attempt in range(1, self.max_attempts + 1):
                delay = self.backoff_base_s * self.backoff_factor ** (attempt - 1)
                with self.pacer.lock(host):
                    self.pacer.wait_turn(host, min_interval_s)
                    self.requests_made += 1
                    try:
                        resp = client.get(url, params=params, headers=headers)
                    except httpx.TimeoutException as exc:
                        reason = f"timeout ({exc.__class__.__name__})"
                        resp = None
                    except httpx.TransportError as exc:
                        reason = f"transport error ({exc})"
                        resp = None
                if resp is not None:
                    if resp.status_code == 200:
                        return resp.content
                    if resp.status_code != 429 and resp.status_code < 500:
                        raise FetchFailed(f"{url} answered HTTP {resp.status_code}")
                    reason = f"HTTP {resp.status_code}"
                    retry_after = resp.headers.get("Retry-After", "")
                    if retry_after.isdigit():
                        delay = max(delay, float(retry_after))
                if attempt == self.max_attempts:
                    break
                log.warning("%s: %s, retry %d in %.1fs", url, reason, attempt, delay)
                self.pacer.sleep(delay)
        raise ExhaustedRetries(f"{url}: {reason} after {self.max_attempts} attempts")

    def _params(self, cfg: dict, station: str, start: date, end: date) -> dict:
        sid = station[1:] if cfg.get("drop_k_prefix") and len(station) == 4 and station.startswith("K") else station
        out = {}
        for key, tmpl in cfg.get("params", {}).items():
            if isinstance(tmpl, list):
                out[key] = [t.format(station=sid, start=start, end=end) for t in tmpl]
            else:
                out[key] = tmpl.format(station=sid, start=start, end=end)
        return out

    def _headers(self, cfg: dict) -> dict:
        env = cfg.get("token_env")
        token = os.environ.get(env) if env else None
        return {"Authorization": f"Bearer {token}"} if token else {}

    def fetch(self, job: FetchJob, cache_dir) -> Path:
        """Download every missing chunk; returns the chunk directory."""
        cfg = self.sources[job.source]
        folder = Path(cache_dir) / job.source / job.station
        folder.mkdir(parents=True, exist_ok=True)
        manifest = read_manifest(folder)
        entries = {e["start"]: e for e in manifest.get("chunks", [])}
        verify_cache(folder, manifest)
        for start, end in job.chunks():
            key = start.isoformat()
            if key in entries and (folder / entries[key]["file"]).exists() and entries[key]["end"] == end.isoformat():
                continue
            body = self._request(
                cfg["url"],
                self._params(cfg, job.station, start, end),
                self._headers(cfg),
                job.min_interval_ms / 1000.0,
            )
            name = f"{key}.txt"
            tmp = folder / (name + ".part")
            tmp.write_bytes(body)
            tmp.replace(folder / name)
            entries[key] = {
                "start": key,
                "end": end.isoformat(),
                "file": name,
                "bytes": len(body),
                "sha256": _sha256(body),
            }
            _write_manifest(folder, job, entries)
        _write_manifest(folder, job, entries)
        return folder


def read_manifest(folder) -> dict:
    path = Path(folder) / MANIFEST
    if not path.exists():
        return {}
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise CacheCorrupt(f"{path}: unreadable manifest ({exc})") from None


def verify_cache(folder, manifest: dict | None = None) -> None:
    """Raise CacheCorrupt if any listed chunk's bytes differ from the manifest."""
    folder = Path(folder)
    manifest = read_manifest(folder) if manifest is None else manifest
    for e in manifest.get("chunks", []):
        path = folder / e["file"]
        if not path.exists():
            continue
        data = path.read_bytes()
        if len(data) != e["bytes"] or _sha256(data) != e["sha256"]:
            raise CacheCorrupt(f"{path}: checksum mismatch with manifest; delete it to re-download")


def _write_manifest(folder: Path, job: FetchJob, entries: dict) -> None:
    doc = {
        "source": job.source,
        "station": job.station,
        "chunks": [entries[k] for k in sorted(entries)],
    }
    tmp = folder / (MANIFEST + ".part")
    tmp.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    tmp.replace(folder / MANIFEST)


def fetch(job: FetchJob, cache_dir, **kwargs) -> Path:
    return Fetcher(**kwargs).fetch(job, cache_dir)


CANONICAL_COLUMNS = {
    "observation-archive": ("station", "valid", "metar"),
    "taf-archive": ("station", "issued_utc", "raw_taf"),
}


def assemble(cache_dir, source: str, station: str, out_path, sources: dict | None = None) -> Path:
    """Merge the cached chunks into one CSV with the package's column names.

    Rows are de-duplicated and written in chunk order. Lines starting with
    ``#`` (provider comments) are skipped.
    """
    cfg = (sources or load_sources())[source]
    mapping = cfg["columns"]
    canonical = CANONICAL_COLUMNS[source]
    folder = Path(cache_dir) / source / station
    manifest = read_manifest(folder)
    verify_cache(folder, manifest)
    seen = set()
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with out_path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(canonical)
        for e in manifest.get("chunks", []):
            text = (folder / e["file"]).read_text(encoding="utf-8", errors="replace")
            lines = [ln for ln in text.splitlines() if ln and not ln.startswith("#")]
            for row in csv.DictReader(io.StringIO("\n".join(lines))):
                rec = tuple((row.get(mapping[c]) or "").strip() for c in canonical)
                if not rec[-1] or rec in seen:
                    continue
                seen.add(rec)
                w.writerow(rec)
    return out_path
