"""Local stand-in for the archive providers, used by tests and offline demos.

Responses are generated deterministically from the requested station and
window, in the same CSV layouts the real providers return. Faults can be
queued per chunk start date: ``"429"``, ``"500"`` or ``"timeout"`` (the
handler stalls for ``stall_s`` seconds before answering).

Run ``python -m ifrnow.mockserver`` to serve on a fixed port and print a
sources config pointing at it.
"""
from __future__ import annotations

import argparse
import copy
import hashlib
import json
import threading
import time
from datetime import date, datetime, timedelta, timezone
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qs, urlsplit

import numpy as np

from .ingest import load_sources
from .synthetic import format_metar


def _rng(*key) -> np.random.Generator:
    digest = hashlib.sha256("|".join(map(str, key)).encode()).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "little"))


def metar_rows(station: str, start: date, end: date) -> str:
    """Hourly reports; like the real archive, 3-letter US ids carry a K in the report."""
    icao = "K" + station if len(station) == 3 else station
    lines = ["station,valid,metar"]
    t = datetime(start.year, start.month, start.day, 0, 51, tzinfo=timezone.utc)
    stop = datetime(end.year, end.month, end.day, tzinfo=timezone.utc)
    while t < stop:
        r = _rng(station, t.isoformat())
        temp = round(float(r.uniform(-5, 25)), 1)
        dew = round(temp - float(r.exponential(4.0)), 1)
        vis = float(r.choice([0.5, 1.0, 2.0, 4.0, 6.0, 10.0, 10.0, 10.0, 10.0]))
        raw = format_metar(icao, t, int(r.integers(1, 37)) * 10, int(r.integers(3, 20)),
                           vis, temp, dew, round(float(r.uniform(29.7, 30.3)), 2))
        lines.append(f"{station},{t:%Y-%m-%d %H:%M},{raw}")
        t += timedelta(hours=1)
    return "\n".join(lines) + "\n"


def taf_rows(station: str, start: date, end: date) -> str:
    lines = ["station,valid,raw"]
    t = datetime(start.year, start.month, start.day, tzinfo=timezone.utc)
    stop = datetime(end.year, end.month, end.day, tzinfo=timezone.utc)
    while t < stop:
        issue = t - timedelta(minutes=40)
        r = _rng(station, "taf", t.isoformat())
        v0, v1 = t, t + timedelta(hours=24)
        vis = r.choice(["P6SM", "5SM", "3SM"])
        raw = (f"TAF {station} {issue:%d%H%M}Z {v0:%d%H}/{v1:%d%H} "
               f"{int(r.integers(1, 37)) * 10:03d}08KT {vis} SCT030")
        if r.random() < 0.3:
            a = t + timedelta(hours=int(r.integers(2, 12)))
            raw += f" TEMPO {a:%d%H}/{a + timedelta(hours=4):%d%H} 1SM BR"
        lines.append(f"{station},{issue:%Y-%m-%d %H:%M},{raw}")
        t += timedelta(hours=6)
    return "\n".join(lines) + "\n"


class MockArchive:
    def __init__(self, port: int = 0, stall_s: float = 1.0):
        self.faults: dict[str, list[str]] = {}
        self.requests: list[tuple[float, str]] = []
        self.stall_s = stall_s
        self._lock = threading.Lock()
        archive = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):
                pass

            def do_GET(self):
                archive._handle(self)

        self.server = ThreadingHTTPServer(("127.0.0.1", port), Handler)
        self.server.daemon_threads = True
        self.thread = threading.Thread(target=self.server.serve_forever, daemon=True)

    @property
    def base_url(self) -> str:
        host, port = self.server.server_address[:2]
        return f"http://{host}:{port}"

    def sources(self) -> dict:
        cfg = copy.deepcopy(load_sources())
        cfg["observation-archive"]["url"] = self.base_url + "/asos"
        cfg["taf-archive"]["url"] = self.base_url + "/taf"
        return cfg

    def inject(self, chunk_start: date, *kinds: str) -> None:
        self.faults.setdefault(chunk_start.isoformat(), []).extend(kinds)

    def _handle(self, req: BaseHTTPRequestHandler) -> None:
        arrived = time.monotonic()
        url = urlsplit(req.path)
        q = {k: v[0] for k, v in parse_qs(url.query).items()}
        try:
            if url.path == "/asos":
                start = date(int(q["year1"]), int(q["month1"]), int(q["day1"]))
                end = date(int(q["year2"]), int(q["month2"]), int(q["day2"]))
                body = metar_rows(q["station"], start, end)
            elif url.path == "/taf":
                start = date.fromisoformat(q["sts"][:10])
                end = date.fromisoformat(q["ets"][:10])
                body = taf_rows(q["station"], start, end)
            else:
                self._send(req, 404, "not found\n")
                return
        except (KeyError, ValueError):
            self._send(req, 400, "bad query\n")
            return
        with self._lock:
            self.requests.append((arrived, req.path))
            pending = self.faults.get(start.isoformat())
            fault = pending.pop(0) if pending else None
        if fault == "timeout":
            time.sleep(self.stall_s)
        elif fault in ("429", "500", "503"):
            self._send(req, int(fault), "slow down\n")
            return
        self._send(req, 200, body)

    @staticmethod
    def _send(req, status: int, text: str) -> None:
        data = text.encode()
        try:
            req.send_response(status)
            req.send_header("Content-Type", "text/csv")
            req.send_header("Content-Length", str(len(data)))
            req.end_headers()
            req.wfile.write(data)
        except (BrokenPipeError, ConnectionResetError):
            pass

    def __enter__(self) -> "MockArchive":
        self.thread.start()
        return self

    def __exit__(self, *exc) -> None:
        self.server.shutdown()
        self.server.server_close()


def main() -> None:
    ap = argparse.ArgumentParser(description="Serve mock observation and TAF archives.")
    ap.add_argument("--port", type=int, default=8765)
    ap.add_argument("--write-sources", help="write a sources config for this server to this path")
    args = ap.parse_args()
    with MockArchive(args.port) as mock:
        if args.write_sources:
            with open(args.write_sources, "w") as fh:
                json.dump(mock.sources(), fh, indent=2)
        print(f"serving on {mock.base_url}; Ctrl-C to stop", flush=True)
        try:
            while True:
                time.sleep(3600)
        except KeyboardInterrupt:
            pass


if __name__ == "__main__":
    main()
