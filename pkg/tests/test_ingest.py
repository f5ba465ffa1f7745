import csv
import json
import threading
from dataclasses import replace
from datetime import date

import httpx
import pytest

from ifrnow.errors import CacheCorrupt, ExhaustedRetries, FetchFailed
from ifrnow.ingest import FetchJob, Fetcher, HostPacer, assemble, load_sources, read_manifest, verify_cache
from ifrnow.mockserver import MockArchive
from ifrnow.obs import read_metar_archive
from ifrnow.taf import read_taf_archive


class FakeClock:
    """Deterministic clock whose sleep just advances time."""

    def __init__(self):
        self.now = 0.0
        self.sleeps = []

    def __call__(self):
        return self.now

    def sleep(self, s):
        self.sleeps.append(s)
        self.now += s


def scripted(responses, seen=None):
    """Transport answering each request with the next (status, headers, body)."""
    queue = list(responses)

    def handler(request):
        if seen is not None:
            seen.append(request)
        status, headers, body = queue.pop(0)
        if status == "timeout":
            raise httpx.ReadTimeout("stalled", request=request)
        return httpx.Response(status, headers=headers, text=body)

    return httpx.MockTransport(handler)


def fetcher(responses, seen=None, **kw):
    clock = FakeClock()
    f = Fetcher(pacer=HostPacer(clock, clock.sleep), transport=scripted(responses, seen), **kw)
    return f, clock


JOB = FetchJob("KJFK", date(2024, 1, 1), date(2024, 1, 11), batch_days=5, min_interval_ms=1000)


def test_chunking():
    job = FetchJob("KJFK", date(2023, 1, 1), date(2024, 1, 1))
    chunks = job.chunks()
    assert len(chunks) == 13 and job.window_days == 365
    assert chunks[0] == (date(2023, 1, 1), date(2023, 1, 31))
    assert chunks[-1] == (date(2023, 12, 27), date(2024, 1, 1))
    assert all(a == b for (_, a), (b, _) in zip(chunks, chunks[1:]))


@pytest.mark.parametrize(
    "kw",
    [
        dict(source="weather-blog"),
        dict(end=date(2024, 1, 1)),
        dict(batch_days=0),
        dict(min_interval_ms=-1),
    ],
)
def test_job_validation(kw):
    args = dict(station="KJFK", start=date(2024, 1, 1), end=date(2024, 2, 1)) | kw
    with pytest.raises(ValueError):
        FetchJob(**args)


def test_pacer_spacing():
    clock = FakeClock()
    pacer = HostPacer(clock, clock.sleep)
    for _ in range(3):
        pacer.wait_turn("a", 1.0)
    pacer.wait_turn("b", 1.0)
    assert [t for h, t in pacer.log if h == "a"] == [0.0, 1.0, 2.0]
    assert clock.sleeps == [1.0, 1.0]


def test_pacer_serialises_threads():
    pacer = HostPacer()

    def hit():
        with pacer.lock("h"):
            pacer.wait_turn("h", 0.05)

    threads = [threading.Thread(target=hit) for _ in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    times = sorted(t for _, t in pacer.log)
    assert all(b - a >= 0.049 for a, b in zip(times, times[1:]))


def test_backoff_and_retry_after(tmp_path):
    ok = (200, {}, "station,valid,metar\n")
    f, clock = fetcher([(503, {}, ""), (429, {"Retry-After": "7"}, ""), ("timeout", {}, ""), ok, ok])
    f.fetch(JOB, tmp_path)
    assert f.requests_made == 5
    assert clock.sleeps[:3] == [1.0, 7.0, 4.0]


def test_exhausted_retries(tmp_path):
    f, clock = fetcher([(500, {}, "")] * 3, max_attempts=3, backoff_base_s=0.5)
    with pytest.raises(ExhaustedRetries):
        f.fetch(replace(JOB, min_interval_ms=0), tmp_path)
    assert f.requests_made == 3 and clock.sleeps == [0.5, 1.0]


def test_client_errors_fail_fast(tmp_path):
    f, _ = fetcher([(404, {}, "")])
    with pytest.raises(FetchFailed):
        f.fetch(JOB, tmp_path)
    assert f.requests_made == 1


def test_token_and_station_id(tmp_path, monkeypatch):
    sources = load_sources()
    sources["observation-archive"]["token_env"] = "ARCHIVE_TOKEN"
    monkeypatch.setenv("ARCHIVE_TOKEN", "s3cret")
    seen = []
    f, _ = fetcher([(200, {}, "x\n")] * 2, seen, sources=sources)
    f.fetch(JOB, tmp_path)
    assert seen[0].headers["Authorization"] == "Bearer s3cret"
    assert seen[0].url.params["station"] == "JFK"
    assert seen[0].url.params.get_list("report_type") == ["3", "4"]
    assert (seen[1].url.params["day1"], seen[1].url.params["day2"]) == ("06", "11")


def test_cache_detects_tampering(tmp_path):
    f, _ = fetcher([(200, {}, "a\n"), (200, {}, "b\n")])
    folder = f.fetch(JOB, tmp_path)
    manifest = read_manifest(folder)
    assert [c["start"] for c in manifest["chunks"]] == ["2024-01-01", "2024-01-06"]
    verify_cache(folder)
    (folder / "2024-01-06.txt").write_text("c\n")
    with pytest.raises(CacheCorrupt):
        f.fetch(JOB, tmp_path)
    (folder / "manifest.json").write_text("{not json")
    with pytest.raises(CacheCorrupt):
        read_manifest(folder)


def test_resume_fetches_only_missing_chunks(tmp_path):
    f, _ = fetcher([(200, {}, "a\n"), (200, {}, "b\n")])
    folder = f.fetch(JOB, tmp_path)
    (folder / "2024-01-01.txt").unlink()
    g, _ = fetcher([(200, {}, "a\n")])
    g.fetch(JOB, tmp_path)
    assert g.requests_made == 1


def test_mock_round_trip(tmp_path):
    with MockArchive() as mock:
        f = Fetcher(sources=mock.sources())
        job = FetchJob("KJFK", date(2024, 1, 1), date(2024, 1, 9), batch_days=4, min_interval_ms=0)
        f.fetch(job, tmp_path / "cache")
        taf_job = FetchJob("KJFK", date(2024, 1, 1), date(2024, 1, 9), source="taf-archive", batch_days=4, min_interval_ms=0)
        f.fetch(taf_job, tmp_path / "cache")
        metar_csv = assemble(tmp_path / "cache", "observation-archive", "KJFK", tmp_path / "m.csv", mock.sources())
        taf_csv = assemble(tmp_path / "cache", "taf-archive", "KJFK", tmp_path / "t.csv", mock.sources())
    with open(metar_csv) as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == ["station", "valid", "metar"]
    assert len(rows) == len({tuple(r.values()) for r in rows})
    obs = read_metar_archive(metar_csv, station="KJFK")
    assert len(obs) > 100
    assert len(read_taf_archive(taf_csv)) > 10
    doc = json.loads((tmp_path / "cache" / "observation-archive" / "KJFK" / "manifest.json").read_text())
    assert doc["station"] == "KJFK" and len(doc["chunks"]) == 2
