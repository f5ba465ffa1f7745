"""Exit criteria, one test (or one parametrized family) per criterion.

Run alone with ``pytest tests/test_acceptance.py -v``; the terminal summary
ends with one PASS/FAIL line per criterion.
"""
import hashlib
import math
import random
import time
from datetime import date

import numpy as np
import pytest

import oracles
from corpus import METAR_CASES, REF, TAF_CASES, mar
from ifrnow.bench import ConfusionMatrix, classify, f1_score, metrics, recall
from ifrnow.errors import MalformedReport
from ifrnow.explain import Explainer, background_sample, mean_abs_shap
from ifrnow.features import FEATURE_NAMES, FeatureMatrix, build_matrix, relative_humidity, temporal_split
from ifrnow.gbdt import TrainConfig, predict_margin, predict_proba, train
from ifrnow.gbdt.io import to_bytes
from ifrnow.gbdt.model import auc, sample_weights, sigmoid
from ifrnow.ingest import Fetcher, FetchJob, HostPacer, read_manifest
from ifrnow.metar import parse_metar
from ifrnow.mockserver import MockArchive
from ifrnow.obs import downsample_hourly, forward_fill, read_metar_archive
from ifrnow.synthetic import fog_archive, write_metar_csv
from ifrnow.taf import parse_taf, resolve_visibility

pytestmark = pytest.mark.acceptance

# ---------------------------------------------------------------- criterion 1

# station/target, tn, fp, fn, tp, printed recall %, printed precision %
TABLE2 = [
    ("SCEL-IFR", 31764, 2241, 198, 2045, 91.2, 47.7),
    ("VIDP-smog", 29819, 3806, 270, 2585, 90.5, 40.4),
    ("KJFK-IFR", 10455, 459, 212, 719, 77.2, 61.0),
    ("KATL-IFR", 8073, 251, 109, 313, 74.2, 55.5),
    ("EGLL-IFR", 17444, 458, 808, 616, 43.3, 57.4),
    ("KSFO-rain", 20373, 1149, 184, 547, 74.8, 32.3),
    ("SCEL-rain", 34004, 1670, 265, 316, 54.4, 15.9),
    ("SBGR-mist", 16854, 2064, 338, 613, 64.5, 22.9),
    ("SBGR-rain", 15425, 2683, 655, 1106, 62.8, 29.2),
]

# station/period/agent, tn, fp, fn, tp, printed recall %
TABLE3 = [
    ("SCEL2024-TAF", 8217, 197, 214, 93, 30.3),
    ("SCEL2024-ML", 7747, 667, 33, 274, 89.3),
    ("SCEL2023-TAF", 7904, 286, 289, 141, 32.8),
    ("SCEL2023-ML", 7368, 822, 64, 366, 85.1),
    ("KORD-TAF", 14089, 978, 514, 131, 20.3),
    ("KORD-ML", 14517, 550, 275, 370, 57.4),
    ("KJFK-TAF", 14038, 977, 512, 207, 28.8),
    ("KJFK-ML", 14305, 710, 181, 538, 74.8),
    ("KATL-TAF", 11956, 655, 436, 75, 14.7),
    ("KATL-ML", 12053, 558, 144, 367, 71.8),
]

# station/agent, printed recall %, precision %, F1 %
TABLE4 = [
    ("SCEL2024-TAF", 30.3, 32.1, 31.1),
    ("SCEL2024-ML", 89.3, 29.1, 43.9),
    ("KORD-TAF", 20.3, 11.8, 15.0),
    ("KORD-ML", 57.4, 40.2, 47.1),
    ("KJFK-TAF", 28.8, 17.5, 21.7),
    ("KJFK-ML", 74.8, 43.1, 54.6),
    ("KATL-TAF", 14.7, 10.3, 12.1),
    ("KATL-ML", 71.8, 39.7, 51.2),
]


@pytest.mark.criterion(1)
def test_table_oracle():
    start = time.perf_counter()
    misses = []
    for name, tn, fp, fn, tp, rec, prec in TABLE2:
        r, p, _ = metrics(ConfusionMatrix(tn, fp, fn, tp))
        # independent desk arithmetic agrees with the package
        assert r == tp / (tp + fn) and p == tp / (tp + fp)
        if abs(100 * r - rec) > 0.05 or abs(100 * p - prec) > 0.05:
            misses.append((name, 100 * r, rec, 100 * p, prec))
    for name, tn, fp, fn, tp, rec in TABLE3:
        r = recall(ConfusionMatrix(tn, fp, fn, tp))
        assert r == tp / (tp + fn)
        if abs(100 * r - rec) > 0.05:
            misses.append((name, 100 * r, rec))
    elapsed = time.perf_counter() - start
    assert not misses, misses
    assert elapsed < 1.0


# ---------------------------------------------------------------- criterion 2


@pytest.mark.criterion(2)
@pytest.mark.parametrize("name,rec,prec,f1", TABLE4, ids=[row[0] for row in TABLE4])
def test_table4_f1_consistency(name, rec, prec, f1):
    oracle = 2 * prec * rec / (prec + rec)
    got = f1_score(prec / 100, rec / 100) * 100
    assert got == pytest.approx(oracle, abs=1e-9)
    assert abs(got - f1) <= 0.1, f"{name}: F1 from printed P/R is {got:.3f}%, table prints {f1}%"


# ---------------------------------------------------------------- criterion 3


@pytest.mark.criterion(3)
def test_magnus_rh():
    temps = np.linspace(-20.0, 40.0, 20)
    for i, t in enumerate(temps):
        td = t - (i % 5) * 3.7 - 0.25 * (i % 3)
        got = relative_humidity(t, td)
        want = oracles.magnus_rh(t, td)
        assert f"{got:.4g}" == f"{want:.4g}", (t, td, got, want)
        assert abs(got - want) / want < 5e-5
    for t in np.linspace(-20.0, 40.0, 61):
        assert abs(relative_humidity(t, t) - 100.0) <= 100.0 * 1e-9


# ---------------------------------------------------------------- criterion 4


def _random_split_dataset(rng):
    n = int(rng.integers(2, 33))
    k = int(rng.integers(1, 4))
    # coarse values give ties; NaNs exercise the default direction
    X = rng.integers(0, 6, size=(n, k)).astype(float) + rng.choice([0.0, 0.5], size=(n, k))
    X[rng.random((n, k)) < rng.choice([0.0, 0.15, 0.4])] = np.nan
    y = (rng.random(n) < 0.4).astype(float)
    if y.min() == y.max():
        y[int(rng.integers(n))] = 1.0 - y[0]
    return X, y


@pytest.mark.criterion(4)
def test_gbdt_root_split_oracle():
    rng = np.random.default_rng(4)
    start = time.perf_counter()
    for case in range(200):
        X, y = _random_split_dataset(rng)
        cfg = TrainConfig(n_trees=8, max_depth=3, min_child_weight=float(rng.choice([0.0, 0.1, 1.0])))
        model = train(X, y, cfg)

        w = sample_weights(y, model.metadata["scale_pos_weight"])
        p = sigmoid(np.full(len(y), model.base_score))
        g, h = w * (p - y), w * p * (1 - p)
        best = oracles.exhaustive_root_split(X, g, h, cfg.l2_lambda, cfg.gamma, cfg.min_child_weight)
        root = model.trees[0]
        if best is None or best[0] <= 1e-6:
            assert root.feature[0] == -1, (case, best)
        else:
            gain, f, thr, dleft = best
            got = (int(root.feature[0]), float(root.threshold[0]), bool(root.default_left[0]))
            assert got == (f, thr, dleft), (case, got, best)
            assert root.gain[0] == pytest.approx(gain, rel=1e-9, abs=1e-12)

        loss = np.asarray(model.history["train_loss"])
        assert np.all(np.diff(loss) <= 1e-12 * loss[:-1]), (case, loss)
    assert time.perf_counter() - start < 30.0


# ---------------------------------------------------------------- criterion 5


@pytest.mark.criterion(5)
def test_treeshap_matches_brute_force():
    rng = np.random.default_rng(5)
    for case in range(50):
        k = int(rng.integers(2, 6))
        n = int(rng.integers(30, 200))
        X = rng.normal(size=(n, k))
        X[rng.random((n, k)) < 0.1] = np.nan
        y = ((np.nan_to_num(X[:, 0]) + 0.5 * np.nan_to_num(X[:, -1]) + rng.normal(0, 0.7, n)) > 0).astype(float)
        cfg = TrainConfig(n_trees=int(rng.integers(1, 3)), max_depth=int(rng.integers(1, 4)))
        model = train(X, y, cfg)
        background = None if case % 3 == 0 else rng.normal(size=(int(rng.integers(5, 60)), k))
        if background is None:
            covers = [t.cover for t in model.trees]
        else:
            covers = [oracles.route_counts(t, background) for t in model.trees]
        ex = Explainer(model, background)
        base = model.base_score + sum(oracles._tree_expectation(t, c, np.zeros(k), set()) for t, c in zip(model.trees, covers))
        assert ex.base_value == pytest.approx(base, abs=1e-9)
        rows = rng.normal(size=(4, k))
        rows[rng.random((4, k)) < 0.2] = np.nan
        phi = ex.shap_values(rows)
        for x, got in zip(rows, phi):
            want = oracles.brute_force_shap(model.trees, covers, x, k)
            assert np.max(np.abs(got - want)) < 1e-6, (case, got, want)


@pytest.fixture(scope="module")
def fog_split():
    arc = fog_archive(n_hours=12000)
    fm = build_matrix(forward_fill(downsample_hourly(arc.reports)), arc.lat, arc.lon, arc.horizon_h)
    return temporal_split(fm, 0.8)


@pytest.mark.criterion(5)
def test_treeshap_local_accuracy_full_model(fog_split):
    tr, te = fog_split
    model = train(tr.X, tr.y, TrainConfig(), feature_names=FEATURE_NAMES)
    assert len(model.trees) == 100
    rng = np.random.default_rng(55)
    rows = te.X[rng.choice(len(te), 1000, replace=True)].copy()
    rows += rng.normal(0, 0.5, rows.shape)
    rows[rng.random(rows.shape) < 0.1] = np.nan
    ex = Explainer(model, background_sample(tr.X))
    phi = ex.shap_values(rows)
    margin = predict_margin(model, rows)
    walked = np.array([oracles.tree_margin(model.trees, model.base_score, x) for x in rows[:50]])
    assert np.max(np.abs(walked - margin[:50])) < 1e-9
    err = np.abs(ex.base_value + phi.sum(axis=1) - margin)
    assert err.max() < 1e-6


# ---------------------------------------------------------------- criterion 6


@pytest.mark.criterion(6)
def test_synthetic_end_to_end(tmp_path):
    start = time.perf_counter()
    arc = fog_archive(n_hours=12000, prevalence=0.08, noise=0.02)
    # the generator really follows its rule
    assert abs(arc.prevalence - 0.08) < 0.01
    h = arc.horizon_h
    clean = arc.fog_driver[:-h]
    agreement = np.mean(clean == arc.event[h:])
    assert agreement > 0.95

    path = tmp_path / "metar.csv"
    write_metar_csv(arc, path)
    series = forward_fill(downsample_hourly(read_metar_archive(path)))
    fm = build_matrix(series, arc.lat, arc.lon, h)
    tr, te = temporal_split(fm, 0.8)
    model = train(tr.X, tr.y, TrainConfig(), te.X, te.y, feature_names=FEATURE_NAMES)
    prob = predict_proba(model, te.X)
    val_auc = auc(prob, te.y)
    # exact Mann-Whitney AUC agrees with pair enumeration on a slice
    assert auc(prob[:1500], te.y[:1500]) == pytest.approx(oracles.pairwise_auc(prob[:1500], te.y[:1500]), abs=1e-12)
    rec = recall(ConfusionMatrix(*_cells(classify(prob, 0.5), te.y)))
    ranking = mean_abs_shap(model, te.X, background_sample(tr.X))
    top2 = {name for name, _ in ranking[:2]}
    elapsed = time.perf_counter() - start
    print(f"synthetic: auc={val_auc:.4f} recall={rec:.4f} top={ranking[:3]} {elapsed:.1f}s")
    assert val_auc >= 0.95
    assert rec >= 0.85
    assert top2 == {"relative_humidity", "is_night"}
    assert elapsed < 120


def _cells(pred, truth):
    pred, truth = np.asarray(pred), np.asarray(truth)
    return (
        int(((pred == 0) & (truth == 0)).sum()),
        int(((pred == 1) & (truth == 0)).sum()),
        int(((pred == 0) & (truth == 1)).sum()),
        int(((pred == 1) & (truth == 1)).sum()),
    )


# ---------------------------------------------------------------- criterion 7


def _close(a, b):
    if a is None or b is None:
        return a is None and b is None
    return math.isclose(a, b, rel_tol=1e-9, abs_tol=1e-9)


@pytest.mark.criterion(7)
def test_metar_corpus():
    assert len(METAR_CASES) >= 60
    bad = []
    for raw, (d, hh, mm), wdir, wspd, vis, t, td, p, wx in METAR_CASES:
        o = parse_metar(raw, ref=REF)
        got = (o.wind_dir_deg, o.wind_speed_kt, o.visibility_sm, o.temp_c, o.dewpoint_c, o.pressure_hpa)
        want = (wdir, wspd, vis, t, td, p)
        if not all(_close(x, y) for x, y in zip(got, want)) or o.wx_codes != wx or o.time != mar(d, hh, mm):
            bad.append((raw, got, o.wx_codes, o.time))
        assert o.raw == raw
    assert not bad, bad


@pytest.mark.criterion(7)
def test_taf_corpus():
    assert len(TAF_CASES) >= 20
    kinds_seen = set()
    bad = []
    for raw, kinds, queries in TAF_CASES:
        b = parse_taf(raw, ref=REF)
        got_kinds = tuple(g.kind for g in b.groups)
        kinds_seen.update(got_kinds)
        if got_kinds != kinds:
            bad.append((raw, got_kinds))
        for t, want in queries:
            got = resolve_visibility(b, t)
            if not _close(got, want):
                bad.append((raw, t, got, want))
    assert not bad, bad
    assert kinds_seen == {"BASE", "FM", "BECMG", "TEMPO", "PROB"}


def _mutate(rnd: random.Random, raw: str) -> str:
    alphabet = "0123456789/ ABCDEFGHIJKLMNOPQRSTUVWXYZ+-=$\x00é"
    s = raw
    for _ in range(rnd.randint(1, 4)):
        op = rnd.randrange(7)
        if op == 0 and s:
            s = s[: rnd.randrange(len(s) + 1)]
        elif op == 1 and s:
            i = rnd.randrange(len(s))
            s = s[:i] + s[i + 1:]
        elif op == 2:
            i = rnd.randrange(len(s) + 1)
            s = s[:i] + rnd.choice(alphabet) + s[i:]
        elif op == 3 and s:
            i = rnd.randrange(len(s))
            s = s[:i] + rnd.choice(alphabet) + s[i + 1:]
        elif op == 4:
            toks = s.split()
            rnd.shuffle(toks)
            s = " ".join(toks)
        elif op == 5:
            toks = s.split()
            if toks:
                toks.insert(rnd.randrange(len(toks) + 1), rnd.choice(toks))
            s = " ".join(toks)
        else:
            toks = s.split()
            if toks:
                del toks[rnd.randrange(len(toks))]
            s = " ".join(toks)
    return s


@pytest.mark.criterion(7)
def test_metar_fuzz_never_crashes():
    rnd = random.Random(7)
    seeds = [case[0] for case in METAR_CASES]
    outcomes = {"parsed": 0, "rejected": 0}
    for _ in range(100_000):
        s = _mutate(rnd, rnd.choice(seeds))
        try:
            o = parse_metar(s, ref=REF)
        except MalformedReport:
            outcomes["rejected"] += 1
            continue
        outcomes["parsed"] += 1
        assert o.visibility_sm is None or o.visibility_sm >= 0
        assert o.wind_speed_kt is None or o.wind_speed_kt >= 0
        assert o.wind_dir_deg is None or 0 <= o.wind_dir_deg < 360
        assert o.pressure_hpa is None or 850 <= o.pressure_hpa <= 1100
        assert o.raw == s
    assert outcomes["parsed"] > 0 and outcomes["rejected"] > 0


# ---------------------------------------------------------------- criterion 8


@pytest.mark.criterion(8)
def test_no_leakage_random_splits():
    rng = np.random.default_rng(8)
    for case in range(100):
        n = int(rng.integers(100, 3000))
        horizon = int(rng.choice([2, 3, 6]))
        gaps = rng.choice([1, 1, 1, 2, 5, 30], size=n)
        hours = 400000 + np.cumsum(gaps)
        order = rng.permutation(n)
        fm = FeatureMatrix(hours[order], rng.normal(size=(n, 12)), (rng.random(n) < 0.1).astype(np.int8), horizon)
        frac = float(rng.uniform(0.05, 0.95))
        tr, te = temporal_split(fm, frac)
        assert len(te) == n - int(np.floor(n * frac))
        assert len(tr) > 0 and len(te) > 0
        assert tr.label_hours.max() < te.label_hours.min(), case
        assert tr.label_hours.max() <= te.hours.min(), case


# ---------------------------------------------------------------- criterion 9


@pytest.mark.criterion(9)
def test_ingest_contract(tmp_path):
    job = FetchJob("KJFK", date(2024, 1, 1), date(2024, 4, 1), batch_days=30, min_interval_ms=300)
    chunks = job.chunks()
    assert len(chunks) == math.ceil(91 / 30)
    with MockArchive(stall_s=1.0) as mock:
        mock.inject(chunks[2][0], "429")
        mock.inject(chunks[1][0], "timeout")
        fetcher = Fetcher(sources=mock.sources(), timeout_s=0.5)
        folder = fetcher.fetch(job, tmp_path / "cache")
        assert fetcher.requests_made == len(chunks) + 2
        manifest = read_manifest(folder)
        entries = manifest["chunks"]
        assert [e["start"] for e in entries] == [a.isoformat() for a, _ in chunks]
        snapshot = {}
        for e in entries:
            data = (folder / e["file"]).read_bytes()
            assert len(data) == e["bytes"] and hashlib.sha256(data).hexdigest() == e["sha256"]
            assert data.startswith(b"station,valid,metar")
            snapshot[e["file"]] = data

        # pacing: client log exact, server receipt times within scheduling jitter
        stamps = [t for _, t in fetcher.pacer.log]
        assert all(b - a >= 0.3 for a, b in zip(stamps, stamps[1:]))
        # server arrival stamps carry a few ms of thread scheduling
        served = [t for t, _ in mock.requests]
        assert all(b - a >= 0.29 for a, b in zip(served, served[1:]))

        # idempotence: a second pass makes no requests and leaves bytes untouched
        n_served = len(mock.requests)
        again = Fetcher(sources=mock.sources())
        again.fetch(job, tmp_path / "cache")
        assert again.requests_made == 0 and len(mock.requests) == n_served
        assert {p.name: p.read_bytes() for p in folder.glob("*.txt")} == snapshot

        # a fresh cache reproduces the same bytes
        fresh = Fetcher(sources=mock.sources(), pacer=HostPacer()).fetch(job, tmp_path / "fresh")
        assert {p.name: p.read_bytes() for p in fresh.glob("*.txt")} == snapshot


# ---------------------------------------------------------------- criterion 10


@pytest.mark.criterion(10)
def test_determinism_and_size():
    arc = fog_archive(n_hours=31000, seed=10)
    fm = build_matrix(forward_fill(downsample_hourly(arc.reports)), arc.lat, arc.lon, arc.horizon_h)
    assert len(fm) >= 30000
    a = to_bytes(train(fm.X, fm.y, TrainConfig(), feature_names=FEATURE_NAMES))
    b = to_bytes(train(fm.X, fm.y, TrainConfig(), feature_names=FEATURE_NAMES))
    print(f"model size {len(a) / 1e6:.3f} MB on {len(fm)} rows")
    assert a == b
    assert len(a) <= 1.5e6


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-v"]))
