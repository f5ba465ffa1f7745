"""Command-line pipeline: fetch, build, train, evaluate, benchmark, explain, predict.

Every artifact for a station lands in ``<out-dir>/<STATION>/``. Exit status is
1 for usage errors, 2 for data errors and 3 for anything unexpected.
"""
from __future__ import annotations

import argparse
import json
import os
import re
import sys
import time
import traceback
from datetime import date
from pathlib import Path

import numpy as np

from .errors import DataError, IfrNowError
from .features import (
    FEATURE_SET_VERSION,
    HORIZONS,
    build_matrix,
    feature_block,
    read_matrix_csv,
    temporal_split,
    write_matrix_csv,
)
from .gbdt import TrainConfig, load_model, predict_proba, save_model, train
from .obs import (
    DEFAULT_MAX_FILL_GAP_H,
    downsample_hourly,
    forward_fill,
    hour_time,
    read_metar_archive,
    read_series_csv,
    write_series_csv,
)
from .stations import coordinates

EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 1, 2, 3
_ICAO_RE = re.compile(r"^[A-Z][A-Z0-9]{3}$")
MODEL_SUFFIX = ".gbdt"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _say(msg: str) -> None:
    print(msg, flush=True)


def _station_dir(args) -> Path:
    d = Path(args.out_dir) / args.station
    d.mkdir(parents=True, exist_ok=True)
    return d


def _horizons(args) -> tuple[int, ...]:
    return (args.horizon,) if args.horizon else HORIZONS


def _coords(args):
    lat, lon = coordinates(args.station, args.lat, args.lon)
    if lat is None:
        print(f"warning: no coordinates for {args.station}; is_night will be missing (pass --lat/--lon)",
              file=sys.stderr)
    return lat, lon


def _require(path: Path, hint: str) -> Path:
    if not path.exists():
        raise DataError(f"{path} not found; {hint}")
    return path


def _model_path(d: Path, h: int) -> Path:
    return d / f"model_h{h}{MODEL_SUFFIX}"


def _iso(hour: int) -> str:
    return hour_time(int(hour)).strftime("%Y-%m-%dT%H:%MZ")


# --- subcommands -------------------------------------------------------------

def cmd_fetch(args) -> None:
    from .ingest import FetchJob, Fetcher, assemble

    if not (args.start and args.end):
        raise UsageError("fetch needs --start and --end (YYYY-MM-DD)")
    d = _station_dir(args)
    fetcher = Fetcher()
    for source, name in (("observation-archive", "metar.csv"), ("taf-archive", "taf.csv")):
        job = FetchJob(args.station, args.start, args.end, source, args.batch_days, args.min_interval_ms)
        fetcher.fetch(job, args.cache_dir)
        assemble(args.cache_dir, source, args.station, d / name, fetcher.sources)
        _say(f"fetched {source}: {len(job.chunks())} chunks -> {d / name}")


def cmd_build(args) -> None:
    d = _station_dir(args)
    src = Path(args.metar_file) if args.metar_file else d / "metar.csv"
    _require(src, "run `fetch` first or pass --metar-file")
    reports = read_metar_archive(src, args.station)
    if not reports:
        raise DataError(f"{src} holds no decodable reports for {args.station}")
    series = forward_fill(downsample_hourly(reports), args.max_fill_gap)
    write_series_csv(series, d / "hourly.csv")
    lat, lon = _coords(args)
    for h in _horizons(args):
        fm = build_matrix(series, lat, lon, h, args.label_window)
        write_matrix_csv(fm, d / f"features_h{h}.csv")
        _say(f"built +{h}h: {len(fm)} examples, IFR prevalence {fm.y.mean():.3f} -> {d / f'features_h{h}.csv'}")


def _split(args, d: Path, h: int):
    fm = read_matrix_csv(_require(d / f"features_h{h}.csv", "run `build` first"), args.station)
    fm.station = args.station
    return fm, temporal_split(fm, args.train_frac)


def cmd_train(args) -> None:
    d = _station_dir(args)
    for h in _horizons(args):
        fm, (tr, te) = _split(args, d, h)
        config = TrainConfig(seed=args.seed)
        meta = {
            "station": args.station,
            "horizon_h": h,
            "feature_set_version": FEATURE_SET_VERSION,
            "train_fraction": args.train_frac,
            "label_window_h": args.label_window,
            "train_start": _iso(tr.hours[0]),
            "train_end": _iso(tr.hours[-1]),
            "test_start": _iso(te.hours[0]),
            "test_end": _iso(te.hours[-1]),
            "test_start_hour": int(te.hours[0]),
        }
        model = train(tr.X, tr.y, config, te.X, te.y, fm.feature_names, meta)
        path = save_model(model, _model_path(d, h))
        last_auc = model.history["valid_auc"][-1] if model.history["valid_auc"] else float("nan")
        _say(f"trained +{h}h on {len(tr)} rows, validation AUC {last_auc:.4f} -> {path}")


def _test_rows(d: Path, model, args, h: int):
    fm = read_matrix_csv(_require(d / f"features_h{h}.csv", "run `build` first"), args.station)
    start = model.metadata.get("test_start_hour")
    train_rows = fm.subset(np.flatnonzero(fm.hours < start))
    test_rows = fm.subset(np.flatnonzero(fm.hours >= start))
    if len(test_rows) == 0:
        raise DataError(f"no test rows for +{h}h after {_iso(start)}; rebuild features")
    return train_rows, test_rows


def _load(d: Path, h: int):
    return load_model(_require(_model_path(d, h), "run `train` first"))


def cmd_evaluate(args) -> None:
    from .bench import AgentScore, classify
    from .explain import background_sample, mean_abs_shap, write_importance_csv

    d = _station_dir(args)
    lines = []
    for h in _horizons(args):
        model = _load(d, h)
        tr, te = _test_rows(d, model, args, h)
        prob = predict_proba(model, te.X)
        score = AgentScore.score(classify(prob, args.threshold), te.y, prob)
        report = {
            "station": args.station,
            "horizon_h": h,
            "threshold": args.threshold,
            "n_test": len(te),
            "test_start": _iso(te.hours[0]),
            "test_end": _iso(te.hours[-1]),
            "confusion": vars(score.cm),
            "auc": score.auc,
            "recall": score.recall,
            "precision": score.precision,
            "f1": score.f1,
        }
        (d / f"validation_h{h}.json").write_text(json.dumps(report, indent=2) + "\n")
        bg = background_sample(tr.X if len(tr) else te.X, seed=args.seed)
        ranking = mean_abs_shap(model, te.X, bg)
        write_importance_csv(ranking, d / f"importance_h{h}.csv")

        def fmt(v):
            return "n/a" if v is None else f"{v:.3f}"

        lines.append(
            f"+{h}h  n={len(te)}  AUC {fmt(score.auc)}  recall {fmt(score.recall)}  "
            f"precision {fmt(score.precision)}  F1 {fmt(score.f1)}  "
            f"TN {score.cm.tn} FP {score.cm.fp} FN {score.cm.fn} TP {score.cm.tp}  "
            f"top features: {', '.join(n for n, _ in ranking[:3])}"
        )
    text = f"Validation report {args.station} (threshold {args.threshold})\n" + "\n".join(lines) + "\n"
    (d / "validation.txt").write_text(text)
    _say(text.rstrip())


def cmd_benchmark(args) -> None:
    from .bench import run_benchmark
    from .taf import read_taf_archive

    d = _station_dir(args)
    src = Path(args.taf_file) if args.taf_file else d / "taf.csv"
    bulletins = read_taf_archive(_require(src, "run `fetch` first or pass --taf-file"))
    series = read_series_csv(_require(d / "hourly.csv", "run `build` first"))
    lat, lon = _coords(args)
    for h in _horizons(args):
        model = _load(d, h)
        rep = run_benchmark(model, series, bulletins, h, lat, lon, args.threshold,
                            model.metadata.get("test_start_hour"), args.label_window)
        (d / f"benchmark_h{h}.json").write_text(rep.to_json() + "\n")
        (d / f"benchmark_h{h}.txt").write_text(rep.to_text())
        _say(rep.to_text().rstrip())


def cmd_explain(args) -> None:
    from .explain import background_sample, write_explanations

    d = _station_dir(args)
    for h in _horizons(args):
        model = _load(d, h)
        tr, te = _test_rows(d, model, args, h)
        bg = background_sample(tr.X if len(tr) else te.X, seed=args.seed)
        times = [hour_time(int(x)) for x in te.hours]
        path = write_explanations(model, times, te.X, d / f"explanations_h{h}.jsonl", bg)
        _say(f"explained {len(te)} test predictions at +{h}h -> {path}")


def _resolve_model(args) -> Path:
    p = Path(args.model)
    if p.exists():
        return p
    m = re.match(r"^([A-Za-z0-9]{4})_h(\d)$", args.model)
    if m:
        cand = _model_path(Path(args.out_dir) / m.group(1).upper(), int(m.group(2)))
        if cand.exists():
            return cand
    raise DataError(f"model {args.model!r} not found (give a path or <station>_h<horizon>)")


def cmd_predict(args) -> None:
    from .explain import Explainer, top_k
    from .metar import parse_metar

    if not args.model or not args.metar_file:
        raise UsageError("predict needs --model and --metar-file")
    t0 = time.perf_counter()
    model = load_model(_resolve_model(args))
    reports = []
    for line in Path(_require(Path(args.metar_file), "give a file of raw METAR lines")).read_text().splitlines():
        line = line.strip()
        if line:
            reports.append(parse_metar(line))
    if not reports:
        raise DataError(f"{args.metar_file} holds no reports")
    station = model.metadata.get("station") or reports[-1].station
    args.station = args.station or station
    series = forward_fill(downsample_hourly(reports), args.max_fill_gap)
    lat, lon = _coords(args)
    x = feature_block(series, lat, lon)[-1]
    prob = predict_proba(model, x)
    attribution = Explainer(model).explain(x)
    elapsed = time.perf_counter() - t0
    _say(f"{station} +{model.metadata.get('horizon_h', '?')}h from {series.times[-1]:%Y-%m-%dT%H:%MZ}: "
         f"P(IFR) = {prob:.4f} -> {'IFR' if prob >= args.threshold else 'no IFR'}")
    for name, phi in top_k(attribution.phi, model.feature_names, 5):
        _say(f"  {name:<22}{x[model.feature_names.index(name)]:>10.3f}  phi {phi:+.4f}")
    _say(f"latency {elapsed * 1000:.0f} ms")


def cmd_all(args) -> None:
    if args.start and args.end:
        cmd_fetch(args)
    cmd_build(args)
    cmd_train(args)
    cmd_evaluate(args)
    d = Path(args.out_dir) / args.station
    if args.taf_file or (d / "taf.csv").exists():
        cmd_benchmark(args)
    else:
        print("note: no TAF archive; benchmark skipped", file=sys.stderr)
    cmd_explain(args)


COMMANDS = {
    "fetch": (cmd_fetch, "download observation and TAF archives into the cache"),
    "build": (cmd_build, "parse, downsample, fill and derive feature matrices"),
    "train": (cmd_train, "train one model per horizon"),
    "evaluate": (cmd_evaluate, "validation metrics and SHAP importance"),
    "benchmark": (cmd_benchmark, "score models against TAF forecasts"),
    "explain": (cmd_explain, "per-prediction SHAP attributions for the test period"),
    "predict": (cmd_predict, "probability and top-5 attributions from recent METARs"),
    "all": (cmd_all, "fetch (with --start/--end), build, train, evaluate, benchmark, explain"),
}


def _date(text: str) -> date:
    try:
        return date.fromisoformat(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected YYYY-MM-DD, got {text!r}") from None


def _fraction(text: str) -> float:
    v = float(text)
    if not 0 < v < 1:
        raise argparse.ArgumentTypeError("must lie strictly between 0 and 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--station", type=str.upper, help="4-letter ICAO identifier")
    common.add_argument("--start", type=_date, help="first day (UTC) to fetch")
    common.add_argument("--end", type=_date, help="day after the last day to fetch")
    common.add_argument("--horizon", type=int, choices=HORIZONS, help="single horizon (default: all)")
    common.add_argument("--train-frac", type=_fraction, default=0.8)
    common.add_argument("--threshold", type=float, default=0.5)
    common.add_argument("--label-window", type=int, default=0, help="hours before t+h also counted as IFR")
    common.add_argument("--max-fill-gap", type=int, default=DEFAULT_MAX_FILL_GAP_H)
    common.add_argument("--seed", type=int, default=42)
    common.add_argument("--out-dir", default="ifrnow-out")
    common.add_argument("--cache-dir", default="ifrnow-cache")
    common.add_argument("--lat", type=float, help="override station latitude")
    common.add_argument("--lon", type=float, help="override station longitude")
    common.add_argument("--metar-file", help="METAR archive CSV (build) or raw METAR lines (predict)")
    common.add_argument("--taf-file", help="TAF archive CSV with station, issued_utc, raw_taf")
    common.add_argument("--model", help="model path or <station>_h<horizon> (predict)")
    common.add_argument("--batch-days", type=int, default=30)
    common.add_argument("--min-interval-ms", type=int, default=1000)

    parser = _Parser(prog="ifrnow", description="Station-local IFR visibility nowcasting.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, (_, help_text) in COMMANDS.items():
        sub.add_parser(name, parents=[common], help=help_text, description=help_text)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command != "predict":
        if not args.station:
            parser.error("--station is required")
    if args.station and not _ICAO_RE.match(args.station):
        parser.error(f"--station must be a 4-character ICAO identifier, got {args.station!r}")
    if not 0 <= args.threshold <= 1:
        parser.error("--threshold must lie in [0, 1]")
    if args.max_fill_gap < 0 or args.label_window < 0:
        parser.error("--max-fill-gap and --label-window must be >= 0")
    handler = COMMANDS[args.command][0]
    try:
        handler(args)
    except BrokenPipeError:
        # output consumer went away (e.g. piped into head)
        sys.stdout = open(os.devnull, "w")
        return 0
    except UsageError as exc:
        print(f"ifrnow: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (IfrNowError, FileNotFoundError) as exc:
        print(f"ifrnow: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"ifrnow: invalid input: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception:  # noqa: BLE001
        traceback.print_exc()
        return EXIT_INTERNAL
    return 0


if __name__ == "__main__":
    sys.exit(main())
