"""Forecast verification: confusion matrices, TAF-vs-model scoring and ablation."""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    EmptyDataset,
    HorizonMismatch,
    LengthMismatch,
    NoOverlap,
    NoPositivePred,
    NoPositiveTruth,
    SingleClass,
    UndefinedMetric,
    UnknownGroup,
)
from .features import FEATURE_GROUPS, FeatureMatrix, build_matrix, temporal_split
from .gbdt.model import Model, TrainConfig, auc, predict_proba, train
from .obs import HourlySeries, hour_time
from .taf import TafBulletin, resolve_visibility, select_bulletin, IFR_THRESHOLD_SM

DEFAULT_THRESHOLD = 0.5
SWEEP_THRESHOLDS = (0.40, 0.45, 0.50, 0.55, 0.60)


@dataclass(frozen=True)
class ConfusionMatrix:
    tn: int
    fp: int
    fn: int
    tp: int

    def __post_init__(self):
        if min(self.tn, self.fp, self.fn, self.tp) < 0:
            raise ValueError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tn + self.fp + self.fn + self.tp


def confusion(pred, truth) -> ConfusionMatrix:
    pred = np.asarray(pred, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    if pred.shape != truth.shape:
        raise LengthMismatch(f"{pred.size} predictions vs {truth.size} truths")
    if pred.size == 0:
        raise EmptyDataset("nothing to score")
    return ConfusionMatrix(
        tn=int(((pred == 0) & (truth == 0)).sum()),
        fp=int(((pred == 1) & (truth == 0)).sum()),
        fn=int(((pred == 0) & (truth == 1)).sum()),
        tp=int(((pred == 1) & (truth == 1)).sum()),
    )


def recall(cm: ConfusionMatrix) -> float:
    if cm.tp + cm.fn == 0:
        raise NoPositiveTruth("no observed events: recall undefined")
    return cm.tp / (cm.tp + cm.fn)


def precision(cm: ConfusionMatrix) -> float:
    if cm.tp + cm.fp == 0:
        raise NoPositivePred("no alerts issued: precision undefined")
    return cm.tp / (cm.tp + cm.fp)


def f1_score(p: float, r: float) -> float:
    return 0.0 if p + r == 0 else 2 * p * r / (p + r)


def metrics(cm: ConfusionMatrix) -> tuple[float, float, float]:
    """(recall, precision, f1) as fractions."""
    r = recall(cm)
    p = precision(cm)
    return r, p, f1_score(p, r)


def classify(probability, threshold: float = DEFAULT_THRESHOLD):
    """1 iff probability >= threshold (the boundary raises an alert)."""
    p = np.asarray(probability, dtype=np.float64)
    out = (p >= threshold).astype(np.int8)
    return int(out) if out.ndim == 0 else out


def _safe(fn, *args):
    try:
        return fn(*args)
    except UndefinedMetric:
        return None


@dataclass
class AgentScore:
    cm: ConfusionMatrix
    recall: float | None
    precision: float | None
    f1: float | None
    auc: float | None = None

    @classmethod
    def score(cls, pred, truth, scores=None) -> "AgentScore":
        cm = confusion(pred, truth)
        r = _safe(recall, cm)
        p = _safe(precision, cm)
        f = f1_score(p, r) if r is not None and p is not None else None
        a = None
        if scores is not None:
            try:
                a = auc(scores, truth)
            except SingleClass:
                a = None
        return cls(cm, r, p, f, a)


def threshold_sweep(prob, truth, thresholds: Sequence[float] = SWEEP_THRESHOLDS) -> list[dict]:
    """Recall/precision/F1 at each threshold and the F1 change relative to 0.5."""
    rows = []
    for thr in thresholds:
        s = AgentScore.score(classify(prob, thr), truth)
        rows.append({"threshold": float(thr), "recall": s.recall, "precision": s.precision, "f1": s.f1})
    ref = AgentScore.score(classify(prob, DEFAULT_THRESHOLD), truth).f1
    for row in rows:
        row["delta_f1"] = None if row["f1"] is None or ref is None else row["f1"] - ref
    return rows


@dataclass
class VerificationReport:
    station: str
    horizon_h: int
    test_start: str
    test_end: str
    threshold: float
    n_scored: int
    n_excluded: int
    ml: AgentScore
    taf: AgentScore
    sweep: list = field(default_factory=list)
    decision_hours: list = field(default_factory=list)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("decision_hours")
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_text(self) -> str:
        def pct(v):
            return "   n/a" if v is None else f"{100 * v:5.1f}%"

        lines = [
            f"Station {self.station}  horizon +{self.horizon_h}h  test {self.test_start} -> {self.test_end}",
            f"scored rows {self.n_scored}, excluded {self.n_excluded} (no TAF coverage), threshold {self.threshold:.2f}",
            "",
            f"{'Agent':<14}{'TN':>8}{'FP':>8}{'FN':>8}{'TP':>8}{'Recall':>9}{'Prec':>9}{'F1':>9}{'AUC':>8}",
        ]
        for name, s in (("Human (TAF)", self.taf), ("ML Framework", self.ml)):
            a = "     -" if s.auc is None else f"{s.auc:6.3f}"
            lines.append(
                f"{name:<14}{s.cm.tn:>8}{s.cm.fp:>8}{s.cm.fn:>8}{s.cm.tp:>8}"
                f"{pct(s.recall):>9}{pct(s.precision):>9}{pct(s.f1):>9}{a:>8}"
            )
        if self.sweep:
            lines += ["", "ML threshold sweep", f"{'thr':>6}{'Recall':>9}{'Prec':>9}{'F1':>9}{'dF1':>9}"]
            for r in self.sweep:
                d = "   n/a" if r["delta_f1"] is None else f"{r['delta_f1']:+.3f}"
                lines.append(f"{r['threshold']:6.2f}{pct(r['recall']):>9}{pct(r['precision']):>9}{pct(r['f1']):>9}{d:>9}")
        return "\n".join(lines) + "\n"


def verify(hours, prob, taf_pred, truth, station="", horizon_h=0, threshold=DEFAULT_THRESHOLD) -> VerificationReport:
    """Score both agents on the rows where both have a prediction.

    ``taf_pred`` entries of None (no valid bulletin) drop the row for both
    agents and count toward ``n_excluded``.
    """
    hours = np.asarray(hours, dtype=np.int64)
    prob = np.asarray(prob, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.int64)
    covered = np.array([p is not None for p in taf_pred], dtype=bool)
    if not (len(hours) == len(prob) == len(truth) == len(covered)):
        raise LengthMismatch("hours, probabilities, TAF predictions and truth differ in length")
    if not covered.any():
        raise NoOverlap("no decision hour has both a TAF and verifying observation")
    taf = np.array([p for p in taf_pred if p is not None], dtype=np.int64)
    h, pr, tr = hours[covered], prob[covered], truth[covered]
    return VerificationReport(
        station=station,
        horizon_h=horizon_h,
        test_start=hour_time(h.min()).strftime("%Y-%m-%dT%H:%MZ"),
        test_end=hour_time(h.max()).strftime("%Y-%m-%dT%H:%MZ"),
        threshold=threshold,
        n_scored=int(covered.sum()),
        n_excluded=int((~covered).sum()),
        ml=AgentScore.score(classify(pr, threshold), tr, pr),
        taf=AgentScore.score(taf, tr),
        sweep=threshold_sweep(pr, tr),
        decision_hours=h.tolist(),
    )


def taf_forecasts(bulletins: Sequence[TafBulletin], hours, horizon_h: int, include_prob: bool = True):
    """(visibility, IFR flag) per decision hour from the latest bulletin issued by then."""
    out = []
    for hr in hours:
        t0 = hour_time(int(hr))
        b = select_bulletin(bulletins, t0)
        vis = None if b is None else resolve_visibility(b, hour_time(int(hr) + horizon_h), include_prob)
        out.append((vis, None if vis is None else int(vis < IFR_THRESHOLD_SM)))
    return out


def run_benchmark(
    model: Model,
    series: HourlySeries,
    bulletins: Sequence[TafBulletin],
    horizon_h: int,
    lat: float | None = None,
    lon: float | None = None,
    threshold: float = DEFAULT_THRESHOLD,
    test_start_hour: int | None = None,
    label_window_h: int = 0,
) -> VerificationReport:
    """Compare model and TAF on every decision hour with ground truth.

    Only decision hours at or after ``test_start_hour`` are scored (all hours
    when None).
    """
    trained_for = model.metadata.get("horizon_h")
    if trained_for is not None and int(trained_for) != horizon_h:
        raise HorizonMismatch(f"model trained for +{trained_for}h, benchmark asks +{horizon_h}h")
    bulletins = sorted(bulletins, key=lambda b: b.issue_time)
    if not bulletins:
        raise NoOverlap("no TAF bulletins supplied")
    fm = build_matrix(series, lat, lon, horizon_h, label_window_h)
    if test_start_hour is not None:
        fm = fm.subset(np.flatnonzero(fm.hours >= test_start_hour))
    if len(fm) == 0:
        raise NoOverlap("no decision hours in the test window")
    prob = predict_proba(model, fm.X)
    taf = [ifr for _, ifr in taf_forecasts(bulletins, fm.hours, horizon_h)]
    return verify(fm.hours, prob, taf, fm.y, series.station, horizon_h, threshold)


def _recall_at(prob, y, threshold):
    return _safe(recall, confusion(classify(prob, threshold), y))


def run_ablation(
    series: HourlySeries,
    lat: float | None,
    lon: float | None,
    horizon_h: int,
    groups: Sequence[str] = ("none", *FEATURE_GROUPS),
    train_fraction: float = 0.8,
    config: TrainConfig = TrainConfig(),
    threshold: float = DEFAULT_THRESHOLD,
    label_window_h: int = 0,
) -> list[dict]:
    examples = build_matrix(series, lat, lon, horizon_h, label_window_h)
    return ablate(examples, groups, train_fraction, config, threshold)


def ablate(
    examples: FeatureMatrix,
    groups: Sequence[str] = ("none", *FEATURE_GROUPS),
    train_fraction: float = 0.8,
    config: TrainConfig = TrainConfig(),
    threshold: float = DEFAULT_THRESHOLD,
) -> list[dict]:
    """Retrain with each feature group forced missing and report the change
    in validation AUC and recall against the full model (same split, seed)."""
    unknown = [g for g in groups if g != "none" and g not in FEATURE_GROUPS]
    if unknown:
        raise UnknownGroup(f"unknown feature group(s): {', '.join(unknown)}; choose from {sorted(FEATURE_GROUPS)}")
    train_set, test_set = temporal_split(examples, train_fraction)

    def fit_eval(columns):
        tr, te = train_set.with_missing(columns), test_set.with_missing(columns)
        model = train(tr.X, tr.y, config, feature_names=tr.feature_names)
        prob = predict_proba(model, te.X)
        return auc(prob, te.y), _recall_at(prob, te.y, threshold)

    full_auc, full_recall = fit_eval(())
    rows = []
    for g in groups:
        a, r = (full_auc, full_recall) if g == "none" else fit_eval(FEATURE_GROUPS[g])
        rows.append({
            "group": g,
            "auc": a,
            "recall": r,
            "delta_auc": a - full_auc,
            "delta_recall": None if r is None or full_recall is None else r - full_recall,
        })
    return rows


def write_ablation_csv(rows, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["group", "auc", "recall", "delta_auc", "delta_recall"])
        w.writeheader()
        for r in rows:
            w.writerow({k: "" if v is None else v for k, v in r.items()})
    return path
