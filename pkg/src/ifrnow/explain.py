"""Exact path-dependent TreeSHAP attributions in margin (log-odds) space.

Node covers are recomputed from a background dataset, so the expectation over
"absent" features follows the background distribution along each tree path.
Without a background the training row counts stored in the model are used.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionMismatch, EmptyBackground, EmptyDataset
from .gbdt import kernels
from .gbdt.model import Model, _check_X, predict_margin, sigmoid

DEFAULT_BACKGROUND_ROWS = 1000


@dataclass(frozen=True)
class Attribution:
    phi: np.ndarray
    base_value: float
    x: np.ndarray

    @property
    def margin(self) -> float:
        return float(self.base_value + self.phi.sum())


def _covers(model: Model, background) -> list[np.ndarray]:
    if background is None:
        return [t.cover.astype(np.float64) for t in model.trees]
    bg = _check_X(background, model.n_features)
    if bg.shape[0] == 0:
        raise EmptyBackground("background dataset has no rows")
    K = kernels.active
    return [K.node_counts(bg, t.feature, t.threshold, t.default_left, t.left, t.right) for t in model.trees]


def _expected_value(tree, cover) -> float:
    """Cover-weighted mean leaf value of one tree."""
    if cover[0] <= 0:
        return 0.0
    leaves = tree.feature < 0
    return float((tree.value[leaves] * cover[leaves]).sum() / cover[0])


def background_sample(X, n_rows: int = DEFAULT_BACKGROUND_ROWS, seed: int = 42) -> np.ndarray:
    """Seed-fixed row subsample used as the default SHAP background."""
    X = np.asarray(X, dtype=np.float64)
    if X.shape[0] <= n_rows:
        return X
    rng = np.random.default_rng(seed)
    return X[np.sort(rng.choice(X.shape[0], n_rows, replace=False))]


class Explainer:
    """Caches background covers so many rows can be explained cheaply."""

    def __init__(self, model: Model, background=None):
        self.model = model
        self.covers = _covers(model, background)
        self.base_value = float(model.base_score) + sum(
            _expected_value(t, c) for t, c in zip(model.trees, self.covers)
        )
        if model.trees:
            flat = model.flat()
            self._flat = flat[:6] + (np.concatenate(self.covers), flat[6])
            self._depth = max(t.depth for t in model.trees)

    def shap_values(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        X = _check_X(X, self.model.n_features)
        if not self.model.trees:
            return np.zeros(X.shape)
        return kernels.active.shap_values(np.ascontiguousarray(X), *self._flat, self._depth)

    def explain(self, x) -> Attribution:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 1:
            raise DimensionMismatch("explain takes a single feature vector")
        return Attribution(self.shap_values(x)[0], self.base_value, x)


def tree_shap(model: Model, x, background=None) -> Attribution:
    """Shapley attribution of the margin at ``x``; ``base_value + phi.sum()`` equals the margin."""
    return Explainer(model, background).explain(x)


def mean_abs_shap(model: Model, dataset, background=None) -> list[tuple[str, float]]:
    """(feature, mean |phi|) pairs sorted descending; ties keep feature order."""
    X = np.asarray(dataset, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise EmptyDataset("importance needs at least one row")
    phi = Explainer(model, background).shap_values(X)
    imp = np.abs(phi).mean(axis=0)
    order = sorted(range(len(imp)), key=lambda j: (-imp[j], j))
    return [(model.feature_names[j], float(imp[j])) for j in order]


def write_importance_csv(ranking, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["feature", "mean_abs_shap", "rank"])
        for rank, (name, value) in enumerate(ranking, start=1):
            w.writerow([name, repr(float(value)), rank])
    return path


def read_importance_csv(path) -> list[tuple[str, float]]:
    with Path(path).open(newline="") as fh:
        return [(r["feature"], float(r["mean_abs_shap"])) for r in csv.DictReader(fh)]


def top_k(phi, names, k: int = 5) -> list[tuple[str, float]]:
    order = sorted(range(len(phi)), key=lambda j: (-abs(phi[j]), j))[:k]
    return [(names[j], float(phi[j])) for j in order]


def write_explanations(model: Model, times, X, path, background=None, k: int = 5) -> Path:
    """One JSON line per row: time, probability and the top-k (feature, phi) pairs."""
    X = np.asarray(X, dtype=np.float64)
    explainer = Explainer(model, background)
    phi = explainer.shap_values(X) if X.shape[0] else np.zeros((0, model.n_features))
    prob = sigmoid(predict_margin(model, X)) if X.shape[0] else np.zeros(0)
    path = Path(path)
    with path.open("w") as fh:
        for t, p, row in zip(times, prob, phi):
            rec = {
                "time": t.isoformat() if hasattr(t, "isoformat") else str(t),
                "probability": float(p),
                "top": [[name, value] for name, value in top_k(row, model.feature_names, k)],
            }
            fh.write(json.dumps(rec) + "\n")
    return path
