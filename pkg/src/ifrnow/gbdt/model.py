"""Second-order gradient boosting of regression trees on weighted logistic loss."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from ..errors import DimensionMismatch, NonFiniteFeature, SingleClass
from . import kernels

# numerical floor on split gain; a split must improve the objective by more
MIN_SPLIT_GAIN = 1e-6


@dataclass(frozen=True)
class TrainConfig:
    n_trees: int = 100
    max_depth: int = 6
    learning_rate: float = 0.3
    min_child_weight: float = 1.0
    l2_lambda: float = 1.0
    gamma: float = 0.0
    scale_pos_weight: float | None = None  # None: negatives / positives
    seed: int = 42

    def __post_init__(self):
        if self.n_trees < 0:
            raise ValueError("n_trees must be >= 0")
        if not 0 < self.learning_rate <= 1:
            raise ValueError("learning_rate must lie in (0, 1]")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if self.scale_pos_weight is not None and not self.scale_pos_weight > 0:
            raise ValueError("scale_pos_weight must be > 0")


@dataclass
class Tree:
    """Node arrays in preorder; child indices are local to the tree.

    ``feature`` is -1 at leaves. Rows with ``x < threshold`` go left, missing
    values follow ``default_left``. ``value`` already includes the learning
    rate. ``cover`` is the number of training rows reaching the node.
    """

    feature: np.ndarray
    threshold: np.ndarray
    default_left: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    cover: np.ndarray
    gain: np.ndarray

    def __len__(self) -> int:
        return self.feature.shape[0]

    @property
    def depth(self) -> int:
        depth = np.zeros(len(self), dtype=np.int64)
        for i in range(len(self)):
            if self.feature[i] >= 0:
                depth[self.left[i]] = depth[self.right[i]] = depth[i] + 1
        return int(depth.max())

    @classmethod
    def leaf(cls, value: float, cover: float = 0.0) -> "Tree":
        return cls(
            feature=np.array([-1], dtype=np.int32),
            threshold=np.zeros(1),
            default_left=np.ones(1, dtype=np.uint8),
            left=np.full(1, -1, dtype=np.int32),
            right=np.full(1, -1, dtype=np.int32),
            value=np.array([value], dtype=np.float64),
            cover=np.array([cover], dtype=np.float64),
            gain=np.zeros(1),
        )


@dataclass
class Model:
    trees: list[Tree]
    base_score: float
    feature_names: tuple[str, ...]
    config: TrainConfig = field(default_factory=TrainConfig)
    metadata: dict = field(default_factory=dict)
    history: dict = field(default_factory=dict)

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    def flat(self):
        """Concatenated node arrays plus per-tree offsets for the kernels."""
        if not self.trees:
            empty_i = np.zeros(0, dtype=np.int32)
            return (empty_i, np.zeros(0), np.zeros(0, dtype=np.uint8), empty_i, empty_i,
                    np.zeros(0), np.zeros(1, dtype=np.int64))
        offsets = np.zeros(len(self.trees) + 1, dtype=np.int64)
        offsets[1:] = np.cumsum([len(t) for t in self.trees])
        cat = lambda name: np.concatenate([getattr(t, name) for t in self.trees])  # noqa: E731
        return (cat("feature"), cat("threshold"), cat("default_left"), cat("left"), cat("right"),
                cat("value"), offsets)


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(z, dtype=np.float64)))


def compute_scale_pos_weight(labels) -> float:
    y = np.asarray(labels)
    pos = int(np.count_nonzero(y == 1))
    neg = int(np.count_nonzero(y == 0))
    if pos == 0 or neg == 0:
        raise SingleClass("labels must contain both classes")
    return neg / pos


def sample_weights(y: np.ndarray, scale_pos_weight: float) -> np.ndarray:
    return np.where(y == 1, float(scale_pos_weight), 1.0)


def logistic_loss(margin, y, w=None) -> float:
    """Weighted logistic loss summed over rows."""
    margin = np.asarray(margin, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    per_row = np.logaddexp(0.0, margin) - y * margin
    if w is not None:
        per_row = per_row * w
    return float(per_row.sum())


def auc(scores, labels) -> float:
    """Mann-Whitney AUC with ties counted as one half."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    n_pos = int(np.count_nonzero(y == 1))
    n_neg = int(np.count_nonzero(y == 0))
    if n_pos == 0 or n_neg == 0:
        raise SingleClass("AUC needs both classes")
    order = np.argsort(s, kind="mergesort")
    s_sorted = s[order]
    # average 1-based ranks over tie groups
    starts = np.flatnonzero(np.r_[True, s_sorted[1:] != s_sorted[:-1]])
    ends = np.r_[starts[1:], s.size]
    avg = (starts + ends + 1) / 2.0
    ranks = np.empty(s.size)
    ranks[order] = np.repeat(avg, ends - starts)
    rank_sum = ranks[y == 1].sum()
    return float((rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def _check_X(X: np.ndarray, n_features: int | None = None) -> np.ndarray:
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if X.ndim != 2:
        raise DimensionMismatch(f"expected a 2-d feature array, got shape {X.shape}")
    if n_features is not None and X.shape[1] != n_features:
        raise DimensionMismatch(f"model expects {n_features} features, got {X.shape[1]}")
    if np.isinf(X).any():
        raise NonFiniteFeature("infinite feature values are not allowed (use NaN for missing)")
    return X


def presort(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-feature row order by value (NaNs last) and non-missing counts."""
    n, m = X.shape
    sorted_idx = np.empty((m, n), dtype=np.int64)
    n_sorted = np.empty(m, dtype=np.int64)
    for f in range(m):
        sorted_idx[f] = np.argsort(X[:, f], kind="stable")
        n_sorted[f] = n - int(np.isnan(X[:, f]).sum())
    return sorted_idx, n_sorted


def _to_preorder(feature, threshold, default_left, left, right, value, cover, gain) -> Tree:
    order = []
    stack = [0]
    while stack:
        i = stack.pop()
        order.append(i)
        if feature[i] >= 0:
            stack.append(right[i])
            stack.append(left[i])
    pos = np.empty(len(feature), dtype=np.int64)
    pos[np.asarray(order)] = np.arange(len(order))
    order = np.asarray(order)
    f = np.asarray(feature, dtype=np.int32)[order]
    lft = np.asarray(left, dtype=np.int64)[order]
    rgt = np.asarray(right, dtype=np.int64)[order]
    internal = f >= 0
    lft = np.where(internal, pos[np.where(internal, lft, 0)], -1).astype(np.int32)
    rgt = np.where(internal, pos[np.where(internal, rgt, 0)], -1).astype(np.int32)
    return Tree(
        feature=f,
        threshold=np.asarray(threshold, dtype=np.float64)[order],
        default_left=np.asarray(default_left, dtype=np.uint8)[order],
        left=lft,
        right=rgt,
        value=np.asarray(value, dtype=np.float64)[order],
        cover=np.asarray(cover, dtype=np.float64)[order],
        gain=np.asarray(gain, dtype=np.float64)[order],
    )


def grow_tree(X, sorted_idx, n_sorted, g, h, config: TrainConfig, K=None) -> tuple[Tree, np.ndarray]:
    """Grow one tree level by level; returns the tree and its per-row output."""
    K = K or kernels.active
    lam, gamma, mcw = config.l2_lambda, config.gamma, config.min_child_weight
    lr = config.learning_rate
    n = X.shape[0]
    node_of = np.zeros(n, dtype=np.int64)
    out = np.zeros(n)
    feature, threshold, dleft, left, right, value, cover, gain = ([] for _ in range(8))
    level = [0]  # global ids of the nodes on the current level, by local index
    for name in (feature, threshold, dleft, left, right, value, cover, gain):
        name.append(0)
    feature[0] = -1
    for depth in range(config.max_depth + 1):
        n_level = len(level)
        G, H, C = K.node_stats(node_of, g, h, n_level)
        if depth < config.max_depth:
            Gm, Hm, Cm = K.missing_stats(X, node_of, g, h, n_level)
            bg, bf, bt, bl = K.best_splits(
                X, sorted_idx, n_sorted, node_of, g, h, G, H, Gm, Hm, Cm, lam, gamma, mcw
            )
        else:
            bg = np.full(n_level, -np.inf)
        split_feat = np.full(n_level, -1, dtype=np.int64)
        split_thr = np.zeros(n_level)
        split_left = np.zeros(n_level, dtype=np.uint8)
        child_of = np.full(n_level, -1, dtype=np.int64)
        leaf_val = np.zeros(n_level)
        next_level = []
        for k, node in enumerate(level):
            cover[node] = C[k]
            if bg[k] > MIN_SPLIT_GAIN:
                split_feat[k], split_thr[k], split_left[k] = bf[k], bt[k], bl[k]
                child_of[k] = len(next_level)
                for _ in range(2):
                    next_level.append(len(feature))
                    for name in (feature, threshold, dleft, left, right, value, cover, gain):
                        name.append(0)
                    feature[-1] = -1
                feature[node] = int(bf[k])
                threshold[node] = float(bt[k])
                dleft[node] = int(bl[k])
                left[node], right[node] = next_level[-2], next_level[-1]
                gain[node] = float(bg[k])
            else:
                leaf_val[k] = -G[k] / (H[k] + lam) * lr
                value[node] = leaf_val[k]
        live = node_of >= 0
        if live.any():
            leafy = live & (split_feat[np.where(live, node_of, 0)] < 0)
            out[leafy] = leaf_val[node_of[leafy]]
        if not next_level:
            break
        node_of = K.apply_splits(X, node_of, split_feat, split_thr, split_left, child_of)
        level = next_level
    tree = _to_preorder(feature, threshold, dleft, left, right, value, cover, gain)
    return tree, out


def predict_margin(model: Model, X) -> np.ndarray:
    X = _check_X(X, model.n_features)
    if not model.trees:
        return np.full(X.shape[0], float(model.base_score))
    return kernels.active.predict_margin(X, *model.flat(), float(model.base_score))


def predict_proba(model: Model, x) -> np.ndarray | float:
    """IFR probability for one feature vector (float) or a 2-d batch (array)."""
    arr = np.asarray(x, dtype=np.float64)
    single = arr.ndim == 1
    p = sigmoid(predict_margin(model, arr))
    return float(p[0]) if single else p


def train(
    X,
    y,
    config: TrainConfig = TrainConfig(),
    X_valid=None,
    y_valid=None,
    feature_names: Sequence[str] | None = None,
    metadata: dict | None = None,
) -> Model:
    """Fit a boosted ensemble; per-round training loss and validation AUC go to ``history``."""
    X = _check_X(X)
    y = np.asarray(y, dtype=np.float64)
    if X.shape[0] == 0:
        raise SingleClass("empty training set")
    if X.shape[0] != y.shape[0]:
        raise DimensionMismatch("X and y lengths differ")
    spw = config.scale_pos_weight
    if spw is None:
        spw = compute_scale_pos_weight(y)
    elif not (np.any(y == 1) and np.any(y == 0)):
        raise SingleClass("labels must contain both classes")
    w = sample_weights(y, spw)
    p0 = float((w * y).sum() / w.sum())
    base = float(np.log(p0 / (1.0 - p0)))
    names = tuple(feature_names) if feature_names is not None else tuple(f"f{i}" for i in range(X.shape[1]))
    if len(names) != X.shape[1]:
        raise DimensionMismatch("feature_names length differs from X width")

    have_valid = X_valid is not None and y_valid is not None and len(y_valid) > 0
    if have_valid:
        X_valid = _check_X(X_valid, X.shape[1])
        y_valid = np.asarray(y_valid)
        valid_margin = np.full(X_valid.shape[0], base)
        valid_ok = bool(np.any(y_valid == 1) and np.any(y_valid == 0))

    sorted_idx, n_sorted = presort(X)
    margin = np.full(X.shape[0], base)
    trees: list[Tree] = []
    history = {"train_loss": [logistic_loss(margin, y, w)], "valid_auc": []}
    K = kernels.active
    for _ in range(config.n_trees):
        p = sigmoid(margin)
        g = w * (p - y)
        h = w * p * (1.0 - p)
        tree, delta = grow_tree(X, sorted_idx, n_sorted, g, h, config, K)
        trees.append(tree)
        margin = margin + delta
        history["train_loss"].append(logistic_loss(margin, y, w))
        if have_valid:
            leaf = K.leaf_index(X_valid, tree.feature, tree.threshold, tree.default_left, tree.left, tree.right)
            valid_margin = valid_margin + tree.value[leaf]
            if valid_ok:
                history["valid_auc"].append(auc(valid_margin, y_valid))

    meta = dict(metadata or {})
    meta.setdefault("scale_pos_weight", float(spw))
    meta.setdefault("n_train", int(X.shape[0]))
    return Model(trees, base, names, config, meta, history)


def config_dict(config: TrainConfig) -> dict:
    return asdict(config)
