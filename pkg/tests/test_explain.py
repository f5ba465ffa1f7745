import json

import numpy as np
import pytest

from oracles import brute_force_shap
from ifrnow.errors import DimensionMismatch, EmptyBackground, EmptyDataset
from ifrnow.explain import (
    Explainer,
    background_sample,
    mean_abs_shap,
    read_importance_csv,
    top_k,
    tree_shap,
    write_explanations,
    write_importance_csv,
)
from ifrnow.gbdt import Model, TrainConfig, Tree, _kernels_numpy, kernels, predict_margin, train


def and_tree():
    """value 1 iff x0 >= 0 and x1 >= 0, with covers splitting evenly at each node."""
    return Tree(
        feature=np.array([0, -1, 1, -1, -1], dtype=np.int32),
        threshold=np.array([0.0, 0, 0.0, 0, 0]),
        default_left=np.ones(5, dtype=np.uint8),
        left=np.array([1, -1, 3, -1, -1], dtype=np.int32),
        right=np.array([2, -1, 4, -1, -1], dtype=np.int32),
        value=np.array([0.0, 0.0, 0.0, 0.0, 1.0]),
        cover=np.array([4.0, 2.0, 2.0, 1.0, 1.0]),
        gain=np.array([1.0, 0, 1.0, 0, 0]),
    )


def and_model():
    return Model([and_tree()], 0.0, ("a", "b", "c"))


def trained(n=600, seed=5):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 4))
    X[rng.random(X.shape) < 0.1] = np.nan
    y = ((np.nan_to_num(X[:, 0]) + np.nan_to_num(X[:, 1]) * np.nan_to_num(X[:, 2])) > 0.8).astype(int)
    return train(X, y, TrainConfig(n_trees=8, max_depth=3)), X


def test_hand_built_symmetry():
    a = tree_shap(and_model(), [1.0, 1.0, 5.0])
    assert a.base_value == 0.25
    assert a.phi.tolist() == [0.375, 0.375, 0.0]
    assert a.margin == 1.0


def test_null_player_gets_zero():
    model, X = trained()
    used = set(int(f) for t in model.trees for f in t.feature if f >= 0)
    model.trees.append(Tree.leaf(0.0, 600.0))
    phi = Explainer(model).shap_values(X[:100])
    for j in set(range(4)) - used:
        assert np.all(phi[:, j] == 0)


def test_local_accuracy_with_and_without_background():
    model, X = trained()
    margin = predict_margin(model, X[:200])
    for bg in (None, X[:150], background_sample(X, 50)):
        ex = Explainer(model, bg)
        phi = ex.shap_values(X[:200])
        assert np.max(np.abs(ex.base_value + phi.sum(axis=1) - margin)) < 1e-9


def test_matches_subset_enumeration():
    model, X = trained(300, seed=9)
    bg = X[::3]
    ex = Explainer(model, bg)
    for x in X[:5]:
        want = brute_force_shap(model.trees, ex.covers, x, 4)
        assert np.allclose(ex.explain(x).phi, want, atol=1e-10)


def test_kernels_agree():
    model, X = trained(800, seed=2)
    model.trees.append(Tree.leaf(0.1, 800.0))
    for bg in (None, X[:100]):
        ex = Explainer(model, bg)
        args = (np.ascontiguousarray(X[:300]), *ex._flat, ex._depth)
        native = kernels.active.shap_values(*args)
        leafwise = _kernels_numpy.shap_values(*args)
        assert np.max(np.abs(native - leafwise)) < 1e-12


def test_empty_ensemble():
    empty = Model([], 0.3, ("a", "b"))
    a = tree_shap(empty, [1.0, 2.0])
    assert a.phi.tolist() == [0.0, 0.0] and a.base_value == 0.3


def test_input_errors():
    model, X = trained()
    with pytest.raises(EmptyBackground):
        Explainer(model, np.zeros((0, 4)))
    with pytest.raises(EmptyDataset):
        mean_abs_shap(model, np.zeros((0, 4)))
    with pytest.raises(DimensionMismatch):
        Explainer(model).explain(X[:2])
    with pytest.raises(DimensionMismatch):
        tree_shap(model, [1.0, 2.0])


def test_mean_abs_ranking():
    model = and_model()
    one = mean_abs_shap(model, [[1.0, 1.0, 0.0]])
    assert one == [("a", 0.375), ("b", 0.375), ("c", 0.0)]
    single = Model([Tree(
        feature=np.array([2, -1, -1], dtype=np.int32), threshold=np.array([0.0, 0, 0]),
        default_left=np.ones(3, dtype=np.uint8), left=np.array([1, -1, -1], dtype=np.int32),
        right=np.array([2, -1, -1], dtype=np.int32), value=np.array([0.0, -1.0, 1.0]),
        cover=np.array([2.0, 1.0, 1.0]), gain=np.array([1.0, 0, 0]),
    )], 0.0, ("a", "b", "c"))
    ranking = mean_abs_shap(single, [[0.0, 0.0, -1.0], [0.0, 0.0, 1.0]])
    assert ranking[0] == ("c", 1.0) and ranking[1][1] == 0.0 and ranking[2][1] == 0.0


def test_background_sample_is_seeded():
    X = np.arange(5000.0).reshape(-1, 2)
    a, b = background_sample(X, 100), background_sample(X, 100)
    assert a.shape == (100, 2) and np.array_equal(a, b)
    assert background_sample(X[:10], 100).shape == (10, 2)


def test_writers(tmp_path):
    model, X = trained()
    ranking = mean_abs_shap(model, X)
    path = write_importance_csv(ranking, tmp_path / "importance.csv")
    assert read_importance_csv(path) == ranking
    times = [f"2024-03-15T{h:02d}:00Z" for h in range(5)]
    out = write_explanations(model, times, X[:5], tmp_path / "explain.jsonl", k=2)
    lines = [json.loads(s) for s in out.read_text().splitlines()]
    assert len(lines) == 5 and all(len(r["top"]) == 2 for r in lines)
    assert all(0 < r["probability"] < 1 for r in lines)
    assert top_k([0.1, -0.5, 0.2], ["a", "b", "c"], 2) == [("b", -0.5), ("c", 0.2)]
