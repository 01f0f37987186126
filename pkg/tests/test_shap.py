import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from streetsafety.gbt import TrainConfig, Tree, fit_multiclass, fit_regressor
from streetsafety.shap import (
    NoSignalError, class_importance, dependence_csv, dependence_table, explain, global_importance,
    tree_shap, tree_shap_single,
)

from oracles import brute_shapley


def random_regressor(seed):
    rng = np.random.default_rng(seed)
    m = int(rng.integers(1, 6))
    n = 60
    X = rng.integers(0, 4, size=(n, m)).astype(float)
    y = rng.standard_normal(n) + X @ rng.standard_normal(m)
    cfg = TrainConfig(rounds=int(rng.integers(1, 4)), max_depth=int(rng.integers(1, 4)),
                      learning_rate=0.5, l2_lambda=float(rng.uniform(0, 2)), min_child_weight=0.0)
    return fit_regressor(X, y, cfg), X


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_matches_brute_force_shapley(seed):
    model, X = random_regressor(seed)
    trees = [rnd[0] for rnd in model.trees]
    for x in X[:5]:
        att = tree_shap(model, x)
        phi, v0 = brute_shapley(trees, x, model.n_features)
        np.testing.assert_allclose(att.phi[0], phi, atol=1e-9)
        assert att.phi0[0] == pytest.approx(model.base_score[0] + v0, abs=1e-9)


def test_additivity_for_multiclass():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((200, 4))
    y = (X[:, 0] > 0).astype(int) + (X[:, 1] > 0.5)
    model = fit_multiclass(X, y, TrainConfig(rounds=10, max_depth=3))
    logits = model.predict_logits(X)
    for i, att in enumerate(explain(model, X)):
        np.testing.assert_allclose(att.phi.sum(axis=1) + att.phi0, logits[i], atol=1e-9)


def test_unused_feature_gets_zero():
    rng = np.random.default_rng(1)
    X = rng.standard_normal((100, 3))
    X[:, 2] = 0.0
    model = fit_regressor(X, X[:, 0] + rng.standard_normal(100) * 0.1, TrainConfig(rounds=5, max_depth=3))
    for att in explain(model, X[:20]):
        assert att.phi[0, 2] == 0.0


def test_symmetric_features_share_credit():
    # f(x) = 1 if x0 > 0.5 and x1 > 0.5 with both orderings present in equal cover
    t1 = Tree(np.array([0, 1, -1, -1, -1]), np.array([0.5, 0.5, 0, 0, 0]), np.array([2, 3, -1, -1, -1]),
              np.array([1, 4, -1, -1, -1]), np.array([0, 0, 0, 0, 1.0]), np.array([4, 2, 2, 1, 1.0]))
    phi, e = tree_shap_single(t1, np.array([1.0, 1.0]), 2)
    assert phi[0] == pytest.approx(phi[1])
    assert phi.sum() + e == pytest.approx(1.0)


def test_constant_tree():
    phi, e = tree_shap_single(Tree.leaf(0.7, 3.0), np.zeros(2), 2)
    assert (phi == 0).all() and e == 0.7


def test_importance_and_dependence():
    rng = np.random.default_rng(2)
    X = rng.standard_normal((150, 3))
    y = (X[:, 1] > 0).astype(int)
    model = fit_multiclass(X, y, TrainConfig(rounds=5, max_depth=2))
    atts = explain(model, X, refs=[f"p{i}" for i in range(150)])
    summary = global_importance(atts, ["a", "b", "c"])
    assert summary.shares.sum() == pytest.approx(1.0)
    assert summary.ranking()[0][0] == "b"
    assert class_importance(atts, 1, ["a", "b", "c"]).ranking()[0][0] == "b"
    table = dependence_table(atts, 1, 1)
    values = [v for v, _ in table]
    assert values == sorted(values) and len(table) == 150
    assert dependence_csv(table, "b").splitlines()[0] == "b,shap"


def test_no_signal_is_reported():
    rng = np.random.default_rng(3)
    X = rng.standard_normal((50, 2))
    model = fit_regressor(X, np.ones(50), TrainConfig(rounds=2))
    with pytest.raises(NoSignalError, match="no signal"):
        global_importance(explain(model, X))
