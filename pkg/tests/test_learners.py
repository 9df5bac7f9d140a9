"""Tests for the learner families, baselines and model files."""
from __future__ import annotations

import joblib
import numpy as np
import pytest
from sklearn.linear_model import Ridge

from ruptura.exceptions import ConfigError, LayoutError, ValidationError
from ruptura.feature_builder import Dataset, FeatureSetSpec, build_layout
from ruptura.learners import (
    BASELINES,
    FAMILIES,
    ModelSpec,
    load_model,
    predict,
    save_model,
    select_on_dev,
    train,
)
from ruptura.learners.baselines import (
    ForecastBaseline,
    MeanBaseline,
    NoChangeBaseline,
    ar_forecast,
    select_ar_order,
)
from ruptura.learners.ffn import FeedForwardNet
from ruptura.learners.knn import KNNRegressor
from ruptura.learners.ridge import RidgeRegressor
from ruptura.learners.trees import ForestRegressor, resolve_max_features
from ruptura.rdd_estimator import EpisodeWindow, WindowConfig


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------

def _linear_data(n=40, d=11, noise=0.1, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, d))
    B = rng.normal(size=(d, 2))
    Y = X @ B + noise * rng.normal(size=(n, 2))
    return X, Y


def _dataset(X, Y, spec=FeatureSetSpec(), ids=None):
    ids = ids or [f"{i:05d}" for i in range(len(X))]
    return Dataset(X, Y, ids, spec=spec, layout=build_layout(spec, WindowConfig()))


def _flat_window(region_id="00001", level=0.7):
    offsets = np.arange(-9, 0)
    after = np.arange(1, 10)
    return EpisodeWindow(
        region_id,
        50,
        offsets,
        np.full(9, level),
        after,
        np.full(9, level),
    )


# ---------------------------------------------------------------------------
# Ridge
# ---------------------------------------------------------------------------

def test_ridge_satisfies_normal_equations():
    X, Y = _linear_data()
    model = RidgeRegressor(alpha=2.0).fit(X, Y)
    Xc = X - X.mean(axis=0)
    Yc = Y - Y.mean(axis=0)
    gradient = Xc.T @ (Xc @ model.coef_ - Yc) + 2.0 * model.coef_
    assert np.max(np.abs(gradient)) < 1e-6


def test_ridge_matches_scikit_learn():
    X, Y = _linear_data()
    ours = RidgeRegressor(alpha=3.0).fit(X, Y)
    ref = Ridge(alpha=3.0).fit(X, Y)
    np.testing.assert_allclose(ours.coef_, ref.coef_.T, atol=1e-8)
    np.testing.assert_allclose(ours.predict(X), ref.predict(X), atol=1e-8)


def test_ridge_weights_shrink_with_alpha():
    X, Y = _linear_data()
    norms = [np.linalg.norm(RidgeRegressor(a).fit(X, Y).coef_) for a in (0.1, 1, 10, 100, 1000)]
    assert all(a >= b for a, b in zip(norms, norms[1:]))


def test_ridge_joint_equals_per_target():
    X, Y = _linear_data()
    data = _dataset(X, Y)
    joint = predict(train(ModelSpec("ridge", {"alpha": 1.0}), data), data)
    split = predict(train(ModelSpec("ridge", {"alpha": 1.0}, per_target=True), data), data)
    np.testing.assert_allclose(joint, split, atol=1e-10)


# ---------------------------------------------------------------------------
# k nearest neighbours
# ---------------------------------------------------------------------------

def test_knn_matches_brute_force():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(30, 3))
    Y = rng.normal(size=(30, 2))
    queries = rng.normal(size=(5, 3))
    model = KNNRegressor(k=4).fit(X, Y)
    for q, pred in zip(queries, model.predict(queries)):
        nearest = np.argsort(np.linalg.norm(X - q, axis=1))[:4]
        np.testing.assert_allclose(pred, Y[nearest].mean(axis=0))


def test_knn_with_every_row_predicts_the_mean():
    X, Y = _linear_data(n=12)
    model = KNNRegressor(k=12).fit(X, Y)
    np.testing.assert_allclose(model.predict(X[:3]), np.tile(Y.mean(axis=0), (3, 1)))


def test_knn_caps_k_at_training_rows():
    X, Y = _linear_data(n=4)
    assert KNNRegressor(k=10).fit(X, Y).k == 4


def test_knn_ties_broken_by_region_id():
    X = np.array([[1.0], [1.0]])
    Y = np.array([[5.0, 5.0], [-5.0, -5.0]])
    first = KNNRegressor(k=1).fit(X, Y, ["b", "a"]).predict(np.array([[1.0]]))
    flipped = KNNRegressor(k=1).fit(X[::-1], Y[::-1], ["a", "b"]).predict(np.array([[1.0]]))
    assert first.tolist() == [[-5.0, -5.0]]
    assert flipped.tolist() == [[-5.0, -5.0]]


# ---------------------------------------------------------------------------
# Forests
# ---------------------------------------------------------------------------

def test_resolve_max_features():
    assert resolve_max_features("third", 11) == 4
    assert resolve_max_features("third", 2) == 1
    assert resolve_max_features("all", 11) is None
    assert resolve_max_features(20, 11) == 11
    assert resolve_max_features("sqrt", 11) == "sqrt"


def test_single_unbagged_tree_fits_training_rows_exactly():
    X, Y = _linear_data(n=50)
    forest = ForestRegressor(
        "random_forest", n_estimators=1, max_features="all", bootstrap=False, seed=0
    ).fit(X, Y)
    np.testing.assert_allclose(forest.predict(X), Y, atol=1e-12)


def test_forest_independent_of_row_order():
    X, Y = _linear_data(n=30)
    ids = [f"{i:05d}" for i in range(30)]
    perm = np.random.default_rng(2).permutation(30)
    a = ForestRegressor("extra_trees", n_estimators=20, seed=3).fit(X, Y, ids)
    b = ForestRegressor("extra_trees", n_estimators=20, seed=3).fit(
        X[perm], Y[perm], [ids[i] for i in perm]
    )
    np.testing.assert_array_equal(a.predict(X), b.predict(X))


def test_forest_family_defaults_bootstrap():
    assert ForestRegressor("random_forest").bootstrap is True
    assert ForestRegressor("extra_trees").bootstrap is False
    with pytest.raises(ValueError):
        ForestRegressor("boosting")


# ---------------------------------------------------------------------------
# Feed-forward network
# ---------------------------------------------------------------------------

def test_ffn_gradients_match_finite_differences():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(8, 3))
    Y = rng.normal(size=(8, 2))
    net = FeedForwardNet(3, 2, layers=2, width=4, seed=5)
    _, grads = net.loss_and_gradients(X, Y)
    eps = 1e-6
    for param, grad in zip(net.parameters, grads):
        numeric = np.zeros_like(param)
        for i in range(param.size):
            original = param.flat[i]
            param.flat[i] = original + eps
            up = net.loss(X, Y)
            param.flat[i] = original - eps
            down = net.loss(X, Y)
            param.flat[i] = original
            numeric.flat[i] = (up - down) / (2 * eps)
        np.testing.assert_allclose(grad, numeric, rtol=1e-4, atol=1e-7)


def test_ffn_training_reduces_loss():
    X, Y = _linear_data(n=64, d=3, noise=0.0)
    net = FeedForwardNet(3, 2, layers=1, width=8, seed=0)
    before = net.loss(X, Y)
    net.fit(X, Y, epochs=200, lr=0.01, batch_size=16, seed=0)
    assert net.loss(X, Y) < 0.5 * before


def test_ffn_seeded_training_is_reproducible():
    X, Y = _linear_data(n=20)
    data = _dataset(X, Y)
    spec = ModelSpec("ffn", {"epochs": 5}, seed=7)
    np.testing.assert_array_equal(
        predict(train(spec, data), X), predict(train(spec, data), X)
    )


# ---------------------------------------------------------------------------
# Baselines
# ---------------------------------------------------------------------------

def test_no_change_and_mean_baselines():
    assert NoChangeBaseline().predict(3).tolist() == [[0.0, 0.0]] * 3
    Y = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert MeanBaseline().fit(Y).predict(2).tolist() == [[2.0, 3.0], [2.0, 3.0]]


def test_forecast_baseline_on_flat_history_predicts_no_change():
    delta0, delta1 = ForecastBaseline().predict_window(_flat_window(), WindowConfig())
    assert delta0 == pytest.approx(0.0, abs=1e-12)
    assert delta1 == pytest.approx(0.0, abs=1e-12)


def test_ar_order_selection_bounds():
    assert select_ar_order(np.full(9, 2.0)) == 0
    noise = np.random.default_rng(0).normal(size=9)
    assert 0 <= select_ar_order(noise, 3) <= 3
    assert select_ar_order(noise[:3], 3) == 0


def test_ar_forecast_length():
    forecast, order = ar_forecast(np.random.default_rng(1).normal(size=9), 10)
    assert forecast.shape == (10,)
    assert 0 <= order <= 3


def test_baselines_through_train_and_predict():
    X, Y = _linear_data(n=6)
    data = _dataset(X, Y)
    data.windows = [_flat_window(r) for r in data.region_ids]
    assert np.all(predict(train(ModelSpec("baseline_no_change"), data), data) == 0.0)
    np.testing.assert_allclose(
        predict(train(ModelSpec("baseline_mean"), data), data), np.tile(Y.mean(axis=0), (6, 1))
    )
    forecast = predict(train(ModelSpec("baseline_forecast"), data), data)
    np.testing.assert_allclose(forecast, 0.0, atol=1e-12)


def test_forecast_baseline_needs_windows():
    X, Y = _linear_data(n=4)
    model = train(ModelSpec("baseline_forecast"), _dataset(X, Y))
    with pytest.raises(ValidationError, match="episode window"):
        predict(model, X)


@pytest.mark.parametrize("family", FAMILIES)
def test_per_target_predictions_have_two_columns(family):
    X, Y = _linear_data(n=6)
    data = _dataset(X, Y)
    data.windows = [_flat_window(r) for r in data.region_ids]
    spec = ModelSpec(family, {"epochs": 5} if family == "ffn" else {}, per_target=True)
    assert predict(train(spec, data), data).shape == (6, 2)


def test_per_target_baselines_match_joint():
    X, Y = _linear_data(n=6)
    data = _dataset(X, Y)
    data.windows = [_flat_window(r) for r in data.region_ids]
    for family in BASELINES:
        joint = predict(train(ModelSpec(family), data), data)
        split = predict(train(ModelSpec(family, per_target=True), data), data)
        np.testing.assert_allclose(split, joint, atol=1e-12)


# ---------------------------------------------------------------------------
# Specs, layouts and model files
# ---------------------------------------------------------------------------

def test_model_spec_validation():
    with pytest.raises(ConfigError, match="alpha"):
        ModelSpec("ridge", {"alpha": -1})
    with pytest.raises(ConfigError, match="Unknown model family"):
        ModelSpec("svm")
    with pytest.raises(ConfigError, match="Unknown hyperparameter"):
        ModelSpec("knn", {"neighbours": 3})
    with pytest.raises(ConfigError, match="max_order"):
        ModelSpec("baseline_forecast", {"max_order": 4})


def test_model_spec_defaults_follow_feature_set():
    rich = ModelSpec.for_features("ridge", FeatureSetSpec(True, True, True, True))
    plain = ModelSpec.for_features("ridge", FeatureSetSpec())
    assert rich.hyperparameters["alpha"] == 10.0
    assert plain.hyperparameters["alpha"] == 1.0
    explicit = ModelSpec.for_features("ridge", FeatureSetSpec(True, True, True, True), alpha=1.0)
    assert explicit.hyperparameters["alpha"] == 1.0
    assert explicit.overrides == {"alpha": 1.0}
    assert rich.overrides == {}
    assert ModelSpec("extra_trees").hyperparameters["max_depth"] == 10


def test_predict_rejects_other_layout():
    X, Y = _linear_data()
    model = train(ModelSpec("ridge"), _dataset(X, Y))
    other = _dataset(X[:, :9], Y, spec=FeatureSetSpec(use_RC=False))
    with pytest.raises(LayoutError):
        predict(model, other)
    with pytest.raises(LayoutError):
        predict(model, X[:, :9])


def test_train_standardises_columns():
    X, Y = _linear_data()
    model = train(ModelSpec("knn"), _dataset(X * 100.0 + 5.0, Y))
    np.testing.assert_allclose(model.feature_means, (X * 100.0 + 5.0).mean(axis=0))
    assert model.feature_stds is not None
    assert train(ModelSpec("baseline_mean"), _dataset(X, Y)).scaler is None


def test_saved_model_predicts_identically(tmp_path):
    X, Y = _linear_data()
    data = _dataset(X, Y)
    spec = ModelSpec("random_forest", {"n_estimators": 10}, seed=1)
    model = train(spec, data, split={"seed": 1})
    path = tmp_path / "model.joblib"
    save_model(model, path)
    loaded = load_model(path)
    assert loaded.fingerprint == model.fingerprint
    assert loaded.split == {"seed": 1}
    np.testing.assert_array_equal(predict(loaded, data), predict(model, data))


def test_load_model_rejects_foreign_files(tmp_path):
    path = tmp_path / "other.joblib"
    joblib.dump({"weights": [1, 2]}, path)
    with pytest.raises(ValidationError, match="not a ruptura model"):
        load_model(path)
    joblib.dump({"header": {"format_version": 99}, "model": None}, path)
    with pytest.raises(ValidationError, match="format version"):
        load_model(path)


def test_select_on_dev_prefers_light_penalty_on_clean_data():
    X, Y = _linear_data(n=60, noise=0.0)
    train_set = _dataset(X[:40], Y[:40])
    dev_set = _dataset(X[40:], Y[40:], ids=[f"{i:05d}" for i in range(40, 60)])
    chosen = select_on_dev(
        "ridge", train_set, dev_set, grid=[{"alpha": 1000.0}, {"alpha": 0.001}]
    )
    assert chosen.hyperparameters["alpha"] == 0.001


def test_select_on_dev_rejects_empty_grid():
    X, Y = _linear_data()
    data = _dataset(X, Y)
    with pytest.raises(ConfigError, match="grid is empty"):
        select_on_dev("ridge", data, data, grid=[])
