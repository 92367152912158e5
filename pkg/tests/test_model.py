from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coursexai.errors import ValidationError
from coursexai.features import FeatureMatrix
from coursexai.model import (
    LOGISTIC_FLAT,
    LogisticFlat,
    RecurrentNet,
    SplitSpec,
    TrainConfig,
    balanced_accuracy,
    load_predictor,
    save_predictor,
    stratified_split,
    train,
)


def tiny_net(seed=0, weeks=3, n_features=2, hidden=(3, 4)):
    rng = np.random.default_rng(seed)
    return RecurrentNet(weeks, n_features, RecurrentNet.init_params(n_features, hidden, rng), hidden, seed=seed)


def toy_matrix(n=40, weeks=3, n_features=4, seed=0):
    rng = np.random.default_rng(seed)
    y = np.arange(n) % 2 == 0
    X = rng.random((n, weeks, n_features)) * 0.5
    X[y, :, 0] += 0.5
    return FeatureMatrix([f"s{i:02d}" for i in range(n)], weeks, X, np.zeros_like(X, dtype=bool),
                         features=tuple(f"f{j}" for j in range(n_features)), labels=y)


# --- split ----------------------------------------------------------------

def test_split_per_class_counts():
    ids = [f"s{i}" for i in range(10)]
    passed = [True] * 5 + [False] * 5
    train_ids, test_ids = stratified_split(ids, passed, SplitSpec(0.8, seed=3))
    lookup = dict(zip(ids, passed))
    assert sum(lookup[s] for s in train_ids) == 4 and sum(not lookup[s] for s in train_ids) == 4
    assert sum(lookup[s] for s in test_ids) == 1 and sum(not lookup[s] for s in test_ids) == 1


def test_split_eighty_twenty_and_deterministic():
    ids = [f"s{i:03d}" for i in range(200)]
    passed = [i % 4 != 0 for i in range(200)]
    a = stratified_split(ids, passed, SplitSpec(0.8, seed=1))
    b = stratified_split(ids, passed, SplitSpec(0.8, seed=1))
    c = stratified_split(ids, passed, SplitSpec(0.8, seed=2))
    assert a == b and a != c
    assert (len(a[0]), len(a[1])) == (160, 40)
    assert sorted(a[0] + a[1]) == ids


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 60), st.integers(2, 60), st.floats(0.05, 0.95), st.integers(0, 10_000))
def test_split_is_a_partition_with_both_classes_on_each_side(n_pass, n_fail, frac, seed):
    ids = [f"p{i}" for i in range(n_pass)] + [f"f{i}" for i in range(n_fail)]
    passed = [True] * n_pass + [False] * n_fail
    train_ids, test_ids = stratified_split(ids, passed, SplitSpec(frac, seed))
    assert not set(train_ids) & set(test_ids)
    assert sorted(train_ids + test_ids) == sorted(ids)
    for side in (train_ids, test_ids):
        assert any(s.startswith("p") for s in side) and any(s.startswith("f") for s in side)
    n_train_pass = sum(s.startswith("p") for s in train_ids)
    assert n_train_pass == min(max(int(np.floor(frac * n_pass + 0.5)), 1), n_pass - 1)


def test_split_rejects_tiny_class():
    with pytest.raises(ValidationError):
        stratified_split(["a", "b", "c"], [True, True, False])


# --- balanced accuracy ----------------------------------------------------

def test_balanced_accuracy_examples():
    y = np.array([True, True, False, False])
    assert balanced_accuracy(np.array([0.9, 0.8, 0.1, 0.2]), y) == 1.0
    assert balanced_accuracy(np.ones(4), y) == 0.5
    y = np.array([True] * 50 + [False] * 50)
    p = np.concatenate([np.r_[np.ones(40), np.zeros(10)], np.r_[np.zeros(30), np.ones(20)]])
    assert balanced_accuracy(p, y) == 0.7


def test_balanced_accuracy_threshold_is_inclusive():
    assert balanced_accuracy(np.array([0.5, 0.49]), np.array([True, False])) == 1.0


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 1), st.booleans()), min_size=2, max_size=40))
def test_balanced_accuracy_complement(pairs):
    p = np.array([a for a, _ in pairs])
    y = np.array([b for _, b in pairs])
    if y.all() or not y.any():
        return
    p = np.where(p == 0.5, 0.6, p)  # keep ties off the threshold
    bac = balanced_accuracy(p, y)
    assert 0.0 <= bac <= 1.0
    assert bac + balanced_accuracy(1 - p, y) == pytest.approx(1.0)


# --- recurrent net --------------------------------------------------------

def numeric_grad(net, X, y, params, key, l2, eps=1e-6):
    grad = np.zeros_like(params[key])
    it = np.nditer(params[key], flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = params[key][idx]
        params[key][idx] = orig + eps
        up, _ = net.loss_and_grad(X, y, params, l2)
        params[key][idx] = orig - eps
        down, _ = net.loss_and_grad(X, y, params, l2)
        params[key][idx] = orig
        grad[idx] = (up - down) / (2 * eps)
    return grad


def gradient_relative_errors(seed=0, l2=0.01):
    net = tiny_net(seed)
    rng = np.random.default_rng(seed + 100)
    X = rng.random((5, 3, 2))
    y = np.array([1.0, 0.0, 1.0, 1.0, 0.0])
    params = {k: v.copy() for k, v in net.params.items()}
    _, analytic = net.loss_and_grad(X, y, params, l2)
    errors = {}
    for key in params:
        num = numeric_grad(net, X, y, params, key, l2)
        denom = np.maximum(np.abs(num) + np.abs(analytic[key]), 1e-8)
        errors[key] = float(np.max(np.abs(num - analytic[key]) / denom))
    return errors


def test_recurrent_gradients_match_finite_differences():
    errors = gradient_relative_errors()
    assert max(errors.values()) < 1e-4, errors


def test_predictions_are_probabilities_and_pure():
    net = tiny_net()
    X = np.random.default_rng(1).random((6, 3, 2))
    p = net.predict(X)
    assert p.shape == (6,) and np.all((p > 0) & (p < 1))
    dup = net.predict(np.concatenate([X[:2], X[:2]]))
    np.testing.assert_array_equal(dup[:2], dup[2:])
    np.testing.assert_array_equal(net.predict(X), p)
    assert net.predict(np.zeros((0, 3, 2))).shape == (0,)


def test_inference_path_matches_training_forward():
    net = tiny_net(seed=4)
    X = np.random.default_rng(4).random((1100, 3, 2))
    fast = net.predict(X)
    slow, _ = net._forward(X, keep=True)
    np.testing.assert_allclose(fast, slow, rtol=0, atol=1e-12)


def test_predict_rejects_wrong_shape():
    with pytest.raises(ValidationError):
        tiny_net().predict(np.zeros((2, 4, 2)))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 8), st.floats(-50, 50))
def test_predict_stays_finite_on_extreme_inputs(n, scale):
    X = np.random.default_rng(n).standard_normal((n, 3, 2)) * scale
    p = tiny_net().predict(X)
    assert np.all(np.isfinite(p)) and np.all((p >= 0) & (p <= 1))


# --- training -------------------------------------------------------------

FAST = TrainConfig(hidden_sizes=(4, 6), max_epochs=15, patience=5, batch_size=16, seed=3)


def test_training_is_deterministic():
    m = toy_matrix()
    a = train(m, m.students[:30], FAST)
    b = train(m, m.students[:30], FAST)
    X = m.values[30:]
    np.testing.assert_array_equal(a.predict(X), b.predict(X))


def test_training_rejects_constant_labels():
    m = toy_matrix()
    same = [s for s, y in zip(m.students, m.labels) if y]
    with pytest.raises(ValidationError, match="single class"):
        train(m, same, FAST)


def test_logistic_baseline_learns_separable_signal():
    m = toy_matrix(n=80)
    model = train(m, m.students[:60], TrainConfig(kind=LOGISTIC_FLAT, l2=1e-3))
    assert isinstance(model, LogisticFlat)
    assert balanced_accuracy(model.predict(m.values[60:]), m.labels[60:]) == 1.0


def test_checkpoint_round_trip(tmp_path):
    m = toy_matrix()
    for config in (FAST, TrainConfig(kind=LOGISTIC_FLAT)):
        model = train(m, m.students[:30], config)
        save_predictor(tmp_path / "m.json", model, extra={"note": 1})
        back, extra = load_predictor(tmp_path / "m.json")
        assert extra == {"note": 1}
        assert back.descriptor == model.descriptor
        np.testing.assert_array_equal(back.predict(m.values), model.predict(m.values))


def test_checkpoint_rejects_foreign_json(tmp_path):
    (tmp_path / "x.json").write_text('{"format": "other"}')
    with pytest.raises(ValidationError):
        load_predictor(tmp_path / "x.json")
