import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wavescale.scattering import (
    HeadHyperparams,
    LinearHead,
    ScatteringConfig,
    ScatteringModel,
    TrainingError,
    UntrainedHeadError,
    filter_bank,
    fit_head,
    logistic_grad,
    logistic_loss,
    path_list,
    predict,
    scattering_forward,
    sigmoid,
)


def count_formula(m, J):
    return m * J + m * m * J * (J - 1) // 2


# features


@pytest.mark.parametrize("m", [1, 2, 3])
@pytest.mark.parametrize("J", [4, 8])
def test_feature_count_contract(m, J):
    cfg = ScatteringConfig(depth=m, orientations=J, input_size=32)
    feats = scattering_forward(np.random.default_rng(0).random((32, 32)), cfg)
    assert len(feats) == cfg.feature_length == count_formula(m, J)
    assert len(feats.paths) == len(feats)
    # every emitted path appears exactly once
    assert len(set(path_list(cfg))) == len(path_list(cfg)) == count_formula(m, J)


def test_default_config_gives_128():
    assert len(scattering_forward(np.zeros((64, 64)))) == 128


def test_pooling_multiplies_length():
    cfg = ScatteringConfig(depth=1, orientations=4, input_size=32, pooling=4)
    feats = scattering_forward(np.random.default_rng(1).random((32, 32)), cfg)
    assert len(feats) == count_formula(1, 4) * 16
    assert all(feats.paths.count(p) == 16 for p in path_list(cfg))


def test_zero_image_gives_zero_features():
    assert np.all(scattering_forward(np.zeros((64, 64, 3))).values == 0.0)


def test_features_nonnegative_and_deterministic():
    x = np.random.default_rng(2).random((64, 64, 3))
    a = scattering_forward(x).values
    assert np.all(a >= 0)
    np.testing.assert_array_equal(a, scattering_forward(x).values)


@settings(max_examples=10, deadline=None)
@given(c=st.floats(0, 10), seed=st.integers(0, 100))
def test_first_order_homogeneity(c, seed):
    cfg = ScatteringConfig(depth=2, orientations=4, input_size=32)
    x = np.random.default_rng(seed).random((32, 32))
    first = cfg.depth * cfg.orientations
    base = scattering_forward(x, cfg).values[:first]
    scaled = scattering_forward(c * x, cfg).values[:first]
    np.testing.assert_allclose(scaled, c * base, rtol=1e-10, atol=1e-12)


def _unit_distance(a, b):
    return float(np.linalg.norm(a / np.linalg.norm(a) - b / np.linalg.norm(b)))


@pytest.mark.parametrize("pooling", [1, 2, 4])
def test_roll_changes_features_less_than_pixels(pooling):
    # measured over 10 images: the normalized feature distance stays below
    # 5% of the normalized pixel distance for every pooling size tried
    cfg = ScatteringConfig(pooling=pooling)
    for seed in range(10):
        x = np.random.default_rng(seed).random((64, 64))
        xr = np.roll(x, 2, axis=(0, 1))
        d_feat = _unit_distance(scattering_forward(x, cfg).values, scattering_forward(xr, cfg).values)
        d_pix = _unit_distance(x.ravel(), xr.ravel())
        assert d_feat < d_pix
        assert d_feat < 0.1 * d_pix


def test_filter_bank_is_read_only():
    bank = filter_bank(ScatteringConfig())
    with pytest.raises(ValueError):
        bank["phi"][0, 0] = 1.0


@pytest.mark.parametrize("kwargs", [{"depth": 4}, {"depth": 0}, {"orientations": 0},
                                    {"input_size": 64, "pooling": 3}, {"depth": 3, "input_size": 8}])
def test_bad_config(kwargs):
    with pytest.raises(ValueError):
        ScatteringConfig(**kwargs)


def test_inadmissible_input_size():
    with pytest.raises(ValueError, match="square"):
        scattering_forward(np.zeros((64, 32)))
    with pytest.raises(ValueError, match="multiple"):
        scattering_forward(np.zeros((96, 96)))


def test_larger_inputs_are_area_averaged():
    x = np.random.default_rng(3).random((64, 64))
    big = np.kron(x, np.ones((2, 2)))
    np.testing.assert_allclose(scattering_forward(big).values, scattering_forward(x).values, atol=1e-12)


# head


def test_gradient_matches_central_differences():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((20, 6))
    y = (rng.random(20) > 0.5).astype(float)
    w = rng.standard_normal(6)
    b = 0.3
    gw, gb = logistic_grad(w, b, x, y, 1e-2)
    eps = 1e-6
    num = np.empty(7)
    for i in range(6):
        e = np.zeros(6)
        e[i] = eps
        num[i] = (logistic_loss(w + e, b, x, y, 1e-2) - logistic_loss(w - e, b, x, y, 1e-2)) / (2 * eps)
    num[6] = (logistic_loss(w, b + eps, x, y, 1e-2) - logistic_loss(w, b - eps, x, y, 1e-2)) / (2 * eps)
    ana = np.append(gw, gb)
    assert np.max(np.abs(ana - num) / np.maximum(np.abs(num), 1e-8)) < 1e-4


def _separable(seed=0, n=40):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, 2))
    y = (x[:, 0] + 0.5 * x[:, 1] > 0).astype(int)
    x[y == 1] += 0.5
    x[y == 0] -= 0.5
    return x, y


def test_separable_toy_reaches_full_accuracy():
    x, y = _separable()
    head = fit_head(list(x), y, HeadHyperparams(epochs=500))
    acc = np.mean((head.decision(x) > 0).astype(int) == y)
    assert acc == 1.0


def test_loss_history_non_increasing():
    x, y = _separable(1)
    head = fit_head(list(x), y, HeadHyperparams(learning_rate=5.0, epochs=100))
    h = np.array(head.loss_history)
    assert len(h) == 101
    assert np.all(np.diff(h) <= 0)


def test_duplicated_dataset_gives_same_boundary():
    x, y = _separable(2)
    a = fit_head(list(x), y)
    b = fit_head(list(np.vstack([x, x])), np.concatenate([y, y]))
    np.testing.assert_allclose(b.weights, a.weights, atol=1e-10)
    assert b.bias == pytest.approx(a.bias, abs=1e-10)


def test_training_errors():
    with pytest.raises(TrainingError, match="each class"):
        fit_head([[0.0], [1.0], [2.0]], [1, 1, 1])
    with pytest.raises(TrainingError, match="binary"):
        fit_head([[0.0], [1.0], [2.0], [3.0]], [0, 1, 2, 1])
    with pytest.raises(TrainingError):
        fit_head([[0.0, 1.0], [1.0]], [0, 1])


def test_predict_zero_head_and_monotone():
    head = LinearHead(np.zeros(3), 0.0, trained=True)
    assert predict(head, np.ones(3)) == 0.5
    head = LinearHead(np.array([1.0, 0.0, 0.0]), 0.0, trained=True)
    probs = [predict(head, np.array([z, 0.0, 0.0])) for z in (-50, -1, 0, 1, 10, 40)]
    assert all(0.0 < p < 1.0 for p in probs[:-1])
    assert all(a < b for a, b in zip(probs, probs[1:-1]))
    assert sigmoid(800.0) == 1.0 and sigmoid(-800.0) == 0.0


def test_untrained_head_errors():
    with pytest.raises(UntrainedHeadError):
        predict(LinearHead(), np.ones(3))
    with pytest.raises(UntrainedHeadError):
        LinearHead().to_json()
    with pytest.raises(UntrainedHeadError):
        ScatteringModel(None).predict(np.zeros((64, 64)))


def test_length_mismatch():
    with pytest.raises(ValueError, match="expected 3"):
        predict(LinearHead(np.zeros(3), trained=True), np.ones(4))


def test_head_json_round_trip():
    x, y = _separable(3)
    head = fit_head(list(x), y, config_fingerprint="abc")
    back = LinearHead.from_json(head.to_json())
    assert set(json.loads(head.to_json())) == {"weights", "bias", "mean", "scale", "config_fingerprint"}
    np.testing.assert_array_equal(back.decision(x), head.decision(x))
    assert back.config_fingerprint == "abc"


def test_scattering_model_is_roll_invariant_when_pooled_globally():
    cfg = ScatteringConfig(depth=1, orientations=4, input_size=32)
    rng = np.random.default_rng(4)
    imgs = [rng.random((32, 32)) * (0.5 + 0.5 * (k % 2)) for k in range(8)]
    feats = [scattering_forward(im, cfg) for im in imgs]
    head = fit_head(feats, [k % 2 for k in range(8)], config_fingerprint=cfg.fingerprint())
    model = ScatteringModel(head, cfg)
    for im in imgs:
        assert model.predict(np.roll(im, 2, axis=(0, 1))) == pytest.approx(model.predict(im), abs=1e-12)
    assert model.fingerprint().startswith("scattering-m1-J4:")
