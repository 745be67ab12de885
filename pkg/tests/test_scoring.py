import numpy as np
import pytest

from annobudget.detector import PredictionSet, empty_prediction_set, \
    make_prediction_set
from annobudget.scoring import lal_features, model_state, uncertainty
from conftest import random_prediction_set


def preds_from_probs(probs, image_id="x"):
    probs = np.asarray(probs, dtype=float)
    boxes = np.tile([0.0, 0.0, 10.0, 10.0], (len(probs), 1))
    boxes[:, 0] += np.arange(len(probs)) * 20  # keep boxes distinct
    boxes[:, 2] += np.arange(len(probs)) * 20
    return make_prediction_set(image_id, boxes, probs)


def test_uniform_single_box_max_entropy():
    preds = preds_from_probs([np.full(20, 1 / 20)])
    score = uncertainty(preds, 20)
    assert score.value == pytest.approx(np.log(20), abs=1e-12)


def test_one_hot_boxes_zero_entropy():
    rows = np.zeros((3, 20))
    rows[0, 4] = rows[1, 0] = rows[2, 19] = 1.0
    score = uncertainty(preds_from_probs(rows), 20)
    assert score.value == pytest.approx(0.0, abs=1e-12)


def test_mixed_two_box_value():
    # mean of a two-way 50/50 split (ln 2) and a one-hot (0)
    rows = np.zeros((2, 20))
    rows[0, 0] = rows[0, 1] = 0.5
    rows[1, 7] = 1.0
    score = uncertainty(preds_from_probs(rows), 20)
    assert score.value == pytest.approx(np.log(2) / 2, abs=1e-12)


def test_empty_predictions_score_max():
    score = uncertainty(empty_prediction_set("x", 12), 12)
    assert score.value == pytest.approx(np.log(12))


def test_entropy_bounds_and_extremes():
    rng = np.random.default_rng(3)
    for _ in range(200):
        preds = random_prediction_set(rng, n_classes=6)
        value = uncertainty(preds, 6).value
        assert -1e-12 <= value <= np.log(6) + 1e-12


def test_permutation_invariance():
    rng = np.random.default_rng(4)
    probs = rng.dirichlet(np.ones(8), size=5)
    base = uncertainty(preds_from_probs(probs), 8).value
    by_boxes = uncertainty(preds_from_probs(probs[::-1]), 8).value
    by_classes = uncertainty(preds_from_probs(probs[:, ::-1]), 8).value
    assert base == pytest.approx(by_boxes, abs=1e-12)
    assert base == pytest.approx(by_classes, abs=1e-12)


def test_confidence_scaling_does_not_change_score():
    rng = np.random.default_rng(5)
    preds = random_prediction_set(rng, n_classes=6, max_boxes=5)
    if preds.n_boxes == 0:
        preds = random_prediction_set(rng, n_classes=6, max_boxes=5)
    scaled = PredictionSet(image_id=preds.image_id, boxes=preds.boxes,
                           classes=preds.classes,
                           confidences=preds.confidences * 0.5,
                           class_probs=preds.class_probs)
    assert uncertainty(scaled, 6).value == \
        pytest.approx(uncertainty(preds, 6).value, abs=1e-12)


def test_model_state_zero_table():
    assert np.array_equal(model_state(np.zeros((7, 5))), np.zeros(35))


def test_model_state_layout():
    table = np.array([[1, 1, 1, 1, 1], [0, 0, 0, 0, 0]], dtype=float)
    assert model_state(table).tolist() == [1, 1, 1, 1, 1, 0, 0, 0, 0, 0]


def test_model_state_locality():
    table = np.zeros((4, 5))
    base = model_state(table)
    table[2, 3] = 0.5
    changed = model_state(table)
    diff = np.nonzero(changed != base)[0]
    assert diff.tolist() == [2 * 5 + 3]


def test_model_state_rejects_bad_shape():
    with pytest.raises(ValueError):
        model_state(np.zeros((4, 4)))
    with pytest.raises(ValueError):
        model_state(np.full((2, 5), 1.5))


def test_lal_features_layout():
    state = np.zeros(100)
    features = lal_features(state, 0.0)
    assert features.shape == (101,)
    assert not features.any()
    features = lal_features(np.linspace(0, 1, 100), 0.37)
    assert features[-1] == pytest.approx(0.37)
    assert features.shape == (5 * 20 + 1,)
