import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import CONVERSION, TABLE, rel_err
from profilekt.analyst import KCAssessment, NextQuestion, StructuredProfile
from profilekt.predictor import (
    DIM,
    PredictorModel,
    TrainConfig,
    bce_grad,
    bce_loss,
    featurize,
    mean_bce,
    predict,
    predict_proba,
    train,
)


def test_no_profile_zeroes_block(case_history):
    x = featurize(case_history, None, NextQuestion((CONVERSION,), 0.16))
    assert x.shape == (18,) and not x[6:].any()


def test_case_study_base_features(case_history):
    x = featurize(case_history, None, NextQuestion((CONVERSION,), 0.16))
    np.testing.assert_allclose(x[:6], [1, 4 / 11, 1 / 2, 0.16, 11 / 50, 0], atol=1e-15)


def test_struggling_onehot(case_history):
    prof = StructuredProfile([KCAssessment(TABLE, "Struggling", "Declining")], "Challenge")
    x = featurize(case_history, prof, NextQuestion((TABLE,), 0.5))
    assert list(x[6:11]) == [1, 0, 0, 0, 0]
    assert list(x[11:14]) == [1, 0, 0] and list(x[14:18]) == [1, 0, 0, 0]


@given(st.sampled_from(["Struggling", "Mastered"]), st.sampled_from(["Flat", "Improving"]),
       st.sampled_from(["Stretch", "Confident"]), st.booleans())
def test_onehot_blocks_sum_to_one(m, t, o, seen):
    from conftest import make_records
    hist = make_records([("A", 0.2, True), ("B", 0.3, False)])
    prof = StructuredProfile([KCAssessment("A", m, t), KCAssessment("B", m, t)], o)
    x = featurize(hist, prof, NextQuestion(("A" if seen else "Z", "B"), 0.4))
    assert x[6:11].sum() == x[11:14].sum() == x[14:18].sum() == 1


def test_multi_kc_target_uses_first(case_history):
    a = featurize(case_history, None, NextQuestion((TABLE, CONVERSION), 0.3))
    assert a[2] == 0.0  # Table: 0 of 3


def test_predict_examples():
    x = np.zeros(DIM)
    x[0] = 1.0
    out = predict(PredictorModel.zeros(), x)
    assert out.probability == 0.5 and out.label is True
    w = np.zeros(DIM)
    w[0] = math.log(3)
    assert predict(PredictorModel(w), x).probability == pytest.approx(0.75, abs=1e-15)


@given(arrays(float, DIM, elements=st.floats(-5, 5)), arrays(float, DIM, elements=st.floats(-1, 1)))
def test_negated_weights_complement(w, x):
    p = predict(PredictorModel(w), x).probability
    q = predict(PredictorModel(-w), x).probability
    assert p + q == pytest.approx(1.0, abs=1e-12)
    assert predict(PredictorModel(w), x).probability == p


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        predict(PredictorModel.zeros(), np.zeros(DIM - 1))
    with pytest.raises(ValueError):
        PredictorModel(np.zeros(3))


def test_bce_examples():
    assert bce_loss(0.5, 1) == pytest.approx(math.log(2), abs=1e-12)
    assert bce_loss(1.0, 1) == pytest.approx(0.0, abs=1e-11)
    assert bce_loss(0.75, 0) == pytest.approx(math.log(4), abs=1e-12)
    assert np.isfinite(bce_loss(0.0, 1))


def test_gradient_finite_differences():
    rng = np.random.default_rng(0)
    for _ in range(50):
        X, y, w = rng.normal(size=(7, DIM)), (rng.random(7) < .5).astype(float), rng.normal(size=DIM)
        h = 1e-6
        numeric = np.array([(mean_bce(PredictorModel(w + h * e), X, y) - mean_bce(PredictorModel(w - h * e), X, y))
                            / (2 * h) for e in np.eye(DIM)])
        assert rel_err(bce_grad(w, X, y), numeric) < 1e-5


def _toy(n=200, seed=0):
    rng = np.random.default_rng(seed)
    X = np.zeros((n, DIM))
    X[:, 0] = 1
    X[:, 1] = rng.uniform(-1, 1, n)
    X[:, 2] = rng.uniform(-1, 1, n)
    score = X[:, 1] + 0.5 * X[:, 2] - 0.1
    keep = np.abs(score) > 0.1  # margin, so the set is cleanly separable
    return X[keep], (score[keep] > 0).astype(float)


def test_separable_set_reaches_full_accuracy():
    X, y = _toy()
    model, losses = train(PredictorModel.zeros(), X, y, TrainConfig(epochs=300, lr=1.0))
    assert np.mean((predict_proba(model, X) >= 0.5) == (y > 0.5)) == 1.0
    assert losses[-1] < losses[0]


def test_full_batch_loss_never_increases():
    X, y = _toy(seed=3)
    _, losses = train(PredictorModel.zeros(), X, y, TrainConfig(epochs=50, lr=0.1, warmup_ratio=0, batch_size=10**6))
    assert all(b <= a + 1e-9 for a, b in zip(losses, losses[1:]))
    assert losses[-1] <= mean_bce(PredictorModel.zeros(), X, y)


def test_zero_epochs_unchanged():
    X, y = _toy()
    w = np.arange(DIM, dtype=float) / 100
    model, losses = train(PredictorModel(w), X, y, TrainConfig(epochs=0))
    assert np.array_equal(model.w, w) and losses == []


def test_training_deterministic():
    X, y = _toy()
    a, _ = train(PredictorModel.zeros(), X, y, TrainConfig(seed=5))
    b, _ = train(PredictorModel.zeros(), X, y, TrainConfig(seed=5))
    assert np.array_equal(a.w, b.w)


def test_empty_training_set():
    with pytest.raises(ValueError):
        train(PredictorModel.zeros(), np.zeros((0, DIM)), np.zeros(0))


def test_serialisation_and_schema_guard():
    m = PredictorModel(np.linspace(-1, 1, DIM))
    assert np.array_equal(PredictorModel.from_json(m.to_json()).w, m.w)
    d = json.loads(m.to_json())
    d["schema"] = "something-else/v0"
    with pytest.raises(ValueError):
        PredictorModel.from_json(json.dumps(d))


def test_mean_bce_matches_probability_form_and_survives_saturation():
    rng = np.random.default_rng(3)
    X, y, w = rng.normal(size=(9, DIM)), (rng.random(9) < .5).astype(float), rng.normal(size=DIM)
    direct = float(np.mean(bce_loss(1 / (1 + np.exp(-(X @ w))), y)))
    assert mean_bce(PredictorModel(w), X, y) == pytest.approx(direct, rel=1e-12)
    # logit 200 on a negative label costs 200 nats, not the clipped -log(EPS)
    x = np.zeros((1, DIM))
    x[0, 0] = 1.0
    w = np.zeros(DIM)
    w[0] = 200.0
    assert mean_bce(PredictorModel(w), x, np.array([0.0])) == pytest.approx(200.0)
