import logging

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import rel_err
from profilekt.analyst import (
    AnalystPolicy,
    DistillConfig,
    SlotLabels,
    distill_fit,
    extract_kc_stats,
    profile_to_labels,
    sample_profile,
    weighted_nll_grad,
)
from profilekt.data import assign_difficulty, build_sequences, segment_and_filter, split_dataset
from profilekt.iteration import (
    IterationConfig,
    KTOInstance,
    compute_reward,
    greedy_features,
    kto_loss,
    kto_objective,
    kto_step,
    retrain_predictor,
    run_iterations,
)
from profilekt.pipeline import Banks, StageConfig, distill_stage, run_all, train_stage
from profilekt.predictor import DIM, PredictorModel, TrainConfig, featurize, mean_bce
from profilekt.synth import CohortConfig, generate_cohort


@pytest.fixture(scope="module")
def split():
    cohort = generate_cohort(24, CohortConfig(n_steps=(110, 160)), seed=3)
    windows = segment_and_filter(build_sequences(r for t in cohort for r in t.sequence.records))
    return assign_difficulty(split_dataset(windows, seed=0))


@pytest.fixture(scope="module")
def banks(split):
    return Banks.from_split(split)


@pytest.fixture(scope="module")
def distilled(banks):
    return distill_stage(banks.train, StageConfig(distill_samples=500))[0]


def fake_instance(reward, log_prob):
    return KTOInstance("w", 5, True, None, log_prob, 0.5, True, reward)


def biased_predictor(sign):
    w = np.zeros(DIM)
    w[0] = 50.0 * sign
    return PredictorModel(w)


def labels_of(records):
    labs = [profile_to_labels(r.profile) for r in records]
    return SlotLabels(*(np.concatenate([getattr(l, f) for l in labs]) for f in ("mastery", "trend", "outlook")))


@pytest.mark.parametrize("pred, truth, r", [(True, True, 1), (False, False, 1), (True, False, -1), (False, True, -1)])
def test_reward_table(pred, truth, r):
    assert compute_reward(pred, truth) == r


def test_kto_loss_examples():
    assert kto_loss([fake_instance(1, -2.0)]) == 2.0
    assert kto_loss([fake_instance(-1, -2.0)]) == -2.0
    assert kto_loss([fake_instance(1, -2.0), fake_instance(-1, -2.0)]) == 0.0


@given(st.lists(st.tuples(st.sampled_from([-1, 1]), st.floats(-50, 0)), max_size=20),
       st.lists(st.tuples(st.sampled_from([-1, 1]), st.floats(-50, 0)), max_size=20))
def test_kto_loss_additive(a, b):
    A = [fake_instance(r, lp) for r, lp in a]
    B = [fake_instance(r, lp) for r, lp in b]
    assert kto_loss(A + B) == pytest.approx(kto_loss(A) + kto_loss(B), abs=1e-9)


def test_bank_matches_scalar_path(split, banks, distilled):
    """Vectorised profiles and features equal the per-instance definitions."""
    bank = banks.train
    labels = bank.labels(distilled)
    X = bank.features(labels)
    windows = {w.window_id: w for w in split.train}
    for i in np.random.default_rng(0).choice(len(bank), 40, replace=False):
        w = windows[bank.window_ids[i]]
        t = int(bank.history_len[i])
        hist, target = w.records[:t], w.records[t]
        stats = extract_kc_stats(hist)
        nq = bank.next_q[i]
        assert stats == bank.stats[i] and nq.kc_ids == target.kc_ids and bank.y[i] == target.correct
        prof, _ = sample_profile(distilled, stats, nq, None, greedy=True)
        assert prof.labels() == bank.profile(i, labels).labels()
        np.testing.assert_allclose(X[i], featurize(hist, prof, nq), atol=1e-15)
        np.testing.assert_allclose(bank.features(None)[i], featurize(hist, None, nq), atol=1e-15)


def test_validation_and_test_use_final_positions(split, banks):
    assert len(banks.validation) == len(split.validation)
    assert list(banks.test.history_len) == [len(w.records) - 1 for w in split.test]
    assert banks.train.history_len.min() >= 4


@pytest.mark.parametrize("sign", [1, -1])
def test_kto_step_direction(banks, distilled, sign):
    batch = banks.train.take(np.flatnonzero(banks.train.y == 1)[:32])
    new, recs = kto_step(distilled, biased_predictor(sign), batch, lr=1e-3, rng=np.random.default_rng(4))
    assert {r.reward for r in recs} == {sign}
    labels = labels_of(recs)
    before = sum(r.log_prob for r in recs)
    after = kto_objective(new, batch, labels, -np.ones(len(batch)))
    assert (after - before) * sign > 0


def test_kto_step_with_all_positive_rewards_is_a_likelihood_step(banks, distilled):
    batch = banks.train.take(np.flatnonzero(banks.train.y == 1)[:20])
    lr = 3e-3
    new, recs = kto_step(distilled, biased_predictor(1), batch, lr, np.random.default_rng(8))
    ml, _ = distill_fit(distilled, batch.slots, labels_of(recs),
                        DistillConfig(epochs=1, lr=lr, warmup_ratio=0.0, batch_size=len(batch)))
    assert np.array_equal(new.flat(), ml.flat())


def test_kto_gradient_finite_differences(banks):
    rng = np.random.default_rng(2)
    for _ in range(10):
        batch = banks.train.take(rng.choice(len(banks.train), 3, replace=False))
        pol = AnalystPolicy(rng.normal(size=(5, 8)), rng.normal(size=(3, 8)), rng.normal(size=(4, 8)))
        labels = batch.labels(pol, rng, greedy=False)
        rewards = rng.choice([-1.0, 1.0], 3)
        # -sum(r log pi) is the r-weighted negative log-likelihood
        analytic = np.concatenate([x.ravel() for x in weighted_nll_grad(pol, batch.slots, labels, rewards)])
        theta, h = pol.flat(), 1e-6
        numeric = np.array([(kto_objective(pol.with_flat(theta + h * e), batch, labels, rewards)
                             - kto_objective(pol.with_flat(theta - h * e), batch, labels, rewards)) / (2 * h)
                            for e in np.eye(len(theta))])
        assert rel_err(analytic, numeric) < 1e-5


def test_kto_step_empty_batch_and_frozen_predictor(banks, distilled):
    pred = PredictorModel(np.linspace(-1, 1, DIM))
    w = pred.w.copy()
    same, recs = kto_step(distilled, pred, banks.train.take([]), 0.1, np.random.default_rng(0))
    assert same is distilled and recs == []
    kto_step(distilled, pred, banks.train.take(range(10)), 0.1, np.random.default_rng(0))
    assert np.array_equal(pred.w, w)


def test_kto_step_deterministic(banks, distilled):
    batch = banks.train.take(range(16))
    pred = PredictorModel(np.linspace(-1, 1, DIM))
    a, ra = kto_step(distilled, pred, batch, 0.01, np.random.default_rng(5))
    b, rb = kto_step(distilled, pred, batch, 0.01, np.random.default_rng(5))
    assert np.array_equal(a.flat(), b.flat()) and [r.reward for r in ra] == [r.reward for r in rb]


def test_retrain_predictor(banks, distilled):
    cfg = TrainConfig(epochs=3)
    before = distilled.flat().copy()
    a = retrain_predictor(distilled, banks.train, cfg)
    b = retrain_predictor(distilled, banks.train, cfg)
    assert np.array_equal(a.w, b.w)
    assert np.array_equal(distilled.flat(), before)
    X = greedy_features(distilled, banks.train)
    stale = PredictorModel(np.linspace(-0.5, 0.5, DIM))
    assert mean_bce(a, X, banks.train.y) <= mean_bce(stale, X, banks.train.y)
    assert np.array_equal(X, banks.train.features(banks.train.labels(distilled, greedy=True)))


def test_zero_rounds_returns_inputs(banks, distilled):
    pred = train_stage(distilled, banks.train, TrainConfig(epochs=2))
    pol, p2, trace = run_iterations(distilled, pred, banks.train, banks.validation, IterationConfig(rounds=0))
    assert pol is distilled and p2 is pred and trace.rounds == []


def test_rounds_trace_and_determinism(banks, distilled):
    pred = train_stage(distilled, banks.train, TrainConfig(epochs=2))
    cfg = IterationConfig(rounds=2, k=64, passes=2)
    seen = []
    a = run_iterations(distilled, pred, banks.train, banks.validation, cfg, TrainConfig(epochs=2),
                       on_round=lambda r, *_: seen.append(r))
    b = run_iterations(distilled, pred, banks.train, banks.validation, cfg, TrainConfig(epochs=2))
    assert len(a[2].rounds) == 2 and seen == [0, 1, 2]
    assert np.array_equal(a[0].flat(), b[0].flat()) and np.array_equal(a[1].w, b[1].w)
    assert a[2].to_jsonl() == b[2].to_jsonl()
    assert all(r.n_sampled == 64 * 2 for r in a[2].rounds)


def test_k_is_clamped(banks, distilled, caplog):
    small = banks.train.take(range(40))
    with caplog.at_level(logging.WARNING):
        _, _, trace = run_iterations(distilled, PredictorModel.zeros(), small, banks.validation,
                                     IterationConfig(rounds=1, k=1000, passes=1), TrainConfig(epochs=1))
    assert "clamping" in caplog.text and trace.rounds[0].n_sampled == 40


def test_config_validation():
    with pytest.raises(ValueError):
        IterationConfig(rounds=-1)
    with pytest.raises(ValueError):
        IterationConfig(k=0)


def test_run_all_keeps_best_validation_checkpoint(banks):
    cfg = StageConfig(distill_samples=400, predictor=TrainConfig(epochs=2),
                      iteration=IterationConfig(rounds=2, k=100, passes=2))
    res = run_all(banks, cfg)
    curve = res.trace.val_acc_curve()
    assert res.best_round == int(np.argmax(curve))
    if res.best_round == 0:
        assert res.policy is res.distilled and res.predictor is res.stage3_predictor
