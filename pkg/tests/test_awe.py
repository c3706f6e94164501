from __future__ import annotations

import numpy as np
import pytest

from shiftadapt.awe import (
    AWE,
    ROOT_KEY,
    AweConfig,
    EnsembleModel,
    InstancePool,
    InstanceRecord,
    instance_seed,
    refine_accuracy_of_ensemble,
    run,
)
from shiftadapt.baselines import BaseOL
from shiftadapt.cvtt import CvttConfig, HoldoutStore, refine_accuracy
from shiftadapt.intervals import Interval, active, mri_intervals
from shiftadapt.learners import LearnerSpec, OnlineLearner, new_instance
from shiftadapt.streams import PiecewiseDrift, RoundBatch, StreamSpec, generate, permuted_segments


def stream(T=16, noise=0.5, boundaries=None, seed=0, n=20, m=10):
    boundaries = boundaries if boundaries is not None else ((T // 2 + 1,) if T >= 4 else ())
    means = permuted_segments(4, len(boundaries) + 1, seed)
    return generate(StreamSpec(T, n, m, 4, 2, PiecewiseDrift(boundaries, means, noise), seed))


def config(T=16, **kw):
    learner = kw.pop("learner", LearnerSpec(K=4, D=2, lr=0.05, epochs=1))
    return AweConfig(T=T, learner=learner, slack=kw.pop("slack", 0.1), **kw)


class Fixed(OnlineLearner):
    """Test double returning constant scores."""

    def __init__(self, scores):
        super().__init__(LearnerSpec(K=len(scores), D=1), 0)
        self.scores = np.asarray(scores, dtype=float)

    def _scores(self, X):
        return np.tile(self.scores, (X.shape[0], 1))

    def params(self):
        return [self.scores]


def record(scores, start=1, k=1):
    return InstanceRecord(Interval(start, 16, 1, "R", k), Fixed(scores))


class TestInit:
    def test_active_one_is_the_r_intervals(self):
        a = AWE(config(16))
        spans = sorted((r.interval.start, r.interval.end) for r in a.pool.members())
        assert spans == [(1, 2), (1, 4), (1, 8), (1, 16)]
        assert all(r.interval.family == "R" for r in a.pool.members())
        assert (a.current.interval.start, a.current.interval.end) == (1, 16)

    def test_first_prediction_is_class_zero(self):
        a = AWE(config(16))
        X = np.random.default_rng(0).normal(size=(12, 2))
        assert a.predict(X).tolist() == [0] * 12

    def test_digest_determinism(self):
        assert AWE(config(16), seed=3).digest() == AWE(config(16), seed=3).digest()

    @pytest.mark.parametrize("kw", [dict(p=1.0), dict(delta=0.0), dict(ensemble_mode="max"), dict(resolutions=(9,))])
    def test_invalid_config(self, kw):
        with pytest.raises(ValueError):
            config(16, **kw)


class TestEnsemble:
    def test_weighted_arithmetic(self):
        e = EnsembleModel([record([2.0, 1.0]), record([0.0, 3.0], k=2)], [0.9, 0.5])
        np.testing.assert_allclose(e.predict_scores(np.zeros((1, 1))), [[1.8, 2.4]])
        assert e.predict(np.zeros((1, 1))).tolist() == [1]

    def test_zero_weight_member_is_ignored(self):
        a, b = record([2.0, 1.0]), record([0.0, 3.0], k=2)
        assert EnsembleModel([a, b], [0.0, 0.7]).predict(np.zeros((3, 1))).tolist() == [1, 1, 1]

    def test_softmax_mode(self):
        e = EnsembleModel([record([10.0, 0.0]), record([0.0, 1.0], k=2)], [0.5, 0.6], mode="softmax")
        # Softmax caps the confident member at probability ~1.
        assert e.predict(np.zeros((1, 1))).tolist() == [0]

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            EnsembleModel([record([1.0, 0.0])], [0.5, 0.5])

    def test_single_member_estimate_matches(self):
        rng = np.random.default_rng(1)
        store = HoldoutStore()
        for t in range(1, 9):
            store.append(t, rng.normal(size=(10, 2)), rng.integers(0, 3, 10))
        m = new_instance(LearnerSpec(K=3, D=2), 0)
        m.observe(rng.normal(size=(30, 2)), rng.integers(0, 3, 30))
        rec = InstanceRecord(Interval(1, 8, 1, "R", 1), m)
        cfg = CvttConfig(0.1, 8, 0.1)
        e = refine_accuracy_of_ensemble(EnsembleModel([rec], [0.7]), store, 8, cfg)
        s = refine_accuracy(m, store, 8, cfg)
        assert (e.value, e.window_rounds) == (s.value, s.window_rounds)

    def test_disagreeing_members_brute_force(self):
        rng = np.random.default_rng(2)
        store = HoldoutStore()
        for t in range(1, 5):
            store.append(t, rng.normal(size=(15, 2)), rng.integers(0, 3, 15))
        ms = [new_instance(LearnerSpec(K=3, D=2, init_scale=1.0), s) for s in (1, 2)]
        recs = [InstanceRecord(Interval(1, 4, 1, "R", i + 1), m) for i, m in enumerate(ms)]
        ens = EnsembleModel(recs, [0.9, 0.5])
        X, y = store.window(4, 1)
        brute = np.argmax(0.9 * ms[0].predict_scores(X) + 0.5 * ms[1].predict_scores(X), axis=1)
        assert np.array_equal(ens.predict(X), brute)
        assert np.any(ms[0].predict(X) != ms[1].predict(X))
        est = refine_accuracy_of_ensemble(ens, store, 4, CvttConfig(0.1, 4, 0.1))
        Xw, yw = store.window(4, est.window_rounds)
        brute_w = np.argmax(0.9 * ms[0].predict_scores(Xw) + 0.5 * ms[1].predict_scores(Xw), axis=1)
        assert est.value == np.mean(brute_w == yw)


class TestStep:
    def test_invariant_mode_runs_clean(self):
        a = AWE(config(32, check_invariants=True), seed=1)
        for m in run(a, stream(32)):
            assert m.active_size <= 3 * 5
        assert a.pool.cursor == 33 and not a.pool.live
        a.pool.check()

    def test_weights_are_estimates(self):
        a = AWE(config(16), seed=0)
        batches = stream(16)
        for b in batches[:-1]:
            m = a.step(b)
            assert set(m.weights) == set(m.estimates) == {r.label for r in a.pool.members()}
            assert all(m.weights[k] == m.estimates[k].value for k in m.weights)

    def test_weight_floor(self):
        a = AWE(config(16, weight_floor=True), seed=0)
        m = a.step(stream(16)[0])
        assert min(m.weights.values()) >= 0.25

    def test_rejects_out_of_order(self):
        a = AWE(config(16))
        batches = stream(16)
        with pytest.raises(ValueError):
            a.step(batches[1])

    def test_rejects_past_horizon(self):
        a = AWE(config(4))
        for b in stream(4):
            a.step(b)
        b5 = RoundBatch(5, np.zeros((1, 2)), np.zeros(1, int), np.zeros((1, 2)), np.zeros(1, int))
        with pytest.raises(ValueError):
            a.step(b5)

    def test_rejects_empty_training_fold(self):
        a = AWE(config(4))
        b = RoundBatch(1, np.zeros((0, 2)), np.zeros(0, int), np.zeros((1, 2)), np.zeros(1, int))
        with pytest.raises(ValueError):
            a.step(b)

    def test_retired_instances_are_gone(self):
        a = AWE(config(16))
        batches = stream(16)
        for b in batches[:2]:
            a.step(b)
        assert ("R", 4, 1) not in a.pool.live  # [1, 2] ended at round 2

    def test_shift_shortens_windows(self):
        cfg = config(32, learner=LearnerSpec(K=4, D=2, lr=0.02, epochs=1))
        a = AWE(cfg, seed=0)
        batches = stream(32, n=100, m=50, noise=0.4, boundaries=(17,))
        ms = run(a, batches)
        assert ms[15].window_rounds >= 8
        assert min(m.window_rounds for m in ms[17:20]) <= 2

    def test_stationary_accuracy_near_bayes(self):
        cfg = config(32, learner=LearnerSpec(K=4, D=2, lr=0.05, epochs=1))
        ms = run(AWE(cfg, seed=0), stream(32, n=100, m=50, noise=0.5, boundaries=()))
        # Bayes accuracy for this mixture is about 0.995.
        assert np.mean([m.accuracy for m in ms[8:]]) > 0.97
        assert ms[-1].window_rounds >= 8


def test_base_ol_matches_root_instance():
    cfg = config(16)
    a, b = AWE(cfg, seed=4), BaseOL(16, cfg.learner, 4)
    X = np.random.default_rng(9).normal(size=(25, 2))
    for batch in stream(16, seed=4):
        a.step(batch)
        b.step(batch)
        if ROOT_KEY in a.pool.live:
            root = a.pool.live[ROOT_KEY].learner
            assert np.array_equal(root.predict_scores(X), b.learner.predict_scores(X))


def test_no_label_leakage():
    cfg = config(16)
    batches = stream(16, seed=2)
    for i in (0, 5, 9, 12):
        a, b = _trained(cfg, 2, batches[:i]), _trained(cfg, 2, batches[:i])
        batch = batches[i]
        shuffled = RoundBatch(
            batch.t,
            batch.train_X,
            np.random.default_rng(i).permutation(batch.train_y),
            batch.holdout_X,
            np.random.default_rng(i + 100).permutation(batch.holdout_y),
            batch.distribution_id,
        )
        before = a.predict(batch.X)
        assert np.array_equal(before, b.predict(batch.X))
        # Round-t accuracy is scored with the pre-update model whatever the labels are.
        assert a.step(batch).accuracy == np.mean(before == batch.y)
        assert b.step(shuffled).accuracy == np.mean(before == shuffled.y)


def _trained(cfg, seed, batches):
    m = AWE(cfg, seed=seed)
    for b in batches:
        m.step(b)
    return m


@pytest.mark.parametrize("T", [8, 16, 32])
def test_replay_equivalence(T):
    cfg = config(T)
    batches = stream(T, seed=T)
    a = AWE(cfg, seed=5)
    X = np.random.default_rng(0).normal(size=(40, 2))
    for batch in batches:
        a.step(batch)
        if a.t > T:
            break
        for rec in a.pool.members():
            fresh = new_instance(cfg.learner, instance_seed(5, rec.id))
            for s in range(rec.interval.start, a.t):
                fresh.observe(batches[s - 1].train_X, batches[s - 1].train_y)
            assert np.array_equal(fresh.predict_scores(X), rec.predict_scores(X)), rec.label


def test_pool_matches_active_each_round():
    sched = mri_intervals(16)
    pool = InstancePool(sched, LearnerSpec(K=2, D=1), 0)
    for t in range(1, 17):
        assert {r.id for r in pool.members()} == {u.key for u in active(sched, t)}
        pool.check()
        pool.train(np.zeros((1, 1)), [0])
        pool.advance()
    assert not pool.live
