from __future__ import annotations

import math

import numpy as np
import pytest

from shiftadapt.awe import AWE, AweConfig, InstancePool, run
from shiftadapt.baselines import (
    SAOL,
    BaseOL,
    BaselineSpec,
    MajorityVote,
    OracleRestart,
    SingleResolution,
    majority,
    post_shift_rounds,
    saol_rate,
)
from shiftadapt.intervals import Interval, gc_intervals, mri_intervals
from shiftadapt.learners import LearnerSpec
from shiftadapt.streams import PiecewiseDrift, RoundBatch, StreamSpec, generate, permuted_segments

LEARNER = LearnerSpec(K=4, D=2, lr=0.05, epochs=1)


def stream(T=16, boundaries=(9,), seed=0, noise=0.5):
    means = permuted_segments(4, len(boundaries) + 1, seed)
    return generate(StreamSpec(T, 20, 10, 4, 2, PiecewiseDrift(boundaries, means, noise), seed))


class TestBaseOL:
    def test_trains_every_round(self):
        b = BaseOL(16, LEARNER, 0)
        run(b, stream())
        assert b.learner.batches_seen == 16

    def test_empty_fold_rejected(self):
        b = BaseOL(4, LEARNER, 0)
        with pytest.raises(ValueError):
            b.step(RoundBatch(1, np.zeros((0, 2)), np.zeros(0, int), np.zeros((1, 2)), np.zeros(1, int)))


class TestOracleRestart:
    def test_single_segment_equals_base(self):
        batches = stream(boundaries=())
        a = [m.accuracy for m in run(OracleRestart(16, LEARNER, 1), batches)]
        b = [m.accuracy for m in run(BaseOL(16, LEARNER, 1), batches)]
        assert a == b

    def test_reset_at_boundary(self):
        batches = stream(boundaries=(9,))
        o = OracleRestart(16, LEARNER, 0)
        for batch in batches[:8]:
            o.step(batch)
        assert o.learner.batches_seen == 8
        o.step(batches[8])
        # Reset happened before round 9 was scored, then one batch was observed.
        assert o.restarts == 1 and o.learner.batches_seen == 1

    def test_state_at_boundary_is_fresh(self):
        batches = stream(boundaries=(9,))
        o = OracleRestart(16, LEARNER, 0)
        for batch in batches[:8]:
            o.step(batch)
        X = batches[8].X
        pre = o.learner.predict(X)
        m = o.step(batches[8])
        assert m.accuracy == np.mean(batches[8].y == 0)
        assert np.any(pre != 0)

    def test_needs_ground_truth(self):
        b = RoundBatch(1, np.zeros((1, 2)), np.zeros(1, int), np.zeros((1, 2)), np.zeros(1, int))
        with pytest.raises(ValueError):
            OracleRestart(4, LEARNER, 0).step(b)


class TestSaol:
    def test_rate(self):
        assert saol_rate(Interval(1, 1, 0, "GC", 1)) == 0.5
        assert saol_rate(Interval(8, 15, 3, "GC", 1)) == pytest.approx(1 / math.sqrt(8))

    def test_active_experts_at_nine(self):
        s = SAOL(10, LEARNER, 0)
        for batch in stream(T=10, boundaries=(2,))[:8]:
            s.step(batch)
        assert {(r.interval.start, r.interval.end) for r in s.pool.members()} == {(9, 9), (8, 9), (8, 11), (8, 15)}

    def test_single_instance_is_pass_through(self):
        s = SAOL(1, LEARNER, 0)
        (only,) = s.pool.members()
        X = np.random.default_rng(0).normal(size=(6, 2))
        assert np.array_equal(s.predict(X), only.predict(X))

    def test_weights_positive_and_normalised(self):
        s = SAOL(16, LEARNER, 0)
        for batch in stream()[:-1]:
            s.step(batch)
            w = s.normalized_weights()
            assert all(v > 0 and math.isfinite(v) for v in s.weights.values())
            assert sum(w.values()) == pytest.approx(1.0)
            assert set(w) == set(s.pool.live)

    def test_multiplicative_update(self):
        s = SAOL(4, LEARNER, 0)
        batch = stream(T=4, boundaries=())[0]
        members = s.pool.members()
        before = {r.id: s.weights[r.id] for r in members}
        meta = np.mean(s.predict(batch.X) == batch.y)
        rewards = {r.id: np.mean(r.predict(batch.X) == batch.y) for r in members}
        s.step(batch)
        for r in members:
            if r.id in s.weights and r.interval.end > 1:
                expect = before[r.id] * (1 + saol_rate(r.interval) * max(-1, min(1, rewards[r.id] - meta)))
                assert s.weights[r.id] == pytest.approx(expect)

    def test_new_expert_entry_weight(self):
        s = SAOL(8, LEARNER, 0)
        s.step(stream(T=8, boundaries=())[0])
        new = [r for r in s.pool.members() if r.interval.start == 2]
        assert new and all(s.weights[r.id] == saol_rate(r.interval) for r in new)


class TestPostShiftBookkeeping:
    def test_gc_vs_mri_at_ten(self):
        N = 1
        gc = InstancePool(gc_intervals(10), LearnerSpec(K=2, D=1), 0)
        mri = InstancePool(mri_intervals(10), LearnerSpec(K=2, D=1), 0)
        for _ in range(8):
            for pool in (gc, mri):
                pool.train(np.zeros((N, 1)), [0] * N)
                pool.advance()
        assert gc.cursor == mri.cursor == 9
        gc_best = max(post_shift_rounds(gc, 2).values()) * N
        mri_best = max(post_shift_rounds(mri, 2).values()) * N
        assert gc_best <= N
        assert mri_best >= 7 * N / 4


class TestMajority:
    def test_all_agree(self):
        assert majority(np.array([[2, 1], [2, 1], [2, 1]]), 3).tolist() == [2, 1]

    def test_two_to_one(self):
        assert majority(np.array([[0], [0], [1]]), 2).tolist() == [0]

    def test_tie_to_smallest(self):
        assert majority(np.array([[3], [1]]), 4).tolist() == [1]

    def test_vote_uses_live_instances(self):
        cfg = AweConfig(16, LEARNER, slack=0.1)
        mv = MajorityVote(cfg, 0)
        batches = stream()
        for b in batches[:5]:
            mv.step(b)
        X = batches[5].X
        labels = np.stack([r.predict(X) for r in mv.pool.members()])
        assert np.array_equal(mv.predict(X), majority(labels, 4))
        assert mv.current_id == "vote"


class TestSingleResolution:
    @pytest.mark.parametrize("i", [1, 2, 3, 4])
    def test_at_most_three_active(self, i):
        sr = SingleResolution(AweConfig(16, LEARNER, slack=0.1, check_invariants=True), i, 0)
        for m in run(sr, stream()):
            assert m.active_size <= 3
        assert sr.name == f"single_res_{i}"

    def test_resolution_one_pool(self):
        sr = SingleResolution(AweConfig(16, LEARNER, slack=0.1), 1, 0)
        for b in stream()[:9]:
            sr.step(b)
        assert {(r.interval.family, r.interval.start) for r in sr.pool.members()} == {("R", 1), ("B", 9)}

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            BaselineSpec("single_resolution", 5).build(AweConfig(16, LEARNER), 0)


class TestSpec:
    def test_names(self):
        assert BaselineSpec("single_resolution", 2).name == "single_res_2"
        assert BaselineSpec("saol_gc").name == "saol_gc"

    def test_unknown(self):
        with pytest.raises(ValueError):
            BaselineSpec("ewc")

    def test_missing_resolution(self):
        with pytest.raises(ValueError):
            BaselineSpec("single_resolution")

    @pytest.mark.parametrize("kind", ["base_ol", "oracle_restart", "saol_gc", "majority_vote"])
    def test_build(self, kind):
        m = BaselineSpec(kind).build(AweConfig(16, LEARNER), 0)
        assert m.name == kind


def test_all_methods_share_batches():
    cfg = AweConfig(16, LEARNER, slack=0.1)
    batches = stream()
    snapshot = [(b.train_X.copy(), b.holdout_y.copy()) for b in batches]
    for m in [AWE(cfg, 0), BaseOL(16, LEARNER, 0), SAOL(16, LEARNER, 0), MajorityVote(cfg, 0)]:
        run(m, batches)
    assert all(np.array_equal(a, b.train_X) and np.array_equal(c, b.holdout_y) for (a, c), b in zip(snapshot, batches))
