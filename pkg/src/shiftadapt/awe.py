"""Accuracy-weighted ensembling over multi-resolution learner instances.

Per round ``t`` the deployed model predicts the whole batch, then:

1. the hold-out fold is archived;
2. every instance whose interval contains ``t`` trains on the training fold;
3. instances for ``ACTIVE(t+1)`` are spawned, ended ones retired;
4. each live instance gets a refined accuracy estimate on hold-out data
   through ``t``;
5. the estimates become ensemble weights on the members' scores;
6. the ensemble replaces the best single instance only if its own refined
   accuracy is strictly higher.
"""

from __future__ import annotations

import hashlib
import zlib
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .cvtt import AccuracyEstimate, CvttConfig, HoldoutStore, RoundTally, refine_from_tally
from .intervals import Horizon, Interval, Schedule, active, mri_intervals
from .learners import LearnerSpec, OnlineLearner, new_instance, predict_labels, softmax
from .streams import RoundBatch

ENSEMBLE_MODES = ("raw", "softmax")


def instance_seed(seed: int, key: tuple) -> int:
    """Learner seed for the instance ``key = (family, resolution, k)`` of a run."""
    family, resolution, k = key
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, zlib.crc32(str(family).encode()), int(resolution), int(k)])
    return int(ss.generate_state(1, np.uint64)[0])


ROOT_KEY = ("R", 1, 1)


@dataclass
class InstanceRecord:
    interval: Interval
    learner: OnlineLearner
    rounds_trained: int = 0

    @property
    def id(self) -> tuple:
        return self.interval.key

    @property
    def label(self) -> str:
        return self.interval.label()

    def predict_scores(self, X) -> np.ndarray:
        return self.learner.predict_scores(X)

    def predict(self, X) -> np.ndarray:
        return self.learner.predict(X)


class InstancePool:
    """Learner instances tied to a schedule: spawned at interval start, dropped after end."""

    def __init__(self, schedule: Schedule, spec: LearnerSpec, seed: int):
        self.schedule = schedule
        self.spec = spec
        self.seed = seed
        self.live: dict[tuple, InstanceRecord] = {}
        self.cursor = 1
        for u in active(schedule, 1):
            self._spawn(u)

    def _spawn(self, u: Interval) -> InstanceRecord:
        rec = InstanceRecord(u, new_instance(self.spec, instance_seed(self.seed, u.key)))
        self.live[u.key] = rec
        return rec

    def members(self) -> list[InstanceRecord]:
        """Live instances in canonical interval order."""
        return sorted(self.live.values(), key=lambda r: r.interval.sort_key())

    def train(self, X, y) -> None:
        for rec in self.members():
            rec.learner.observe(X, y)
            rec.rounds_trained += 1

    def advance(self) -> list[InstanceRecord]:
        """Move the cursor to the next round; returns the newly spawned instances."""
        t = self.cursor
        for key in [k for k, r in self.live.items() if r.interval.end <= t]:
            del self.live[key]
        self.cursor = t + 1
        if self.cursor > self.schedule.T:
            return []
        return [self._spawn(u) for u in self.schedule.starting_at(self.cursor)]

    def check(self) -> None:
        """Raise if the live set differs from a from-scratch ACTIVE computation."""
        if self.cursor > self.schedule.T:
            if self.live:
                raise AssertionError("instances alive past the horizon")
            return
        expected = {u.key for u in active(self.schedule, self.cursor)}
        if expected != set(self.live):
            raise AssertionError(
                f"round {self.cursor}: live {sorted(self.live)} != ACTIVE {sorted(expected)}"
            )
        for rec in self.live.values():
            if rec.rounds_trained != self.cursor - rec.interval.start:
                raise AssertionError(f"{rec.label} trained {rec.rounds_trained} rounds at cursor {self.cursor}")


class EnsembleModel:
    """``x -> argmax_k sum_i w_i * score_i[k]`` over live instances."""

    def __init__(self, members: Sequence[InstanceRecord], weights: Sequence[float], mode: str = "raw"):
        if len(members) != len(weights):
            raise ValueError("one weight per member required")
        if mode not in ENSEMBLE_MODES:
            raise ValueError(f"ensemble mode must be one of {ENSEMBLE_MODES}")
        self.members = list(members)
        self.weights = np.asarray(weights, dtype=float)
        self.mode = mode

    label = "E"

    def _member_scores(self, rec: InstanceRecord, X) -> np.ndarray:
        s = rec.predict_scores(X)
        return softmax(s) if self.mode == "softmax" else s

    def combine(self, member_scores: Sequence[np.ndarray]) -> np.ndarray:
        out = np.zeros_like(member_scores[0], dtype=float)
        for w, s in zip(self.weights, member_scores):
            out = out + w * s
        return out

    def predict_scores(self, X) -> np.ndarray:
        return self.combine([self._member_scores(r, X) for r in self.members])

    def predict(self, X) -> np.ndarray:
        return predict_labels(self.predict_scores(X))


@dataclass(frozen=True)
class AweConfig:
    """Settings for one AWE run.

    ``resolutions`` restricts the MRI schedule (single-resolution ablation).
    ``weight_floor`` floors ensemble weights at ``1/K``. ``retention`` caps the
    hold-out archive in rounds. ``check_invariants`` re-derives the live set
    from scratch every round.
    """

    T: int
    learner: LearnerSpec = field(default_factory=LearnerSpec)
    delta: float = 0.1
    p: float = 0.8
    slack: float = 1.0
    ensemble_mode: str = "raw"
    weight_floor: bool = False
    retention: Optional[int] = None
    resolutions: Optional[tuple[int, ...]] = None
    check_invariants: bool = False

    def __post_init__(self):
        if not 0 < self.p < 1:
            raise ValueError("split fraction p must lie in (0, 1)")
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if self.ensemble_mode not in ENSEMBLE_MODES:
            raise ValueError(f"ensemble_mode must be one of {ENSEMBLE_MODES}")
        if self.T < 2:
            raise ValueError("T must be at least 2")
        if self.resolutions is not None:
            M = self.horizon.M
            bad = [i for i in self.resolutions if not 1 <= i <= M]
            if bad or not self.resolutions:
                raise ValueError(f"resolutions must be a non-empty subset of [1, {M}], got {self.resolutions}")

    @property
    def horizon(self) -> Horizon:
        return Horizon(self.T)

    @property
    def cvtt(self) -> CvttConfig:
        return CvttConfig(delta=self.delta, T=self.T, slack=self.slack)

    def schedule(self) -> Schedule:
        sched = mri_intervals(self.horizon)
        return sched.restrict(self.resolutions) if self.resolutions is not None else sched


@dataclass
class RoundMetrics:
    """What one method did in one round.

    ``accuracy`` is measured on the full batch before any training on it.
    ``window_rounds`` is the refined-accuracy window of the deployed model
    (0 when it was not chosen by an estimate).
    """

    t: int
    accuracy: float
    window_rounds: int
    active_size: int
    model_id: str
    weights: dict[str, float] = field(default_factory=dict)
    estimates: dict[str, AccuracyEstimate] = field(default_factory=dict)
    ensemble_estimate: Optional[AccuracyEstimate] = None


def batch_accuracy(labels: np.ndarray, y: np.ndarray) -> float:
    return float(np.count_nonzero(labels == y)) / len(y) if len(y) else 0.0


class AWE:
    """The meta-learner. Call :meth:`predict` for round ``t`` covariates and
    :meth:`step` once the round's labels arrive."""

    name = "awe"

    def __init__(self, config: AweConfig, seed: int = 0, schedule: Optional[Schedule] = None):
        self.config = config
        self.seed = seed
        self.schedule = schedule if schedule is not None else config.schedule()
        self.pool = InstancePool(self.schedule, config.learner, seed)
        self.store = HoldoutStore(config.retention)
        members = self.pool.members()
        # Before any selection: the coarsest R interval starting at round 1.
        first = next((r for r in members if r.interval.family == "R"), members[0])
        self.current: Union[InstanceRecord, EnsembleModel] = first
        self.current_window = 0
        self.last_estimates: dict[tuple, AccuracyEstimate] = {}

    @property
    def t(self) -> int:
        return self.pool.cursor

    @property
    def current_id(self) -> str:
        return self.current.label

    def predict(self, X) -> np.ndarray:
        return self.current.predict(X)

    def _check_batch(self, batch: RoundBatch) -> None:
        if batch.t != self.t:
            raise ValueError(f"batch for round {batch.t} but the cursor is at round {self.t}")
        if batch.t > self.schedule.T:
            raise ValueError(f"round {batch.t} is past the horizon {self.schedule.T}")
        if len(batch.train_y) == 0:
            raise ValueError(f"round {batch.t} has an empty training fold")

    def step(self, batch: RoundBatch) -> RoundMetrics:
        self._check_batch(batch)
        t = batch.t
        if self.config.check_invariants:
            self.pool.check()
        acc = batch_accuracy(self.predict(batch.X), batch.y)
        metrics = RoundMetrics(t, acc, self.current_window, len(self.pool.live), self.current_id)

        self.store.append(t, batch.holdout_X, batch.holdout_y)
        self.pool.train(batch.train_X, batch.train_y)
        self.pool.advance()
        if t < self.schedule.T:
            self._select(t, metrics)
        return metrics

    def _estimate_members(self, tau: int):
        X, y, rounds = self.store.stacked()
        cvtt = self.config.cvtt
        members = self.pool.members()
        scores, estimates = [], []
        for rec in members:
            s = rec.predict_scores(X)
            hits = predict_labels(s) == y
            estimates.append(refine_from_tally(RoundTally.from_hits(hits, rounds, self.store), tau, cvtt, rec.label))
            scores.append(softmax(s) if self.config.ensemble_mode == "softmax" else s)
        return members, scores, estimates

    def _select(self, tau: int, metrics: RoundMetrics) -> None:
        members, scores, estimates = self._estimate_members(tau)
        weights = [e.value for e in estimates]
        if self.config.weight_floor:
            floor = 1.0 / self.config.learner.K
            weights = [max(w, floor) for w in weights]
        ensemble = EnsembleModel(members, weights, self.config.ensemble_mode)

        X, y, rounds = self.store.stacked()
        hits = predict_labels(ensemble.combine(scores)) == y
        e_est = refine_from_tally(RoundTally.from_hits(hits, rounds, self.store), tau, self.config.cvtt, "E")

        # Highest estimate; ties go to more training rounds, then canonical order.
        best = max(
            range(len(members)),
            key=lambda i: (estimates[i].value, members[i].rounds_trained, -i),
        )
        if e_est.value > estimates[best].value:
            self.current, self.current_window = ensemble, e_est.window_rounds
        else:
            self.current, self.current_window = members[best], estimates[best].window_rounds
        self.last_estimates = {m.id: e for m, e in zip(members, estimates)}
        metrics.weights = {m.label: w for m, w in zip(members, weights)}
        metrics.estimates = {m.label: e for m, e in zip(members, estimates)}
        metrics.ensemble_estimate = e_est

    def digest(self) -> str:
        """Hash of the cursor, the deployed model and every live learner's parameters."""
        h = hashlib.sha256()
        h.update(np.int64(self.t).tobytes())
        h.update(self.current_id.encode())
        for rec in self.pool.members():
            h.update(repr(rec.interval).encode())
            h.update(rec.learner.digest().encode())
        return h.hexdigest()


def refine_accuracy_of_ensemble(
    ensemble: EnsembleModel, store: HoldoutStore, tau: int, config: CvttConfig
) -> AccuracyEstimate:
    """Refined accuracy with the ensemble's weighted-score argmax as the predictor."""
    tally = RoundTally.from_predictions(ensemble.predict, store, tau)
    return refine_from_tally(tally, tau, config, "E")


def run(method, batches: Sequence[RoundBatch]) -> list[RoundMetrics]:
    """Drive any method with ``step`` over a stream."""
    return [method.step(b) for b in batches]
