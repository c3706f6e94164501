"""Comparator meta-algorithms sharing the ``predict``/``step`` surface of :class:`AWE`."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .awe import (
    AWE,
    ROOT_KEY,
    AweConfig,
    InstancePool,
    RoundMetrics,
    batch_accuracy,
    instance_seed,
)
from .intervals import Interval, gc_intervals
from .learners import LearnerSpec, new_instance, predict_labels
from .streams import RoundBatch

BASELINE_KINDS = ("base_ol", "oracle_restart", "saol_gc", "single_resolution", "majority_vote")


class _Sequential:
    """Round-order bookkeeping shared by the single-learner baselines."""

    def __init__(self, T: int):
        self.T = T
        self.t = 1

    def _check_batch(self, batch: RoundBatch) -> None:
        if batch.t != self.t:
            raise ValueError(f"batch for round {batch.t} but the cursor is at round {self.t}")
        if batch.t > self.T:
            raise ValueError(f"round {batch.t} is past the horizon {self.T}")
        if len(batch.train_y) == 0:
            raise ValueError(f"round {batch.t} has an empty training fold")


class BaseOL(_Sequential):
    """One learner, never restarted, trained on every training fold.

    It is seeded like AWE's root instance, so both make identical predictions
    on identical data.
    """

    name = "base_ol"

    def __init__(self, T: int, spec: LearnerSpec, seed: int = 0):
        super().__init__(T)
        self.learner = new_instance(spec, instance_seed(seed, ROOT_KEY))

    def predict(self, X):
        return self.learner.predict(X)

    def step(self, batch: RoundBatch) -> RoundMetrics:
        self._check_batch(batch)
        acc = batch_accuracy(self.predict(batch.X), batch.y)
        self.learner.observe(batch.train_X, batch.train_y)
        self.t += 1
        return RoundMetrics(batch.t, acc, 0, 1, "base")


class OracleRestart(_Sequential):
    """The base learner restarted exactly when the true segment changes.

    Evaluation-only: it reads ``distribution_id``, which no other method sees.
    """

    name = "oracle_restart"

    def __init__(self, T: int, spec: LearnerSpec, seed: int = 0):
        super().__init__(T)
        self.spec = spec
        self.seed = seed
        self.learner = new_instance(spec, instance_seed(seed, ROOT_KEY))
        self.segment: Optional[int] = None
        self.restarts = 0

    def predict(self, X):
        return self.learner.predict(X)

    def step(self, batch: RoundBatch) -> RoundMetrics:
        self._check_batch(batch)
        if batch.distribution_id is None:
            raise ValueError(f"round {batch.t} carries no distribution_id; oracle_restart needs ground truth")
        if self.segment is not None and batch.distribution_id != self.segment:
            self.learner = new_instance(self.spec, instance_seed(self.seed, ("restart", batch.t, 0)))
            self.restarts += 1
        self.segment = batch.distribution_id
        acc = batch_accuracy(self.predict(batch.X), batch.y)
        self.learner.observe(batch.train_X, batch.train_y)
        self.t += 1
        return RoundMetrics(batch.t, acc, 0, 1, f"seg{self.segment}")


def saol_rate(u: Interval) -> float:
    """``min(1/2, 1/sqrt(|I|))`` with the nominal interval length."""
    return min(0.5, 1.0 / math.sqrt(u.end - u.start + 1))


class SAOL:
    """Strongly adaptive aggregation over geometric-covering instances.

    Weights start at the interval's rate when it opens and follow
    ``w <- w * (1 + rate * clip(reward - meta_reward, -1, 1))``, where rewards
    are accuracies on the revealed batch. Predictions combine member scores
    with the normalised weights.
    """

    name = "saol_gc"

    def __init__(self, T: int, spec: LearnerSpec, seed: int = 0):
        self.schedule = gc_intervals(T)
        self.pool = InstancePool(self.schedule, spec, seed)
        self.weights: dict[tuple, float] = {r.id: saol_rate(r.interval) for r in self.pool.members()}

    @property
    def t(self) -> int:
        return self.pool.cursor

    def normalized_weights(self) -> dict[tuple, float]:
        members = self.pool.members()
        total = sum(self.weights[r.id] for r in members)
        return {r.id: self.weights[r.id] / total for r in members}

    def predict_scores(self, X) -> np.ndarray:
        norm = self.normalized_weights()
        out = None
        for rec in self.pool.members():
            s = norm[rec.id] * rec.predict_scores(X)
            out = s if out is None else out + s
        return out

    def predict(self, X):
        return predict_labels(self.predict_scores(X))

    def step(self, batch: RoundBatch) -> RoundMetrics:
        if batch.t != self.t or batch.t > self.schedule.T:
            raise ValueError(f"batch for round {batch.t} but the cursor is at round {self.t}")
        if len(batch.train_y) == 0:
            raise ValueError(f"round {batch.t} has an empty training fold")
        X, y = batch.X, batch.y
        members = self.pool.members()
        meta = batch_accuracy(self.predict(X), y)
        for rec in members:
            reward = batch_accuracy(rec.predict(X), y)
            r = min(1.0, max(-1.0, reward - meta))
            self.weights[rec.id] *= 1.0 + saol_rate(rec.interval) * r
        top = max(members, key=lambda r: self.weights[r.id])
        metrics = RoundMetrics(batch.t, meta, 0, len(members), top.label)

        self.pool.train(batch.train_X, batch.train_y)
        self.pool.advance()
        for key in [k for k in self.weights if k not in self.pool.live]:
            del self.weights[key]
        for rec in self.pool.members():
            self.weights.setdefault(rec.id, saol_rate(rec.interval))
        return metrics


class SingleResolution(AWE):
    """AWE restricted to the R and B intervals of one resolution."""

    def __init__(self, config: AweConfig, resolution: int, seed: int = 0):
        super().__init__(replace(config, resolutions=(resolution,)), seed)
        self.resolution = resolution
        self.name = f"single_res_{resolution}"


class MajorityVote(AWE):
    """AWE's instances and training, but each point gets the modal label of
    the live instances (ties to the smallest label). No estimates, no weights."""

    name = "majority_vote"

    def __init__(self, config: AweConfig, seed: int = 0):
        super().__init__(config, seed)
        self.current_window = 0

    @property
    def current_id(self) -> str:
        return "vote"

    def predict(self, X) -> np.ndarray:
        labels = np.stack([rec.predict(X) for rec in self.pool.members()])
        return majority(labels, self.config.learner.K)

    def _select(self, tau, metrics) -> None:
        return None


def majority(labels: np.ndarray, K: int) -> np.ndarray:
    """Column-wise mode of an ``(instances, points)`` label array; ties to the smallest label."""
    counts = np.zeros((K, labels.shape[1]), dtype=np.int64)
    for row in labels:
        counts[row, np.arange(labels.shape[1])] += 1
    return np.argmax(counts, axis=0)


@dataclass(frozen=True)
class BaselineSpec:
    kind: str
    resolution: Optional[int] = None

    def __post_init__(self):
        if self.kind not in BASELINE_KINDS:
            raise ValueError(f"unknown baseline {self.kind!r}; expected one of {BASELINE_KINDS}")
        if self.kind == "single_resolution" and self.resolution is None:
            raise ValueError("single_resolution needs a resolution")

    @property
    def name(self) -> str:
        if self.kind == "single_resolution":
            return f"single_res_{self.resolution}"
        return self.kind

    def build(self, config: AweConfig, seed: int):
        if self.kind == "base_ol":
            return BaseOL(config.T, config.learner, seed)
        if self.kind == "oracle_restart":
            return OracleRestart(config.T, config.learner, seed)
        if self.kind == "saol_gc":
            return SAOL(config.T, config.learner, seed)
        if self.kind == "majority_vote":
            return MajorityVote(config, seed)
        M = config.horizon.M
        if not 1 <= self.resolution <= M:
            raise ValueError(f"resolution {self.resolution} outside [1, {M}]")
        return SingleResolution(config, self.resolution, seed)


def post_shift_rounds(pool: InstancePool, shift_t: int) -> dict[str, int]:
    """Rounds of training each live instance has seen, counting only instances
    that started at or after ``shift_t`` (others saw pre-shift data; reported as 0)."""
    out = {}
    for rec in pool.members():
        out[rec.label] = rec.rounds_trained if rec.interval.start >= shift_t else 0
    return out
