"""Cross-validation through time.

A :class:`HoldoutStore` archives each round's hold-out fold. Today's model is
scored on past rounds, and :func:`refine_accuracy` grows a trailing window by
doubling for as long as the accuracy over ``r`` and ``2r`` rounds stays
statistically indistinguishable.
"""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np


class InsufficientHistory(ValueError):
    """A window reaches rounds that were never stored or already evicted."""


@dataclass(frozen=True)
class CvttConfig:
    """Parameters of the window-doubling test.

    Attributes:
        delta: failure probability in (0, 1).
        T: horizon; enters the threshold through ``log T``.
        slack: multiplier on the threshold. 1 reproduces the textbook
            constants; desk-scale experiments use ~0.1.
    """

    delta: float = 0.1
    T: int = 64
    slack: float = 1.0

    def __post_init__(self):
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if self.T < 1:
            raise ValueError("T must be positive")
        if self.slack <= 0:
            raise ValueError("slack must be positive")


def threshold_S(count: int, config: CvttConfig) -> float:
    """``sqrt(ln(T/delta)/count) + sqrt(20 ln(T)/count)`` with natural logs."""
    if count < 1:
        raise ValueError("count must be at least 1")
    T = config.T
    return math.sqrt(math.log(T / config.delta) / count) + math.sqrt(20 * math.log(T) / count)


def threshold_readings(points: int, rounds: int, config: CvttConfig) -> dict[str, float]:
    """The test threshold under both readings of its argument.

    The comparison uses the point count; the round-count reading is
    reported alongside for diagnostics only.
    """
    return {
        "points": 4 * config.slack * threshold_S(points, config),
        "rounds": 4 * config.slack * threshold_S(rounds, config),
    }


class HoldoutStore:
    """Append-only per-round archive of hold-out examples.

    ``retention`` (rounds) keeps only the trailing window when set.
    """

    def __init__(self, retention: Optional[int] = None):
        if retention is not None and retention < 1:
            raise ValueError("retention must be at least 1 round")
        self.retention = retention
        self.latest = 0
        self._rounds: OrderedDict[int, tuple[np.ndarray, np.ndarray]] = OrderedDict()
        self._stacked = None

    def append(self, t: int, X, y) -> "HoldoutStore":
        if t != self.latest + 1:
            raise ValueError(f"out-of-order append: expected round {self.latest + 1}, got {t}")
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=np.int64)
        if X.shape[0] != y.shape[0]:
            raise ValueError("X and y lengths differ")
        self._rounds[t] = (X, y)
        self.latest = t
        self._stacked = None
        if self.retention is not None:
            while len(self._rounds) > self.retention:
                self._rounds.popitem(last=False)
        return self

    @property
    def oldest(self) -> int:
        return next(iter(self._rounds)) if self._rounds else 1

    @property
    def rounds(self) -> list[int]:
        return list(self._rounds)

    def __contains__(self, t: int) -> bool:
        return t in self._rounds

    def get(self, t: int) -> tuple[np.ndarray, np.ndarray]:
        try:
            return self._rounds[t]
        except KeyError:
            raise InsufficientHistory(f"round {t} is not in the hold-out store") from None

    def count(self, tau: int, r: int) -> int:
        """Number of hold-out points in rounds ``[tau - r + 1, tau]``."""
        return sum(len(self.get(s)[1]) for s in range(tau - r + 1, tau + 1))

    def stacked(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """All retained hold-out points as ``(X, y, round_of_point)``."""
        if self._stacked is None:
            rounds = self.rounds
            if rounds:
                X = np.concatenate([self._rounds[s][0] for s in rounds])
                y = np.concatenate([self._rounds[s][1] for s in rounds])
                tags = np.concatenate([np.full(len(self._rounds[s][1]), s) for s in rounds])
            else:
                X, y, tags = np.zeros((0, 0)), np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
            self._stacked = (X, y, tags)
        return self._stacked

    def window(self, tau: int, r: int) -> tuple[np.ndarray, np.ndarray]:
        parts = [self.get(s) for s in range(tau - r + 1, tau + 1)]
        return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])


@dataclass(frozen=True)
class AccuracyEstimate:
    value: float
    window_rounds: int
    points_used: int
    model_id: str = ""
    cap_truncated: bool = False


class RoundTally:
    """Per-round correct/total counts of one frozen model over a store.

    All window accuracies come from these counts, so a model is run over each
    stored round at most once per estimate.
    """

    def __init__(self, correct: dict[int, int], total: dict[int, int]):
        self.correct = correct
        self.total = total

    @classmethod
    def from_predictions(cls, predict: Callable[[np.ndarray], np.ndarray], store: HoldoutStore, tau: int):
        correct, total = {}, {}
        for s in store.rounds:
            if s > tau:
                break
            X, y = store.get(s)
            correct[s] = int(np.count_nonzero(predict(X) == y)) if len(y) else 0
            total[s] = len(y)
        return cls(correct, total)

    @classmethod
    def from_hits(cls, hits: np.ndarray, rounds: np.ndarray, store: HoldoutStore):
        """Counts from a 0/1 correctness vector aligned with ``store.stacked()``."""
        kept = store.rounds
        pos = np.searchsorted(kept, rounds)
        correct = np.bincount(pos, weights=hits, minlength=len(kept))
        total = np.bincount(pos, minlength=len(kept))
        return cls(
            {s: int(c) for s, c in zip(kept, correct)},
            {s: int(n) for s, n in zip(kept, total)},
        )

    def has(self, tau: int, r: int) -> bool:
        return all(s in self.total for s in range(tau - r + 1, tau + 1))

    def accuracy(self, tau: int, r: int) -> tuple[float, int]:
        if not self.has(tau, r):
            raise InsufficientHistory(f"rounds [{tau - r + 1}, {tau}] not fully stored")
        c = sum(self.correct[s] for s in range(tau - r + 1, tau + 1))
        n = sum(self.total[s] for s in range(tau - r + 1, tau + 1))
        if n == 0:
            raise InsufficientHistory(f"no hold-out points in rounds [{tau - r + 1}, {tau}]")
        return c / n, n


def _as_predict(model) -> Callable[[np.ndarray], np.ndarray]:
    if hasattr(model, "predict"):
        return model.predict
    if callable(model):
        return model
    raise TypeError("model must be callable or expose predict(X)")


def empirical_accuracy(model, store: HoldoutStore, tau: int, r: int) -> tuple[float, int]:
    """Point-weighted accuracy of ``model`` on hold-out rounds ``[tau - r + 1, tau]``."""
    if r < 1 or tau - r + 1 < 1:
        raise ValueError(f"window of {r} rounds ending at {tau} starts before round 1")
    predict = _as_predict(model)
    X, y = store.window(tau, r)
    if len(y) == 0:
        raise InsufficientHistory("empty hold-out window")
    return float(np.count_nonzero(predict(X) == y)) / len(y), len(y)


def refine_from_tally(tally: RoundTally, tau: int, config: CvttConfig, model_id: str = "") -> AccuracyEstimate:
    """Window-doubling rule on precomputed per-round counts.

    Starting at ``r = 1``, while ``2r <= tau``: keep doubling if
    ``|u(r) - u(2r)| <= slack * 4 * S(n(r))``, otherwise return ``u(r)``.
    If the loop runs out, ``u(r)`` at the final ``r`` is returned.
    """
    if tau < 1:
        raise ValueError("tau must be at least 1")
    r = 1
    u, n = tally.accuracy(tau, r)
    truncated = False
    while 2 * r <= tau:
        if not tally.has(tau, 2 * r):
            truncated = True
            break
        u2, n2 = tally.accuracy(tau, 2 * r)
        if abs(u - u2) <= config.slack * 4 * threshold_S(n, config):
            r, u, n = 2 * r, u2, n2
        else:
            break
    return AccuracyEstimate(u, r, n, model_id, truncated)


def refine_accuracy(model, store: HoldoutStore, tau: int, config: CvttConfig, model_id: str = "") -> AccuracyEstimate:
    """Refined accuracy of the frozen ``model`` using hold-out data through round ``tau``.

    If the store's retention cap stops the doubling early, the estimate at the
    largest feasible window is returned with ``cap_truncated`` set.
    """
    if tau < 1:
        raise ValueError("tau must be at least 1")
    if tau not in store:
        raise InsufficientHistory(f"round {tau} is not in the hold-out store")
    tally = RoundTally.from_predictions(_as_predict(model), store, tau)
    return refine_from_tally(tally, tau, config, model_id)


def refine_from_counts(correct: Sequence[int], total: Sequence[int], config: CvttConfig) -> AccuracyEstimate:
    """Convenience wrapper: ``correct[i]``/``total[i]`` describe round ``i + 1``; ``tau = len``."""
    tau = len(total)
    tally = RoundTally(
        {s + 1: int(c) for s, c in enumerate(correct)},
        {s + 1: int(n) for s, n in enumerate(total)},
    )
    return refine_from_tally(tally, tau, config)
