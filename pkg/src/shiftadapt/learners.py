"""Black-box online learner contract and small reference learners.

A learner observes labelled batches and emits a length-``K`` real score vector
per covariate. The predicted label is the argmax of the scores, with ties going
to the smallest class index (``numpy.argmax`` semantics).
"""

from __future__ import annotations

import hashlib
from math import exp
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

KINDS = ("logistic_sgd", "nearest_centroid", "prior_count")


class LabeledExample(NamedTuple):
    x: np.ndarray
    y: int


def stack_examples(examples) -> tuple[np.ndarray, np.ndarray]:
    """Turn a list of ``LabeledExample`` into ``(X, y)`` arrays."""
    examples = list(examples)
    if not examples:
        return np.zeros((0, 0)), np.zeros(0, dtype=np.int64)
    X = np.array([np.asarray(e.x, dtype=float) for e in examples])
    y = np.array([int(e.y) for e in examples], dtype=np.int64)
    return X, y


@dataclass(frozen=True)
class LearnerSpec:
    """Which learner to build and its hyperparameters.

    ``lr``, ``epochs`` and ``init_scale`` only matter for ``logistic_sgd``.
    ``init_scale = 0`` gives zero-initialised weights.
    """

    kind: str = "logistic_sgd"
    K: int = 2
    D: int = 2
    lr: float = 0.1
    epochs: int = 5
    init_scale: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unsupported learner kind {self.kind!r}; expected one of {KINDS}")
        if self.K < 2:
            raise ValueError("K must be at least 2")
        if self.D < 1:
            raise ValueError("D must be at least 1")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if self.init_scale < 0:
            raise ValueError("init_scale must be non-negative")


def predict_labels(scores: np.ndarray) -> np.ndarray:
    return np.argmax(scores, axis=-1)


class OnlineLearner:
    """Base class for incremental classifiers.

    Subclasses implement ``_observe`` and ``_scores``; this class does the
    shape checking so every learner rejects dimension mismatches the same way.
    """

    def __init__(self, spec: LearnerSpec, seed: int):
        self.spec = spec
        self.seed = int(seed)
        self.batches_seen = 0

    @property
    def K(self) -> int:
        return self.spec.K

    @property
    def D(self) -> int:
        return self.spec.D

    def _check_X(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        if X.ndim != 2 or X.shape[1] != self.D:
            raise ValueError(f"expected covariates of dimension {self.D}, got shape {X.shape}")
        return X

    def observe(self, X, y) -> "OnlineLearner":
        """Advance the learner by one labelled batch. Returns ``self``."""
        X = self._check_X(X)
        y = np.asarray(y, dtype=np.int64)
        if y.shape != (X.shape[0],):
            raise ValueError("labels must be a vector matching the number of covariates")
        if y.size and (y.min() < 0 or y.max() >= self.K):
            raise ValueError(f"labels must lie in [0, {self.K})")
        if not np.all(np.isfinite(X)):
            raise ValueError("covariates must be finite")
        self._observe(X, y)
        self.batches_seen += 1
        return self

    def predict_scores(self, X) -> np.ndarray:
        """Scores of shape ``(n, K)`` for an ``(n, D)`` batch (or ``(K,)`` for one point)."""
        single = np.ndim(X) == 1
        scores = self._scores(self._check_X(X))
        return scores[0] if single else scores

    def predict(self, X) -> np.ndarray:
        return predict_labels(self.predict_scores(X))

    def params(self) -> list[np.ndarray]:
        raise NotImplementedError

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(self.spec.kind.encode())
        h.update(np.int64(self.batches_seen).tobytes())
        for p in self.params():
            h.update(np.ascontiguousarray(p).tobytes())
        return h.hexdigest()

    def _observe(self, X: np.ndarray, y: np.ndarray) -> None:
        raise NotImplementedError

    def _scores(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class LogisticSGD(OnlineLearner):
    """Multinomial logistic regression trained by per-example SGD.

    Each observed batch gets ``epochs`` passes; every pass visits the batch in
    a fresh permutation drawn from the instance's own generator.
    """

    def __init__(self, spec: LearnerSpec, seed: int):
        super().__init__(spec, seed)
        self._rng = np.random.Generator(np.random.Philox(seed))
        if spec.init_scale > 0:
            self.W = spec.init_scale * self._rng.standard_normal((spec.K, spec.D))
        else:
            self.W = np.zeros((spec.K, spec.D))
        self.b = np.zeros(spec.K)

    def _observe(self, X, y):
        _sgd_epochs(self.W, self.b, X, y, self.spec.lr, self.spec.epochs, self._rng)

    def _scores(self, X):
        return X @ self.W.T + self.b

    def params(self):
        return [self.W, self.b]


def _sgd_epochs(W, b, X, y, lr, epochs, rng):
    # Updates W and b in place. Plain float loops beat numpy at K, D ~ 2-10.
    n = X.shape[0]
    if n == 0:
        return
    K, D = W.shape
    Wl = W.tolist()
    bl = b.tolist()
    Xl = X.tolist()
    yl = y.tolist()

    for _ in range(epochs):
        order = rng.permutation(n).tolist()
        for j in order:
            x = Xl[j]
            z = [bl[k] + sum(Wl[k][d] * x[d] for d in range(D)) for k in range(K)]
            zmax = max(z)
            e = [exp(v - zmax) for v in z]
            s = sum(e)
            target = yl[j]
            for k in range(K):
                g = e[k] / s - (1.0 if k == target else 0.0)
                if g != 0.0:
                    row = Wl[k]
                    step = lr * g
                    for d in range(D):
                        row[d] -= step * x[d]
                    bl[k] -= step
    W[:] = Wl
    b[:] = bl


class NearestCentroid(OnlineLearner):
    """Per-class running means; scores are negative squared distances.

    Before any data all scores are zero. Classes not yet seen score one below
    the worst seen class so they never win while staying finite.
    """

    def __init__(self, spec: LearnerSpec, seed: int):
        super().__init__(spec, seed)
        self.counts = np.zeros(spec.K, dtype=np.int64)
        self.sums = np.zeros((spec.K, spec.D))

    @property
    def centroids(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            return self.sums / self.counts[:, None]

    def _observe(self, X, y):
        np.add.at(self.sums, y, X)
        self.counts += np.bincount(y, minlength=self.K)

    def _scores(self, X):
        seen = self.counts > 0
        out = np.zeros((X.shape[0], self.K))
        if not seen.any():
            return out
        c = self.centroids[seen]
        d2 = ((X[:, None, :] - c[None, :, :]) ** 2).sum(axis=2)
        out[:, seen] = -d2
        if not seen.all():
            out[:, ~seen] = (-d2).min(axis=1, keepdims=True) - 1.0
        return out

    def params(self):
        return [self.counts, self.sums]


class PriorCount(OnlineLearner):
    """Ignores covariates; scores every point with the class counts."""

    def __init__(self, spec: LearnerSpec, seed: int):
        super().__init__(spec, seed)
        self.counts = np.zeros(spec.K, dtype=np.int64)

    def _observe(self, X, y):
        self.counts += np.bincount(y, minlength=self.K)

    def _scores(self, X):
        return np.tile(self.counts.astype(float), (X.shape[0], 1))

    def params(self):
        return [self.counts]


_REGISTRY = {
    "logistic_sgd": LogisticSGD,
    "nearest_centroid": NearestCentroid,
    "prior_count": PriorCount,
}


def new_instance(spec: LearnerSpec, seed: int) -> OnlineLearner:
    """Fresh learner with deterministically seeded state."""
    try:
        cls = _REGISTRY[spec.kind]
    except KeyError:
        raise ValueError(f"unsupported learner kind {spec.kind!r}") from None
    return cls(spec, seed)


def softmax(scores: np.ndarray) -> np.ndarray:
    z = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)
