"""Synthetic drifting streams, fold splitting and JSONL ingestion.

All randomness comes from :func:`rng_for`, a Philox-4x64 counter-based
generator keyed on ``(seed, purpose tag, round)``. The same key gives the
same draws on every platform, and any round can be generated on its own.
"""

from __future__ import annotations

import csv
import json
import math
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Optional, Sequence, Union

import numpy as np

from .learners import LabeledExample


def rng_for(seed: int, tag: str, t: int = 0) -> np.random.Generator:
    """Portable generator for one ``(seed, purpose, round)`` triple."""
    key = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, zlib.crc32(tag.encode()), int(t)])
    return np.random.Generator(np.random.Philox(key))


@dataclass(frozen=True)
class PiecewiseDrift:
    """Gaussian class clusters whose means jump at fixed rounds.

    ``boundaries`` are the first rounds of segments 2, 3, ...; ``means`` has
    shape ``(len(boundaries) + 1, K, D)``.
    """

    boundaries: tuple[int, ...]
    means: np.ndarray
    noise: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "boundaries", tuple(int(b) for b in self.boundaries))
        object.__setattr__(self, "means", np.asarray(self.means, dtype=float))
        b = self.boundaries
        if any(x >= y for x, y in zip(b, b[1:])):
            raise ValueError("segment boundaries must be strictly increasing")
        if self.means.ndim != 3 or self.means.shape[0] != len(b) + 1:
            raise ValueError(
                f"means must have shape (segments={len(b) + 1}, K, D), got {self.means.shape}"
            )
        if self.noise <= 0:
            raise ValueError("noise must be positive")

    def segment(self, t: int) -> int:
        return sum(1 for b in self.boundaries if b <= t)

    def class_means(self, t: int) -> np.ndarray:
        return self.means[self.segment(t)]


@dataclass(frozen=True)
class RotatingDrift:
    """Class means evenly spaced on a circle that turns ``velocity`` radians per round.

    Class ``k`` sits at angle ``velocity * t + 2 pi k / K`` in the first two
    coordinates; remaining coordinates have zero mean.
    """

    velocity: float
    radius: float = 2.0
    noise: float = 1.0

    def __post_init__(self):
        if self.radius <= 0 or self.noise <= 0:
            raise ValueError("radius and noise must be positive")

    def class_means(self, t: int, K: int, D: int) -> np.ndarray:
        angles = self.velocity * t + 2 * math.pi * np.arange(K) / K
        out = np.zeros((K, D))
        out[:, 0] = self.radius * np.cos(angles)
        out[:, 1] = self.radius * np.sin(angles)
        return out


Drift = Union[PiecewiseDrift, RotatingDrift]


@dataclass(frozen=True)
class StreamSpec:
    T: int
    n: int
    m: int
    K: int
    D: int
    drift: Drift
    seed: int = 0

    def __post_init__(self):
        if self.T < 1:
            raise ValueError("T must be positive")
        if self.n < 1 or self.m < 1:
            raise ValueError("need n >= 1 training and m >= 1 hold-out points per round")
        if self.K < 2 or self.D < 1:
            raise ValueError("need K >= 2 and D >= 1")
        d = self.drift
        if isinstance(d, PiecewiseDrift):
            if d.means.shape[1:] != (self.K, self.D):
                raise ValueError(f"means must be (segments, {self.K}, {self.D})")
            if d.boundaries and (d.boundaries[0] < 2 or d.boundaries[-1] > self.T):
                raise ValueError(f"segment boundaries must lie in [2, {self.T}]")
        elif isinstance(d, RotatingDrift):
            if self.D < 2:
                raise ValueError("rotating drift needs D >= 2")
        else:
            raise ValueError(f"unknown drift {d!r}")

    def class_means(self, t: int) -> np.ndarray:
        if isinstance(self.drift, PiecewiseDrift):
            return self.drift.class_means(t)
        return self.drift.class_means(t, self.K, self.D)

    def distribution_id(self, t: int) -> int:
        if isinstance(self.drift, PiecewiseDrift):
            return self.drift.segment(t)
        # Every round of a rotating stream is its own distribution.
        return t


@dataclass
class RoundBatch:
    """One round of labelled data, already split into folds."""

    t: int
    train_X: np.ndarray
    train_y: np.ndarray
    holdout_X: np.ndarray
    holdout_y: np.ndarray
    distribution_id: Optional[int] = None

    @property
    def X(self) -> np.ndarray:
        return np.concatenate([self.train_X, self.holdout_X])

    @property
    def y(self) -> np.ndarray:
        return np.concatenate([self.train_y, self.holdout_y])

    @property
    def train(self) -> list[LabeledExample]:
        return [LabeledExample(x, int(y)) for x, y in zip(self.train_X, self.train_y)]

    @property
    def holdout(self) -> list[LabeledExample]:
        return [LabeledExample(x, int(y)) for x, y in zip(self.holdout_X, self.holdout_y)]

    def __len__(self) -> int:
        return len(self.train_y) + len(self.holdout_y)


def generate_round(spec: StreamSpec, t: int) -> RoundBatch:
    rng = rng_for(spec.seed, "stream", t)
    total = spec.n + spec.m
    y = rng.integers(0, spec.K, size=total)
    noise = rng.standard_normal((total, spec.D))
    sigma = spec.drift.noise
    X = spec.class_means(t)[y] + sigma * noise
    return RoundBatch(
        t=t,
        train_X=X[: spec.n],
        train_y=y[: spec.n],
        holdout_X=X[spec.n :],
        holdout_y=y[spec.n :],
        distribution_id=spec.distribution_id(t),
    )


def generate(spec: StreamSpec) -> list[RoundBatch]:
    """All ``T`` rounds of the stream; draws are iid within a round."""
    return [generate_round(spec, t) for t in range(1, spec.T + 1)]


def split_folds(X, y, p: float, seed: int, t: int):
    """Seeded split of one round into ``(train_X, train_y, holdout_X, holdout_y)``.

    The training fold gets ``round(p * N)`` points, clamped so both folds are
    non-empty. Original point order is kept inside each fold.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=np.int64)
    N = len(y)
    if N < 2:
        raise ValueError("need at least 2 points to split into two folds")
    if not 0 < p < 1:
        raise ValueError("split fraction p must lie in (0, 1)")
    n_train = min(max(int(round(p * N)), 1), N - 1)
    perm = rng_for(seed, "fold", t).permutation(N)
    tr = np.sort(perm[:n_train])
    ho = np.sort(perm[n_train:])
    return X[tr], y[tr], X[ho], y[ho]


class StreamFormatError(ValueError):
    pass


def load_stream(
    path: Union[str, Path],
    K: Optional[int] = None,
    p: float = 0.8,
    seed: int = 0,
) -> list[RoundBatch]:
    """Read a JSONL stream: one ``{"t", "x", "y"[, "fold", "segment"]}`` object per line.

    Rounds must be contiguous starting at 1. When no record carries a
    ``fold`` tag, each round is split with :func:`split_folds`. The optional
    integer ``segment`` becomes the batch's ``distribution_id``.
    """
    path = Path(path)
    rows: dict[int, list] = {}
    dim = None
    tagged = None
    with path.open() as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise StreamFormatError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
            if not isinstance(rec, dict):
                raise StreamFormatError(f"{path}:{lineno}: record must be an object")
            for key in ("t", "x", "y"):
                if key not in rec:
                    raise StreamFormatError(f"{path}:{lineno}: missing field {key!r}")
            t, x, y = rec["t"], rec["x"], rec["y"]
            if not isinstance(t, int) or isinstance(t, bool) or t < 1:
                raise StreamFormatError(f"{path}:{lineno}: t must be a positive integer")
            if not isinstance(y, int) or isinstance(y, bool) or y < 0:
                raise StreamFormatError(f"{path}:{lineno}: y must be a non-negative integer")
            if K is not None and y >= K:
                raise StreamFormatError(f"{path}:{lineno}: label y={y} outside [0, {K})")
            if not isinstance(x, list) or not x or not all(
                isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v) for v in x
            ):
                raise StreamFormatError(f"{path}:{lineno}: x must be a non-empty array of finite numbers")
            if dim is None:
                dim = len(x)
            elif len(x) != dim:
                raise StreamFormatError(f"{path}:{lineno}: x has dimension {len(x)}, expected {dim}")
            fold = rec.get("fold")
            if fold not in (None, "train", "holdout"):
                raise StreamFormatError(f"{path}:{lineno}: fold must be 'train' or 'holdout'")
            has_fold = fold is not None
            if tagged is None:
                tagged = has_fold
            elif tagged != has_fold:
                raise StreamFormatError(f"{path}:{lineno}: fold tags must be present on all records or none")
            seg = rec.get("segment")
            if seg is not None and (not isinstance(seg, int) or isinstance(seg, bool)):
                raise StreamFormatError(f"{path}:{lineno}: segment must be an integer")
            rows.setdefault(t, []).append((x, y, fold, seg, lineno))
    if not rows:
        raise StreamFormatError(f"{path}: no rounds")
    rounds = sorted(rows)
    if rounds != list(range(1, len(rounds) + 1)):
        missing = sorted(set(range(1, rounds[-1] + 1)) - set(rounds))
        raise StreamFormatError(f"{path}: rounds are not contiguous from 1 (missing {missing[:5]})")

    batches = []
    for t in rounds:
        recs = rows[t]
        X = np.array([r[0] for r in recs], dtype=float)
        y = np.array([r[1] for r in recs], dtype=np.int64)
        segs = {r[3] for r in recs}
        if len(segs) > 1:
            raise StreamFormatError(f"{path}: round {t} mixes segments {sorted(s for s in segs if s is not None)}")
        seg = segs.pop()
        if tagged:
            is_train = np.array([r[2] == "train" for r in recs])
            if is_train.all() or not is_train.any():
                raise StreamFormatError(f"{path}: round {t} needs both train and holdout records")
            parts = (X[is_train], y[is_train], X[~is_train], y[~is_train])
        else:
            try:
                parts = split_folds(X, y, p, seed, t)
            except ValueError as exc:
                raise StreamFormatError(f"{path}: round {t}: {exc}") from None
        batches.append(RoundBatch(t, *parts, distribution_id=seg))
    return batches


def dump_stream(batches: Sequence[RoundBatch], path: Union[str, Path]) -> None:
    """Write batches as fold-tagged JSONL (inverse of :func:`load_stream`)."""
    with Path(path).open("w", newline="\n") as fh:
        for b in batches:
            for fold, X, y in (("train", b.train_X, b.train_y), ("holdout", b.holdout_X, b.holdout_y)):
                for x, label in zip(X, y):
                    rec = {"t": b.t, "x": [float(v) for v in x], "y": int(label), "fold": fold}
                    if b.distribution_id is not None:
                        rec["segment"] = int(b.distribution_id)
                    fh.write(json.dumps(rec) + "\n")


def export_csv(batches: Sequence[RoundBatch], path: Union[str, Path]) -> None:
    """CSV with columns ``t, x_0..x_{D-1}, y, fold``."""
    batches = list(batches)
    D = batches[0].train_X.shape[1] if batches else 0
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", *[f"x_{d}" for d in range(D)], "y", "fold"])
        for b in batches:
            for fold, X, y in (("train", b.train_X, b.train_y), ("holdout", b.holdout_X, b.holdout_y)):
                for x, label in zip(X, y):
                    w.writerow([b.t, *[repr(float(v)) for v in x], int(label), fold])


def corner_means(K: int, scale: float = 2.0) -> np.ndarray:
    """``K`` class means spread on a circle of radius ``scale`` in 2-D."""
    angles = 2 * math.pi * np.arange(K) / K + math.pi / 4
    return scale * np.stack([np.cos(angles), np.sin(angles)], axis=1)


def permuted_segments(K: int, n_segments: int, seed: int, scale: float = 2.0) -> np.ndarray:
    """Per-segment means that reuse one set of cluster centres under new labels.

    Each segment relabels the clusters with a derangement of the previous
    segment's assignment: no class keeps its centre across a boundary, so a
    model fit on one segment is wrong on nearly every point of the next.
    """
    base = corner_means(K, scale)
    rng = rng_for(seed, "segments")
    assign = [np.arange(K)]
    for _ in range(n_segments - 1):
        while True:
            perm = rng.permutation(K)
            if not np.any(perm == assign[-1]):
                break
        assign.append(perm)
    return np.stack([base[a] for a in assign])


def iter_points(batch: RoundBatch) -> Iterator[LabeledExample]:
    yield from batch.train
    yield from batch.holdout
