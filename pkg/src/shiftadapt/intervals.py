"""Interval schedules: multi-resolution instances (MRI) and geometric covering (GC).

Each interval owns the lifetime of one learner instance. An instance created
for ``[a, b]`` starts training at round ``a`` and is queried only for rounds
inside ``[a, b]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Literal, Optional

Family = Literal["R", "B", "GC"]

_FAMILY_ORDER = {"R": 0, "B": 1, "GC": 2}


@dataclass(frozen=True)
class Horizon:
    """Round count ``T`` and its power-of-two padding.

    Attributes:
        T: number of rounds actually played.
        padded: smallest power of two ``>= T``.
        M: number of resolutions, ``log2(padded)``.
    """

    T: int
    padded: int = field(init=False)
    M: int = field(init=False)

    def __post_init__(self):
        if not isinstance(self.T, int) or self.T < 1:
            raise ValueError(f"horizon must be a positive integer, got {self.T!r}")
        padded = 1 << (self.T - 1).bit_length()
        object.__setattr__(self, "padded", padded)
        object.__setattr__(self, "M", padded.bit_length() - 1)


@dataclass(frozen=True, order=False)
class Interval:
    """A training window ``[start, end]`` of rounds (both inclusive).

    ``resolution`` is 1-based for the R/B families (1 = coarsest) and the
    0-based level for GC. ``k`` is the set-builder index, so ``(family,
    resolution, k)`` identifies an instance even when two intervals share
    endpoints after truncation.
    """

    start: int
    end: int
    resolution: int
    family: Family
    k: int

    def __post_init__(self):
        if self.start > self.end:
            raise ValueError(f"empty interval [{self.start}, {self.end}]")

    @property
    def key(self) -> tuple[str, int, int]:
        return (self.family, self.resolution, self.k)

    @property
    def length(self) -> int:
        return self.end - self.start + 1

    def __contains__(self, t: int) -> bool:
        return self.start <= t <= self.end

    def sort_key(self) -> tuple[int, int, int, int]:
        return (self.resolution, self.start, _FAMILY_ORDER[self.family], self.k)

    def label(self) -> str:
        return f"{self.family}{self.resolution}.{self.k}"

    def __repr__(self) -> str:
        return f"{self.family}{self.resolution}.{self.k}[{self.start},{self.end}]"


@dataclass(frozen=True)
class Schedule:
    """A fixed set of intervals over a horizon, in canonical order."""

    horizon: Horizon
    intervals: tuple[Interval, ...]

    def __post_init__(self):
        ordered = tuple(sorted(self.intervals, key=Interval.sort_key))
        object.__setattr__(self, "intervals", ordered)

    @property
    def T(self) -> int:
        return self.horizon.T

    def active(self, t: int) -> list[Interval]:
        return active(self, t)

    def starting_at(self, t: int) -> list[Interval]:
        return [u for u in self.intervals if u.start == t]

    def restrict(self, resolutions: Iterable[int]) -> "Schedule":
        keep = set(resolutions)
        return Schedule(self.horizon, tuple(u for u in self.intervals if u.resolution in keep))

    def __len__(self) -> int:
        return len(self.intervals)

    def __iter__(self):
        return iter(self.intervals)


def _as_horizon(horizon: Horizon | int) -> Horizon:
    return horizon if isinstance(horizon, Horizon) else Horizon(horizon)


def mri_intervals(horizon: Horizon | int) -> Schedule:
    """Build the R and B interval families over all resolutions.

    At resolution ``i`` with block length ``d = padded / 2**(i-1)``:

    * R intervals ``[1 + (k-1)d, kd]`` partition ``[1, padded]``;
    * B intervals ``[1 + (k-1)d + d/2, kd + 3d/2]`` are the same blocks shifted
      by half a block and doubled in length.

    Intervals are truncated to ``[1, T]``; those starting after ``T`` are dropped.
    """
    h = _as_horizon(horizon)
    if h.T < 2:
        raise ValueError("MRI schedule needs a horizon of at least 2 rounds")
    out = []
    for i in range(1, h.M + 1):
        d = h.padded >> (i - 1)
        for k in range(1, h.padded // d + 1):
            start = 1 + (k - 1) * d
            if start > h.T:
                break
            out.append(Interval(start, min(k * d, h.T), i, "R", k))
        k = 1
        while True:
            start = 1 + (k - 1) * d + d // 2
            if start > h.T:
                break
            out.append(Interval(start, min(k * d + 3 * d // 2, h.T), i, "B", k))
            k += 1
    return Schedule(h, tuple(out))


def gc_intervals(horizon: Horizon | int) -> Schedule:
    """Geometric covering intervals ``[k 2^i, (k+1) 2^i - 1]`` for ``k >= 1``.

    Every interval whose start falls inside ``[1, T]`` is kept. End points keep
    their nominal value (``[8, 11]`` at ``T = 10``) as in the usual listing of
    these intervals; queries never reach past ``T`` so this is cosmetic.
    """
    h = _as_horizon(horizon)
    out = []
    level = 0
    while (1 << level) <= h.T:
        width = 1 << level
        k = 1
        while k * width <= h.T:
            out.append(Interval(k * width, (k + 1) * width - 1, level, "GC", k))
            k += 1
        level += 1
    return Schedule(h, tuple(out))


def active(schedule: Schedule, t: int) -> list[Interval]:
    """Intervals containing round ``t``, in canonical order."""
    if not 1 <= t <= schedule.T:
        raise ValueError(f"round {t} outside [1, {schedule.T}]")
    return [u for u in schedule.intervals if u.start <= t <= u.end]


@dataclass
class CoverageReport:
    """Outcome of the exhaustive data-coverage check.

    ``worst_case`` is ``(t0, t, fraction)`` for the pair with the smallest best
    covering fraction. ``failures`` lists every pair below the 1/4 threshold.
    """

    horizon: Horizon
    worst_case: tuple[int, int, Fraction]
    passed: bool
    pairs_checked: int
    half_holds: int
    failures: list[tuple[int, int, Fraction]]
    max_active: int

    def summary(self) -> str:
        t0, t, frac = self.worst_case
        status = "PASS" if self.passed else "FAIL"
        return (
            f"{status} T={self.horizon.T} pairs={self.pairs_checked} "
            f"worst=(t0={t0}, t={t}, fraction={frac} ~ {float(frac):.4f}) "
            f">=1/2 on {self.half_holds}/{self.pairs_checked} pairs; "
            f"max |ACTIVE(t)|={self.max_active}"
        )


def best_coverage(schedule: Schedule, t0: int, t: int) -> tuple[Fraction, Optional[Interval]]:
    """Best fraction of rounds ``[t0, t]`` seen by an instance active at ``t+1``
    that never trained on rounds before ``t0``."""
    best: Optional[Interval] = None
    for u in active(schedule, t + 1):
        if u.start >= t0 and (best is None or u.start < best.start):
            best = u
    if best is None or best.start > t:
        return Fraction(0), best
    return Fraction(t - best.start + 1, t - t0 + 1), best


def verify_coverage(horizon: Horizon | int, schedule: Optional[Schedule] = None) -> CoverageReport:
    """Check every pair ``1 <= t0 <= t < T`` for a 1/4 covering fraction.

    With ``schedule`` omitted the MRI schedule of ``horizon`` is used.
    """
    h = _as_horizon(horizon)
    sched = schedule if schedule is not None else mri_intervals(h)
    worst: tuple[int, int, Fraction] = (1, 1, Fraction(1))
    failures = []
    half = 0
    pairs = 0
    quarter = Fraction(1, 4)
    for t in range(1, h.T):
        starts = sorted(u.start for u in active(sched, t + 1))
        for t0 in range(1, t + 1):
            # Earliest start >= t0 gives the largest covered share.
            s = next((s for s in starts if s >= t0), None)
            frac = Fraction(0) if s is None or s > t else Fraction(t - s + 1, t - t0 + 1)
            pairs += 1
            if frac >= Fraction(1, 2):
                half += 1
            if frac < quarter:
                failures.append((t0, t, frac))
            if frac < worst[2]:
                worst = (t0, t, frac)
    max_active = max(len(active(sched, t)) for t in range(1, h.T + 1))
    return CoverageReport(
        horizon=h,
        worst_case=worst,
        passed=not failures,
        pairs_checked=pairs,
        half_holds=half,
        failures=failures,
        max_active=max_active,
    )


def max_active_size(schedule: Schedule) -> int:
    return max(len(active(schedule, t)) for t in range(1, schedule.T + 1))


def log2_exact(n: int) -> int:
    if n < 1 or n & (n - 1):
        raise ValueError(f"{n} is not a power of two")
    return int(math.log2(n))
