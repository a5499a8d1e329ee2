"""Partition search: exhaustive oracle and logarithmic heuristics.

The iteration-time objective over two groups is unimodal in the split
position: moving the cut later grows the hidden (overlapped) share of the
first group's work until the channel becomes the bottleneck, after which it
only delays the tail.  The searches exploit this with bisection on the
discrete difference sign, then certify the answer with a small local scan
(``unimodal_guard``) so a noisy or mildly non-unimodal objective cannot
silently return an uncertified point.  For y > 2 groups the first y-2
boundaries are enumerated and the last one is searched the same way.
"""

from __future__ import annotations

import statistics
from dataclasses import dataclass
from itertools import combinations
from typing import Callable, Optional, Sequence

from .profiles import ModelProfile, Partition, enumerate_partitions
from .simulator import SimConfig, objective_F

Evaluator = Callable[[Partition], float]


@dataclass
class SearchConfig:
    """Knobs of the heuristic search.

    ``alpha`` is the marginal-benefit fraction: stop once adding a group
    improves the objective by less than ``alpha * previous best``.
    """

    Y: int = 2
    alpha: float = 0.02
    evaluator: Optional[Evaluator] = None
    unimodal_guard: int = 3

    def __post_init__(self):
        if self.Y < 2:
            raise ValueError(f"Y must be >= 2, got {self.Y}")
        if not (0.0 < self.alpha < 1.0):
            raise ValueError(f"alpha must be in (0, 1), got {self.alpha}")
        if self.unimodal_guard < 0:
            raise ValueError("unimodal_guard must be >= 0")


@dataclass(frozen=True)
class SearchResult:
    partition: Partition
    F_ms: float
    evaluations: int
    per_y: tuple[tuple[int, float], ...]
    termination: str  # worse_than_prev | marginal_benefit | reached_Y | exhaustive
    log: tuple[tuple[tuple[int, ...], float], ...] = ()

    def to_dict(self) -> dict:
        return {
            "boundaries": list(self.partition.boundaries),
            "n_tensors": self.partition.n_tensors,
            "y": self.partition.y,
            "F_ms": self.F_ms,
            "evaluations": self.evaluations,
            "per_y": [{"y": y, "F_min_ms": f} for y, f in self.per_y],
            "termination": self.termination,
            "log": [{"boundaries": list(b), "F_ms": f} for b, f in self.log],
        }


class _CountingEvaluator:
    """Memoizes partition evaluations and records them in call order."""

    def __init__(self, evaluate: Evaluator):
        self._evaluate = evaluate
        self.cache: dict[tuple[int, ...], float] = {}
        self.log: list[tuple[tuple[int, ...], float]] = []

    def __call__(self, partition: Partition) -> float:
        key = partition.boundaries
        if key not in self.cache:
            value = float(self._evaluate(partition))
            self.cache[key] = value
            self.log.append((key, value))
        return self.cache[key]

    @property
    def evaluations(self) -> int:
        return len(self.cache)


def analytic_evaluator(config: SimConfig) -> Evaluator:
    """Evaluator backed by the iteration-time model; the partition in
    ``config`` is a placeholder replaced per candidate."""

    def evaluate(partition: Partition) -> float:
        return objective_F(config.with_partition(partition))

    return evaluate


def measured_evaluator(trainer_handle, repetitions: int = 20) -> Evaluator:
    """Evaluator that times real training iterations (median of repetitions)."""
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")

    def evaluate(partition: Partition) -> float:
        times = [trainer_handle.timed_iteration(partition) for _ in range(repetitions)]
        return statistics.median(times)

    return evaluate


def _argmin_last_boundary(
    evaluate: _CountingEvaluator,
    n_tensors: int,
    prefix: tuple[int, ...],
    lo: int,
    hi: int,
    guard: int,
) -> tuple[int, float]:
    """Smallest minimizer of F over the last boundary j in [lo, hi].

    Bisects on the sign of F(j+1) - F(j) assuming unimodality, then scans
    +-guard around the candidate and returns the best point actually seen
    (ties to the smaller index).
    """
    seen: dict[int, float] = {}

    def f(j: int) -> float:
        if j not in seen:
            seen[j] = evaluate(Partition(n_tensors, prefix + (j,)))
        return seen[j]

    a, b = lo, hi
    while a < b:
        mid = (a + b) // 2
        if f(mid) <= f(mid + 1):
            b = mid
        else:
            a = mid + 1
    for j in range(max(lo, a - guard), min(hi, a + guard) + 1):
        f(j)
    best = min(seen, key=lambda j: (seen[j], j))
    return best, seen[best]


def optimal_split_y2(
    evaluate: Evaluator,
    profile: ModelProfile,
    unimodal_guard: int = 3,
) -> tuple[int, float]:
    """Best two-group split index, found in O(log N) evaluations."""
    n = profile.n_tensors
    if n < 2:
        raise ValueError("need at least 2 tensors to split")
    counting = evaluate if isinstance(evaluate, _CountingEvaluator) else _CountingEvaluator(evaluate)
    return _argmin_last_boundary(counting, n, (), 1, n - 1, unimodal_guard)


def optimal_partition_y(
    evaluate: Evaluator,
    profile: ModelProfile,
    y: int,
    unimodal_guard: int = 3,
) -> tuple[Partition, float]:
    """Best partition with exactly y groups.

    Enumerates the first y-2 boundaries and solves the last by the unimodal
    search, visiting O(N^(y-2) log N) candidates.  Ties break to the
    lexicographically smaller boundary list.
    """
    n = profile.n_tensors
    if not (2 <= y <= n):
        raise ValueError(f"y must be in [2, {n}], got {y}")
    counting = evaluate if isinstance(evaluate, _CountingEvaluator) else _CountingEvaluator(evaluate)
    best_partition = None
    best_value = None
    # prefixes stop at n-2 so the searched final boundary has room
    for prefix in combinations(range(1, n - 1), y - 2):
        lo = prefix[-1] + 1 if prefix else 1
        j, value = _argmin_last_boundary(counting, n, prefix, lo, n - 1, unimodal_guard)
        if best_value is None or value < best_value:
            best_value = value
            best_partition = Partition(n, prefix + (j,))
    assert best_partition is not None
    return best_partition, best_value


def exhaustive_search(
    evaluate: Evaluator,
    profile: ModelProfile,
    y_max: Optional[int] = None,
    max_tensors: Optional[int] = None,
) -> SearchResult:
    """Evaluate every partition with y <= y_max; the global optimum oracle.

    Ties break to smaller y, then lexicographically smaller boundaries
    (guaranteed by enumeration order).
    """
    counting = _CountingEvaluator(evaluate)
    best_partition = None
    best_value = None
    per_y: dict[int, float] = {}
    for partition in enumerate_partitions(profile, y_max=y_max, max_tensors=max_tensors):
        value = counting(partition)
        y = partition.y
        if y not in per_y or value < per_y[y]:
            per_y[y] = value
        if best_value is None or value < best_value:
            best_value = value
            best_partition = partition
    return SearchResult(
        partition=best_partition,
        F_ms=best_value,
        evaluations=counting.evaluations,
        per_y=tuple(sorted(per_y.items())),
        termination="exhaustive",
        log=tuple(counting.log),
    )


def heuristic_search(config: SearchConfig, profile: ModelProfile) -> SearchResult:
    """Grow the group count until it stops paying off.

    Starting from the unpartitioned model, find the best partition for each
    y = 2..Y.  Stop early when y groups are worse than y-1 (return the y-1
    result) or when the improvement falls below alpha * F_min(y-1) (return
    the y result).
    """
    if config.evaluator is None:
        raise ValueError("SearchConfig.evaluator is required")
    n = profile.n_tensors
    if config.Y > n:
        raise ValueError(f"Y={config.Y} exceeds the {n}-tensor model")
    counting = _CountingEvaluator(config.evaluator)

    def result(partition: Partition, value: float, per_y, termination: str) -> SearchResult:
        return SearchResult(
            partition=partition,
            F_ms=value,
            evaluations=counting.evaluations,
            per_y=tuple(per_y),
            termination=termination,
            log=tuple(counting.log),
        )

    best = {1: (Partition.merged(n), counting(Partition.merged(n)))}
    per_y = [(1, best[1][1])]
    for y in range(2, config.Y + 1):
        partition, value = optimal_partition_y(counting, profile, y, config.unimodal_guard)
        best[y] = (partition, value)
        per_y.append((y, value))
        prev = best[y - 1][1]
        if prev < value:
            return result(*best[y - 1], per_y, "worse_than_prev")
        if prev - value < config.alpha * prev:
            return result(*best[y], per_y, "marginal_benefit")
    return result(*best[config.Y], per_y, "reached_Y")


def online_search(
    config: SearchConfig,
    trainer_handle,
    repetitions: int = 20,
) -> SearchResult:
    """Heuristic search driven by measured iteration times.

    Each candidate partition is timed ``repetitions`` times (median taken);
    the winning partition is pinned on the trainer for the rest of the run.
    """
    measured = measured_evaluator(trainer_handle, repetitions)
    profile = trainer_handle.tensor_profile()
    result = heuristic_search(
        SearchConfig(
            Y=config.Y,
            alpha=config.alpha,
            evaluator=measured,
            unimodal_guard=config.unimodal_guard,
        ),
        profile,
    )
    if hasattr(trainer_handle, "pin_partition"):
        trainer_handle.pin_partition(result.partition)
    return result


def naive_partition(profile_or_n, y: int) -> Partition:
    """Evenly split the tensor count into y groups, remainder to the front."""
    n = profile_or_n.n_tensors if isinstance(profile_or_n, ModelProfile) else int(profile_or_n)
    if not (1 <= y <= n):
        raise ValueError(f"y must be in [1, {n}], got {y}")
    base, rem = divmod(n, y)
    counts = [base + 1] * rem + [base] * (y - rem)
    return Partition.from_group_counts(counts)


def split_scan(evaluate: Evaluator, profile: ModelProfile) -> list[float]:
    """F at every two-group split index 1..N-1; the full-scan audit."""
    n = profile.n_tensors
    return [float(evaluate(Partition(n, (j,)))) for j in range(1, n)]


def unimodality_counterexample(values: Sequence[float]) -> Optional[int]:
    """Index witnessing a rise followed by a strict fall, or None if the
    sequence is unimodal (non-increasing then non-decreasing)."""
    rising = False
    for i in range(1, len(values)):
        if values[i] > values[i - 1]:
            rising = True
        elif rising and values[i] < values[i - 1]:
            return i
    return None
