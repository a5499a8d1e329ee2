"""Overlap-aware iteration-time model.

During backprop, gradient groups become ready one after another; a single
serialized channel compresses and communicates them in that order.  A group
can start only when both its gradients are ready and the channel is free:

    start_i  = max(finish_{i-1}, ready_i)
    finish_i = start_i + h(x_i) + g(x_i)

Iteration time is the last finish.  The overlap term is defined by the
identity ``T = A + sum(h) + sum(g) - overlap``: whatever portion of the
channel work was hidden behind compute.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
import numpy as np

from .compressors import CompressorSpec, payload_bytes
from .costmodel import CostParams, g_cost, h_cost
from .profiles import ModelProfile, Partition


@dataclass(frozen=True)
class SimConfig:
    """Everything the iteration-time model needs.

    Costs are taken as given: scale them to the worker count and collective
    first (costmodel.scale_comm_params).  ``n_workers`` feeds throughput
    conversion, not the pipeline itself.
    """

    profile: ModelProfile
    partition: Partition
    spec: CompressorSpec
    costs: CostParams
    n_workers: int = 1
    g_on_payload: bool = True

    def __post_init__(self):
        if self.partition.n_tensors != self.profile.n_tensors:
            raise ValueError(
                f"partition covers {self.partition.n_tensors} tensors, "
                f"profile has {self.profile.n_tensors}"
            )
        if self.n_workers < 1:
            raise ValueError("n_workers must be >= 1")

    def with_partition(self, partition: Partition) -> "SimConfig":
        return SimConfig(
            profile=self.profile,
            partition=partition,
            spec=self.spec,
            costs=self.costs,
            n_workers=self.n_workers,
            g_on_payload=self.g_on_payload,
        )


@dataclass(frozen=True)
class GroupTiming:
    ready_ms: float
    start_ms: float
    finish_ms: float


@dataclass(frozen=True)
class SimReport:
    """Iteration-time breakdown.  ``overlap_ms`` is derived from the identity
    iteration = compute + compression + communication - overlap."""

    iteration_ms: float
    compute_ms: float
    compression_ms: float
    communication_ms: float
    overlap_ms: float
    per_group: tuple[GroupTiming, ...]

    def to_dict(self) -> dict:
        return {
            "iteration_ms": self.iteration_ms,
            "compute_ms": self.compute_ms,
            "compression_ms": self.compression_ms,
            "communication_ms": self.communication_ms,
            "overlap_ms": self.overlap_ms,
            "per_group": [
                {"ready_ms": g.ready_ms, "start_ms": g.start_ms, "finish_ms": g.finish_ms}
                for g in self.per_group
            ],
        }


def ready_times(profile: ModelProfile, partition: Partition) -> list[float]:
    """Cumulative compute time through the last tensor of each group."""
    if partition.n_tensors != profile.n_tensors:
        raise ValueError("partition does not match profile")
    cumulative = np.cumsum(profile.compute_times())
    return [float(cumulative[end - 1]) for _, end in partition.group_ranges()]


def comm_elements(spec: CompressorSpec, group_size: int, g_on_payload: bool) -> float:
    """Element count the communication cost is evaluated at.

    With ``g_on_payload`` the compressed wire size (in 4-byte element
    equivalents) is used; otherwise the literal group size.
    """
    if g_on_payload:
        return payload_bytes(spec, group_size) / 4.0
    return float(group_size)


def simulate_iteration(config: SimConfig) -> SimReport:
    """Run the serialized-channel recurrence and report the breakdown."""
    sizes = config.partition.group_sizes(config.profile)
    ready = ready_times(config.profile, config.partition)
    h_terms = [h_cost(config.costs, x) for x in sizes]
    g_terms = [
        g_cost(config.costs, comm_elements(config.spec, x, config.g_on_payload)) for x in sizes
    ]

    per_group = []
    finish = 0.0
    for r, h, g in zip(ready, h_terms, g_terms):
        start = max(finish, r)
        finish = start + h + g
        per_group.append(GroupTiming(ready_ms=r, start_ms=start, finish_ms=finish))

    compute = ready[-1]
    total_h = math.fsum(h_terms)
    total_g = math.fsum(g_terms)
    iteration = finish
    overlap = compute + total_h + total_g - iteration
    return SimReport(
        iteration_ms=iteration,
        compute_ms=compute,
        compression_ms=total_h,
        communication_ms=total_g,
        overlap_ms=overlap,
        per_group=tuple(per_group),
    )


def objective_F(config: SimConfig) -> float:
    """Iteration time of the configuration; the quantity partition search minimizes."""
    return simulate_iteration(config).iteration_ms


def scaling_factor(t1_speed: float, tn_speed: float, n: int) -> float:
    """Throughput with n workers relative to n times single-worker throughput."""
    if t1_speed <= 0:
        raise ValueError("single-worker speed must be positive")
    if n < 1:
        raise ValueError("n must be >= 1")
    return tn_speed / (n * t1_speed)


def predict_speed(config: SimConfig, batch: int) -> float:
    """Samples per second: n workers each consuming ``batch`` samples per iteration."""
    t_ms = objective_F(config)
    if t_ms <= 0:
        raise ValueError("iteration time must be positive")
    return config.n_workers * batch / (t_ms / 1e3)
