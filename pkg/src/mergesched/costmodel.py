"""Affine cost model for compression and communication.

Both operations are modeled as latency plus a per-element slope:
``h(x) = B_h + gamma_h * x`` for one encode+decode (+ error-feedback update)
pass over x elements, and ``g(x) = B_g + gamma_g * x`` for exchanging x
elements.  Parameters are fitted from timing samples by ordinary least
squares; ``microbench`` produces such samples for real codecs on this host.
"""

from __future__ import annotations

import statistics
import time
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .compressors import CompressorSpec, ResidualState, decode, encode


@dataclass(frozen=True)
class CostParams:
    """Fitted affine costs, all in ms (slopes in ms per element).

    ``A`` is the per-iteration backprop compute time, carried alongside the
    communication/compression parameters for convenience.
    """

    B_h: float
    gamma_h: float
    B_g: float
    gamma_g: float
    A: float

    def __post_init__(self):
        for name in ("B_h", "gamma_h", "B_g", "gamma_g", "A"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0, got {getattr(self, name)}")

    def to_dict(self) -> dict:
        return {
            "B_h_ms": self.B_h,
            "gamma_h_ms_per_elem": self.gamma_h,
            "B_g_ms": self.B_g,
            "gamma_g_ms_per_elem": self.gamma_g,
            "A_ms": self.A,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "CostParams":
        try:
            return cls(
                B_h=float(doc["B_h_ms"]),
                gamma_h=float(doc["gamma_h_ms_per_elem"]),
                B_g=float(doc["B_g_ms"]),
                gamma_g=float(doc["gamma_g_ms_per_elem"]),
                A=float(doc["A_ms"]),
            )
        except KeyError as exc:
            raise ValueError(f"cost params document missing key {exc}") from exc


@dataclass(frozen=True)
class TimingSample:
    """One measured (size, time) point for either operation kind."""

    size: int
    time: float
    kind: str  # "compression" | "communication"

    def __post_init__(self):
        if self.size < 1:
            raise ValueError(f"sample size must be >= 1, got {self.size}")
        if self.time < 0:
            raise ValueError(f"sample time must be >= 0, got {self.time}")
        if self.kind not in ("compression", "communication"):
            raise ValueError(f"sample kind must be compression|communication, got {self.kind!r}")


def h_cost(params: CostParams, x: float) -> float:
    """Compression cost in ms for a group of x elements."""
    if x < 0:
        raise ValueError("x must be >= 0")
    return params.B_h + params.gamma_h * x


def g_cost(params: CostParams, x: float) -> float:
    """Communication cost in ms for exchanging x elements."""
    if x < 0:
        raise ValueError("x must be >= 0")
    return params.B_g + params.gamma_g * x


class FitResult(NamedTuple):
    B: float
    gamma: float
    residual_norm: float
    intercept_clamped: bool


def fit(samples: Sequence[TimingSample]) -> FitResult:
    """Least-squares fit of (B, gamma) from timing samples.

    Needs at least two samples with two distinct sizes.  A negative fitted
    intercept is clamped to 0 and flagged (the affine model has no use for
    negative latency).
    """
    if len(samples) < 2:
        raise ValueError("need at least 2 samples to fit a line")
    sizes = np.array([s.size for s in samples], dtype=np.float64)
    times = np.array([s.time for s in samples], dtype=np.float64)
    if np.all(sizes == sizes[0]):
        raise ValueError("all sample sizes are equal; the slope is unidentifiable")
    gamma, intercept = np.polyfit(sizes, times, 1)
    clamped = False
    if intercept < 0:
        intercept = 0.0
        clamped = True
    residual = float(np.linalg.norm(times - (intercept + gamma * sizes)))
    return FitResult(float(intercept), float(gamma), residual, clamped)


def microbench(
    spec: CompressorSpec,
    sizes: Iterable[int],
    repetitions: int,
    seed: int = 0,
    warmup: int = 2,
) -> list[TimingSample]:
    """Time encode+decode (plus error-feedback update) for each buffer size.

    Reports the median of ``repetitions`` wall-clock runs per size, after
    ``warmup`` unrecorded runs.  Single-threaded by design; parallel timing
    would corrupt the samples.
    """
    if repetitions < 3:
        raise ValueError(f"repetitions must be >= 3, got {repetitions}")
    rng = np.random.default_rng(seed)
    out = []
    for size in sizes:
        size = int(size)
        buf = rng.standard_normal(size).astype(np.float32)
        state = ResidualState.zeros(size) if spec.uses_error_feedback else None
        durations = []
        for rep in range(warmup + repetitions):
            t0 = time.perf_counter()
            payload, state = encode(spec, buf, state, seed=seed + rep)
            decode(spec, payload)
            elapsed_ms = (time.perf_counter() - t0) * 1e3
            if rep >= warmup:
                durations.append(elapsed_ms)
        out.append(TimingSample(size=size, time=statistics.median(durations), kind="compression"))
    return out


def scale_comm_params(
    params: CostParams,
    n_workers: int,
    collective: str,
    reference_workers: int = 2,
) -> CostParams:
    """Rescale communication costs from their calibration worker count.

    The affine (B_g, gamma_g) subsume the collective's topology; what varies
    with worker count n is the exchanged volume per worker: ring-style dense
    reduction moves ~2(n-1)/n units per element, gather-style exchange of
    per-worker payloads moves ~(n-1).  Both factors are normalized to 1 at
    the calibration count.  n = 1 needs no exchange at all.
    """
    if n_workers < 1:
        raise ValueError("n_workers must be >= 1")
    if reference_workers < 2:
        raise ValueError("reference_workers must be >= 2")
    if collective == "allreduce":
        raw = lambda n: 2.0 * (n - 1) / n
    elif collective == "allgather":
        raw = lambda n: float(n - 1)
    else:
        raise ValueError(f"collective must be allreduce|allgather, got {collective!r}")
    factor = raw(n_workers) / raw(reference_workers)
    return CostParams(
        B_h=params.B_h,
        gamma_h=params.gamma_h,
        B_g=params.B_g * factor,
        gamma_g=params.gamma_g * factor,
        A=params.A,
    )
