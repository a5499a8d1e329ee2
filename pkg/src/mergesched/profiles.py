"""Model tensor profiles and contiguous partitions.

A model is represented by its gradient tensors in backprop-readiness order:
index 0 is the first tensor whose gradient becomes available (the model's
last layer).  A partition groups consecutive tensors; tensors in one group
are encoded, exchanged and decoded together.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from itertools import combinations
from typing import Iterator, Optional, Sequence, Union

import numpy as np

# 2^(N-1) partitions exist for N tensors; full enumeration beyond this many
# tensors is refused unless the caller (or MERGESCHED_GUARD_N) raises the cap.
DEFAULT_ENUMERATION_GUARD = 24

GUARD_ENV_VAR = "MERGESCHED_GUARD_N"


def _enumeration_guard(override: Optional[int]) -> int:
    if override is not None:
        return int(override)
    env = os.environ.get(GUARD_ENV_VAR)
    if env is not None:
        return int(env)
    return DEFAULT_ENUMERATION_GUARD


@dataclass(frozen=True)
class LayerProfile:
    """One gradient tensor: its position in backprop order, element count,
    and the backprop compute time (ms) that produces it."""

    index: int
    size: int
    compute_time: float

    def __post_init__(self):
        if self.size < 1:
            raise ValueError(f"layer {self.index}: size must be >= 1, got {self.size}")
        if self.compute_time < 0:
            raise ValueError(
                f"layer {self.index}: compute_time must be >= 0, got {self.compute_time}"
            )


@dataclass(frozen=True)
class ModelProfile:
    """Ordered tensor profile of a model.

    Totals are always recomputed from the layer list, never taken from input.
    """

    name: str
    layers: tuple[LayerProfile, ...]
    total_size: int = field(init=False)
    total_compute: float = field(init=False)

    def __post_init__(self):
        if not self.layers:
            raise ValueError("profile needs at least one layer")
        object.__setattr__(self, "layers", tuple(self.layers))
        for want, layer in enumerate(self.layers):
            if layer.index != want:
                raise ValueError(f"layer indices must be 0..N-1 in order, got {layer.index} at {want}")
        object.__setattr__(self, "total_size", sum(l.size for l in self.layers))
        object.__setattr__(self, "total_compute", math.fsum(l.compute_time for l in self.layers))

    @property
    def n_tensors(self) -> int:
        return len(self.layers)

    def sizes(self) -> np.ndarray:
        return np.array([l.size for l in self.layers], dtype=np.int64)

    def compute_times(self) -> np.ndarray:
        return np.array([l.compute_time for l in self.layers], dtype=np.float64)

    def to_document(self) -> dict:
        return {
            "name": self.name,
            "layers": [{"size": l.size, "compute_ms": l.compute_time} for l in self.layers],
        }


@dataclass(frozen=True)
class Partition:
    """Contiguous grouping of the first ``n_tensors`` tensors.

    ``boundaries`` are cut positions in [1, N-1]: a boundary b means group
    break between tensor b-1 and tensor b.  No boundaries = one merged group;
    all N-1 boundaries = layer-wise.
    """

    n_tensors: int
    boundaries: tuple[int, ...]

    def __post_init__(self):
        if self.n_tensors < 1:
            raise ValueError("partition needs at least one tensor")
        object.__setattr__(self, "boundaries", tuple(int(b) for b in self.boundaries))
        prev = 0
        for b in self.boundaries:
            if not (1 <= b <= self.n_tensors - 1):
                raise ValueError(f"boundary {b} outside [1, {self.n_tensors - 1}]")
            if b <= prev:
                raise ValueError(f"boundaries must be strictly increasing, got {self.boundaries}")
            prev = b

    @property
    def y(self) -> int:
        """Number of groups."""
        return len(self.boundaries) + 1

    def group_ranges(self) -> list[tuple[int, int]]:
        """Half-open tensor-index ranges [(start, end), ...] of each group."""
        edges = (0,) + self.boundaries + (self.n_tensors,)
        return [(edges[i], edges[i + 1]) for i in range(len(edges) - 1)]

    def group_counts(self) -> list[int]:
        return [end - start for start, end in self.group_ranges()]

    def group_sizes(self, profile: ModelProfile) -> list[int]:
        """Element counts x_i of each group under the given profile."""
        if profile.n_tensors != self.n_tensors:
            raise ValueError(
                f"partition is over {self.n_tensors} tensors, profile has {profile.n_tensors}"
            )
        sizes = profile.sizes()
        return [int(sizes[start:end].sum()) for start, end in self.group_ranges()]

    @classmethod
    def merged(cls, n_tensors: int) -> "Partition":
        """Single group holding every tensor (y = 1)."""
        return cls(n_tensors, ())

    @classmethod
    def layer_wise(cls, n_tensors: int) -> "Partition":
        """One group per tensor (y = N)."""
        return cls(n_tensors, tuple(range(1, n_tensors)))

    @classmethod
    def from_group_counts(cls, counts: Sequence[int]) -> "Partition":
        """Build from per-group tensor counts, e.g. [2, 2] for N=4."""
        if any(c < 1 for c in counts):
            raise ValueError(f"group counts must be >= 1, got {list(counts)}")
        total = sum(counts)
        cuts = np.cumsum(counts)[:-1]
        return cls(total, tuple(int(c) for c in cuts))


def load_profile(document: Union[str, dict]) -> ModelProfile:
    """Parse and validate a profile document.

    The document is a JSON object (or already-parsed mapping):
    ``{"name": str, "layers": [{"size": int, "compute_ms": float}, ...]}``
    with layers listed in backprop order.
    """
    if isinstance(document, str):
        try:
            document = json.loads(document)
        except json.JSONDecodeError as exc:
            raise ValueError(f"profile document is not valid JSON: {exc}") from exc
    if not isinstance(document, dict):
        raise ValueError(f"profile document must be an object, got {type(document).__name__}")
    try:
        name = document["name"]
        raw_layers = document["layers"]
    except KeyError as exc:
        raise ValueError(f"profile document missing key {exc}") from exc
    if not isinstance(raw_layers, list) or not raw_layers:
        raise ValueError("profile 'layers' must be a non-empty list")
    layers = []
    for i, entry in enumerate(raw_layers):
        try:
            size = entry["size"]
            compute = entry["compute_ms"]
        except (TypeError, KeyError):
            raise ValueError(f"layer {i}: expected object with 'size' and 'compute_ms'") from None
        if not isinstance(size, int) or isinstance(size, bool):
            raise ValueError(f"layer {i}: size must be an integer, got {size!r}")
        layers.append(LayerProfile(index=i, size=size, compute_time=float(compute)))
    return ModelProfile(name=str(name), layers=tuple(layers))


def load_profile_file(path: Union[str, os.PathLike]) -> ModelProfile:
    with open(path, "r", encoding="utf-8") as fh:
        return load_profile(fh.read())


def _draw(rng: np.random.Generator, dist, n: int) -> np.ndarray:
    """Sample n values from a distribution spec.

    Accepted forms: ("constant", v), ("uniform", lo, hi),
    ("loguniform", lo, hi), or the same as {"kind": ..., ...} mappings.
    """
    if isinstance(dist, dict):
        kind = dist.get("kind")
        if kind == "constant":
            dist = ("constant", dist["value"])
        elif kind in ("uniform", "loguniform"):
            dist = (kind, dist["low"], dist["high"])
        else:
            raise ValueError(f"unknown distribution kind {kind!r}")
    kind = dist[0]
    if kind == "constant":
        return np.full(n, float(dist[1]))
    lo, hi = float(dist[1]), float(dist[2])
    if not (hi >= lo):
        raise ValueError(f"distribution bounds out of order: {dist}")
    if kind == "uniform":
        return rng.uniform(lo, hi, size=n)
    if kind == "loguniform":
        if lo <= 0:
            raise ValueError("loguniform needs positive bounds")
        return np.exp(rng.uniform(np.log(lo), np.log(hi), size=n))
    raise ValueError(f"unknown distribution kind {kind!r}")


def synth_profile(
    n_tensors: int,
    size_distribution,
    compute_distribution,
    seed: int,
    name: str = "synthetic",
) -> ModelProfile:
    """Generate a deterministic synthetic profile from distribution specs."""
    if n_tensors < 1:
        raise ValueError("n_tensors must be >= 1")
    rng = np.random.default_rng(seed)
    sizes = np.maximum(1, np.rint(_draw(rng, size_distribution, n_tensors))).astype(np.int64)
    computes = np.maximum(0.0, _draw(rng, compute_distribution, n_tensors))
    layers = tuple(
        LayerProfile(index=i, size=int(sizes[i]), compute_time=float(computes[i]))
        for i in range(n_tensors)
    )
    return ModelProfile(name=name, layers=layers)


def count_partitions(n_tensors: int, y: Optional[int] = None) -> int:
    """Number of contiguous partitions: C(N-1, y-1) for fixed y, else 2^(N-1)."""
    if n_tensors < 1:
        raise ValueError("n_tensors must be >= 1")
    if y is None:
        return 2 ** (n_tensors - 1)
    if not (1 <= y <= n_tensors):
        raise ValueError(f"y must be in [1, {n_tensors}], got {y}")
    return math.comb(n_tensors - 1, y - 1)


def enumerate_partitions(
    profile_or_n: Union[ModelProfile, int],
    y_max: Optional[int] = None,
    max_tensors: Optional[int] = None,
) -> Iterator[Partition]:
    """Yield every contiguous partition with y <= y_max exactly once.

    Partitions come out in (y ascending, boundaries lexicographic) order, so
    the stream is deterministic.  Enumeration of all 2^(N-1) partitions is
    guarded; pass ``max_tensors`` or set MERGESCHED_GUARD_N to override.
    """
    n = profile_or_n.n_tensors if isinstance(profile_or_n, ModelProfile) else int(profile_or_n)
    if n < 1:
        raise ValueError("need at least one tensor")
    guard = _enumeration_guard(max_tensors)
    if n > guard:
        raise ValueError(
            f"enumerating partitions of {n} tensors exceeds the guard ({guard}); "
            f"override via max_tensors or {GUARD_ENV_VAR}"
        )
    top = n if y_max is None else min(int(y_max), n)
    if top < 1:
        raise ValueError(f"y_max must be >= 1, got {y_max}")
    for y in range(1, top + 1):
        for cuts in combinations(range(1, n), y - 1):
            yield Partition(n, cuts)
