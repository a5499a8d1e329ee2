"""In-process synchronous data-parallel SGD with grouped gradient exchange.

Each of n workers holds a full parameter replica.  Every iteration computes
local gradients, then per partition group: encode (with per-worker residual
state), exchange payloads through an in-memory collective, aggregate by
mean in fixed worker order, and apply the same SGD update on every replica.
Replicas therefore stay bitwise identical, which the tests assert.

Two desk-scale tasks stand in for image benchmarks: a quadratic bowl and a
two-layer MLP on Gaussian blobs.  Both expose analytic gradients (checked
against finite differences) and a flat parameter vector laid out in
backprop-readiness order, so partitions apply directly.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from .compressors import CompressorSpec, ResidualState, aggregate, derive_seed, encode
from .profiles import LayerProfile, ModelProfile, Partition
from .simulator import SimConfig, objective_F


class TrainingDiverged(RuntimeError):
    """Loss became non-finite; carries the partial report."""

    def __init__(self, message: str, report: "TrainReport"):
        super().__init__(message)
        self.report = report


class _DivergedSignal(RuntimeError):
    """Raised inside a step when the loss or the float32 gradient view stops
    being finite; train() converts it into TrainingDiverged with a report."""

    def __init__(self, loss: float):
        super().__init__("non-finite loss or gradient")
        self.loss = loss


# --- tasks -------------------------------------------------------------------

class QuadraticTask:
    """0.5 * ||x - target||^2 over a single parameter tensor.

    The gradient is deterministic (the zero-noise case of a stochastic
    oracle), which makes convergence behaviour exactly reproducible.
    """

    kind = "quadratic"

    def __init__(self, dimension: int, target: np.ndarray):
        if dimension < 1:
            raise ValueError("dimension must be >= 1")
        target = np.asarray(target, dtype=np.float64).reshape(-1)
        if len(target) != dimension:
            raise ValueError(f"target has {len(target)} elements, expected {dimension}")
        if not np.isfinite(target).all():
            raise ValueError("target must be finite")
        self.dimension = dimension
        self.target = target

    def tensor_sizes(self) -> list[int]:
        return [self.dimension]

    def init_params(self, rng: np.random.Generator) -> np.ndarray:
        return np.zeros(self.dimension, dtype=np.float64)

    def sample_batch(self, rng: np.random.Generator, size: int):
        return None  # full deterministic gradient

    def loss_and_grad(self, params: np.ndarray, batch) -> tuple[float, np.ndarray]:
        diff = params - self.target
        return 0.5 * float(np.dot(diff, diff)), diff

    def metric_name(self) -> str:
        return "loss"

    def final_metric(self, params: np.ndarray) -> float:
        return self.loss_and_grad(params, None)[0]

    def to_document(self) -> dict:
        return {
            "kind": self.kind,
            "dimension": self.dimension,
            "target": self.target.tolist(),
        }


class BlobsMLPTask:
    """Two-layer tanh MLP classifying Gaussian blobs.

    Parameter tensors in backprop-readiness order (output layer first):
    W2 (hidden x classes), b2, W1 (features x hidden), b1.
    """

    kind = "blobs_mlp"

    def __init__(
        self,
        features: int,
        classes: int,
        hidden: int,
        samples: int,
        seed: int,
        blob_std: float = 0.6,
    ):
        if min(features, classes, hidden) < 1 or samples < classes:
            raise ValueError("invalid blobs_mlp dimensions")
        self.features = features
        self.classes = classes
        self.hidden = hidden
        self.samples = samples
        self.seed = seed
        self.blob_std = blob_std

        rng = np.random.default_rng(seed)
        centers = rng.uniform(-4.0, 4.0, size=(classes, features))
        labels = np.concatenate(
            [np.arange(classes)] * (samples // classes) + [np.arange(samples % classes)]
        )
        rng.shuffle(labels)
        self.labels = labels
        self.data = centers[labels] + rng.normal(0.0, blob_std, size=(samples, features))

    def tensor_sizes(self) -> list[int]:
        return [
            self.hidden * self.classes,  # W2
            self.classes,  # b2
            self.features * self.hidden,  # W1
            self.hidden,  # b1
        ]

    def _unpack(self, params: np.ndarray):
        sizes = self.tensor_sizes()
        offsets = np.cumsum([0] + sizes)
        w2 = params[offsets[0]:offsets[1]].reshape(self.hidden, self.classes)
        b2 = params[offsets[1]:offsets[2]]
        w1 = params[offsets[2]:offsets[3]].reshape(self.features, self.hidden)
        b1 = params[offsets[3]:offsets[4]]
        return w1, b1, w2, b2

    def init_params(self, rng: np.random.Generator) -> np.ndarray:
        w1 = rng.normal(0.0, 1.0 / np.sqrt(self.features), size=(self.features, self.hidden))
        w2 = rng.normal(0.0, 1.0 / np.sqrt(self.hidden), size=(self.hidden, self.classes))
        return np.concatenate(
            [w2.ravel(), np.zeros(self.classes), w1.ravel(), np.zeros(self.hidden)]
        )

    def sample_batch(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return rng.integers(0, self.samples, size=size)

    def loss_and_grad(self, params: np.ndarray, batch) -> tuple[float, np.ndarray]:
        idx = np.arange(self.samples) if batch is None else batch
        x = self.data[idx]
        y = self.labels[idx]
        w1, b1, w2, b2 = self._unpack(params)

        hidden_pre = x @ w1 + b1
        hidden = np.tanh(hidden_pre)
        logits = hidden @ w2 + b2
        shifted = logits - logits.max(axis=1, keepdims=True)
        exp = np.exp(shifted)
        probs = exp / exp.sum(axis=1, keepdims=True)
        n = len(idx)
        loss = -float(np.log(probs[np.arange(n), y] + 1e-300).mean())

        dlogits = probs.copy()
        dlogits[np.arange(n), y] -= 1.0
        dlogits /= n
        dw2 = hidden.T @ dlogits
        db2 = dlogits.sum(axis=0)
        dhidden = dlogits @ w2.T
        dpre = dhidden * (1.0 - hidden ** 2)
        dw1 = x.T @ dpre
        db1 = dpre.sum(axis=0)
        grad = np.concatenate([dw2.ravel(), db2, dw1.ravel(), db1])
        return loss, grad

    def accuracy(self, params: np.ndarray) -> float:
        w1, b1, w2, b2 = self._unpack(params)
        hidden = np.tanh(self.data @ w1 + b1)
        logits = hidden @ w2 + b2
        return float((logits.argmax(axis=1) == self.labels).mean())

    def metric_name(self) -> str:
        return "accuracy"

    def final_metric(self, params: np.ndarray) -> float:
        return self.accuracy(params)

    def to_document(self) -> dict:
        return {
            "kind": self.kind,
            "features": self.features,
            "classes": self.classes,
            "hidden": self.hidden,
            "samples": self.samples,
            "seed": self.seed,
            "blob_std": self.blob_std,
        }


def build_task(doc: dict):
    """Instantiate a task from its config document."""
    if not isinstance(doc, dict) or "kind" not in doc:
        raise ValueError("task document needs a 'kind' field")
    kind = doc["kind"]
    if kind == "quadratic":
        if "target" in doc:
            target = np.asarray(doc["target"], dtype=np.float64)
        else:
            rng = np.random.default_rng(doc.get("target_seed", 0))
            target = rng.standard_normal(doc["dimension"]) * doc.get("target_scale", 1.0)
        return QuadraticTask(dimension=doc["dimension"], target=target)
    if kind == "blobs_mlp":
        return BlobsMLPTask(
            features=doc["features"],
            classes=doc["classes"],
            hidden=doc["hidden"],
            samples=doc["samples"],
            seed=doc["seed"],
            blob_std=doc.get("blob_std", 0.6),
        )
    raise ValueError(f"unknown task kind {kind!r}")


# --- configuration and report --------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    """One training run.

    ``batch_size`` is the total across workers; each worker consumes
    batch_size / n_workers samples per step.  With ``shared_data`` every
    worker sees the same samples (the setting the convergence analysis
    assumes); without it workers get disjoint shards of the draw.
    ``partition`` is a Partition or the literals "layer_wise" / "merged_all".
    """

    task: Union[dict, QuadraticTask, BlobsMLPTask]
    n_workers: int
    batch_size: int
    lr: float
    iterations: int
    spec: CompressorSpec
    partition: Union[Partition, str] = "merged_all"
    seed: int = 0
    shared_data: bool = True

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be > 0")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.n_workers < 1:
            raise ValueError("n_workers must be >= 1")
        if self.batch_size % self.n_workers != 0:
            raise ValueError(
                f"batch_size {self.batch_size} not divisible by n_workers {self.n_workers}"
            )


@dataclass(frozen=True)
class TrainReport:
    loss_curve: tuple[float, ...]
    final_metric: float
    metric_name: str
    iteration_times_ms: tuple[float, ...]
    wall_ms: float

    def to_dict(self) -> dict:
        return {
            "loss_curve": list(self.loss_curve),
            "final_metric": self.final_metric,
            "metric_name": self.metric_name,
            "iteration_times_ms": list(self.iteration_times_ms),
            "wall_ms": self.wall_ms,
        }


# --- trainer -------------------------------------------------------------------

class Trainer:
    """Holds replicas, codec states, and the iteration loop.

    Also serves as the measured-timing handle for online partition search:
    ``timed_iteration`` runs one real iteration under any candidate
    partition and ``pin_partition`` fixes the choice afterwards.
    """

    def __init__(self, config: TrainConfig):
        self.config = config
        self.task = config.task if hasattr(config.task, "tensor_sizes") else build_task(config.task)
        sizes = self.task.tensor_sizes()
        self._offsets = np.cumsum([0] + sizes)
        self._n_tensors = len(sizes)
        self.partition = self._resolve_partition(config.partition)

        rng = np.random.default_rng(config.seed)
        init = self.task.init_params(rng)
        self.workers = [init.copy() for _ in range(config.n_workers)]
        self._batch_rng = np.random.default_rng((config.seed, 0xBA7C4))
        self._states: dict[tuple, Optional[ResidualState]] = {}
        self.iteration = 0

    def _resolve_partition(self, partition: Union[Partition, str]) -> Partition:
        if isinstance(partition, Partition):
            if partition.n_tensors != self._n_tensors:
                raise ValueError(
                    f"partition is over {partition.n_tensors} tensors, "
                    f"task has {self._n_tensors}"
                )
            return partition
        if partition == "layer_wise":
            return Partition.layer_wise(self._n_tensors)
        if partition == "merged_all":
            return Partition.merged(self._n_tensors)
        raise ValueError(f"unknown partition literal {partition!r}")

    def tensor_profile(self) -> ModelProfile:
        """Profile of the task's tensors (sizes only; compute times unknown)."""
        return ModelProfile(
            name=self.task.kind,
            layers=tuple(
                LayerProfile(index=i, size=s, compute_time=0.0)
                for i, s in enumerate(self.task.tensor_sizes())
            ),
        )

    def pin_partition(self, partition: Union[Partition, str]) -> None:
        self.partition = self._resolve_partition(partition)

    def param_spread(self) -> float:
        """Max distance between any replica and worker 0 (0.0 = in sync)."""
        base = self.workers[0]
        spreads = [float(np.max(np.abs(w - base))) for w in self.workers[1:]]
        return max(spreads, default=0.0)

    def _group_slices(self, partition: Partition) -> list[slice]:
        return [
            slice(self._offsets[start], self._offsets[end])
            for start, end in partition.group_ranges()
        ]

    def _draw_batches(self):
        per_worker = self.config.batch_size // self.config.n_workers
        if self.config.shared_data:
            batch = self.task.sample_batch(self._batch_rng, per_worker)
            return [batch] * self.config.n_workers
        draw = self.task.sample_batch(self._batch_rng, self.config.batch_size)
        if draw is None:
            return [None] * self.config.n_workers
        return [draw[w * per_worker:(w + 1) * per_worker] for w in range(self.config.n_workers)]

    def step(self, partition: Optional[Partition] = None) -> float:
        """One synchronous iteration; returns the mean pre-update loss."""
        cfg = self.config
        partition = self.partition if partition is None else partition
        batches = self._draw_batches()

        losses = []
        grads32 = []
        for w in range(cfg.n_workers):
            loss, grad = self.task.loss_and_grad(self.workers[w], batches[w])
            losses.append(loss)
            grads32.append(grad.astype(np.float32))
        mean_loss = float(np.mean(losses))
        if not np.isfinite(mean_loss) or any(not np.isfinite(g).all() for g in grads32):
            raise _DivergedSignal(mean_loss)

        slices = self._group_slices(partition)
        for g, sl in enumerate(slices):
            payloads = []
            for w in range(cfg.n_workers):
                key = (partition.boundaries, w, g)
                payload, new_state = encode(
                    cfg.spec,
                    grads32[w][sl],
                    self._states.get(key),
                    seed=derive_seed(cfg.seed, w, self.iteration, g),
                )
                self._states[key] = new_state
                payloads.append(payload)
            mean = aggregate(cfg.spec, payloads)
            update = cfg.lr * mean.astype(np.float64)
            for w in range(cfg.n_workers):
                self.workers[w][sl] -= update

        self.iteration += 1
        return mean_loss

    def timed_iteration(self, partition: Union[Partition, str, None] = None) -> float:
        """Wall time (ms) of one full iteration under the given partition."""
        if partition is not None and not isinstance(partition, Partition):
            partition = self._resolve_partition(partition)
        t0 = time.perf_counter()
        self.step(partition)
        return (time.perf_counter() - t0) * 1e3

    def train(self) -> TrainReport:
        cfg = self.config
        losses = []
        times = []
        t_start = time.perf_counter()
        for _ in range(cfg.iterations):
            t0 = time.perf_counter()
            try:
                loss = self.step()
            except _DivergedSignal as signal:
                times.append((time.perf_counter() - t0) * 1e3)
                losses.append(signal.loss)
                report = self._report(losses, times, t_start)
                raise TrainingDiverged(
                    f"divergence at iteration {self.iteration + 1}", report
                ) from None
            times.append((time.perf_counter() - t0) * 1e3)
            losses.append(loss)
        return self._report(losses, times, t_start)

    def _report(self, losses, times, t_start) -> TrainReport:
        return TrainReport(
            loss_curve=tuple(losses),
            final_metric=self.task.final_metric(self.workers[0]),
            metric_name=self.task.metric_name(),
            iteration_times_ms=tuple(times),
            wall_ms=(time.perf_counter() - t_start) * 1e3,
        )


def train(config: TrainConfig) -> TrainReport:
    return Trainer(config).train()


def compare(configs: Sequence[TrainConfig], loss_threshold: Optional[float] = None) -> list[dict]:
    """Train each config and tabulate final metrics side by side.

    All configs must share the task and seed so rows differ only in the
    compression scheme.  The identity-compressor row is flagged as baseline.
    """
    if not configs:
        raise ValueError("need at least one config")
    first_task = configs[0].task if isinstance(configs[0].task, dict) else configs[0].task.to_document()
    for c in configs[1:]:
        doc = c.task if isinstance(c.task, dict) else c.task.to_document()
        if doc != first_task or c.seed != configs[0].seed:
            raise ValueError("compare() needs configs sharing task and seed")
    rows = []
    for c in configs:
        report = train(c)
        reached = None
        if loss_threshold is not None:
            hits = [i for i, l in enumerate(report.loss_curve) if l <= loss_threshold]
            reached = (hits[0] + 1) if hits else None
        partition = c.partition if isinstance(c.partition, str) else f"y={c.partition.y}"
        rows.append(
            {
                "algorithm": c.spec.algorithm,
                "partition": partition,
                "baseline": c.spec.algorithm == "identity",
                "iterations": len(report.loss_curve),
                "final_loss": report.loss_curve[-1],
                "final_metric": report.final_metric,
                "metric_name": report.metric_name,
                "iterations_to_threshold": reached,
                "wall_ms": report.wall_ms,
            }
        )
    return rows


class AnalyticTimingStub:
    """Trainer stand-in whose clock is the analytic iteration-time model.

    Used to exercise measured-mode search deterministically; optional
    multiplicative Gaussian noise emulates timing jitter.
    """

    def __init__(self, sim_config: SimConfig, noise_fraction: float = 0.0, seed: int = 0):
        self.sim_config = sim_config
        self.noise_fraction = noise_fraction
        self._rng = np.random.default_rng(seed)
        self.pinned: Optional[Partition] = None

    def tensor_profile(self) -> ModelProfile:
        return self.sim_config.profile

    def timed_iteration(self, partition: Partition) -> float:
        t = objective_F(self.sim_config.with_partition(partition))
        if self.noise_fraction:
            t *= 1.0 + self.noise_fraction * self._rng.standard_normal()
        return t

    def pin_partition(self, partition: Partition) -> None:
        self.pinned = partition
