"""Merged gradient compression scheduling toolkit.

Data-parallel training spends a large share of each iteration exchanging
gradients.  Compressing them helps only if the encode/decode work does not
eat the savings; merging many small tensors into a few groups amortizes the
per-call overhead but delays when communication can start.  This package
models that trade-off and searches for good groupings:

- ``profiles``:     tensor/compute profiles of models and contiguous partitions
- ``compressors``:  sparsifying and quantizing gradient codecs (with error feedback)
- ``costmodel``:    affine compression/communication cost model and fitting
- ``simulator``:    overlap-aware iteration-time pipeline and scaling factors
- ``scheduler``:    exhaustive and logarithmic partition searches
- ``trainer``:      in-process synchronous multi-worker SGD for convergence checks
- ``cli``:          reproducible experiment commands (bench/fit/search/sweep/train/report)
"""

__version__ = "0.1.0"

from .profiles import LayerProfile, ModelProfile, Partition
from .compressors import CompressorSpec, CompressedPayload, ResidualState
from .costmodel import CostParams, TimingSample
from .simulator import SimConfig, SimReport
from .scheduler import SearchConfig, SearchResult
from .trainer import TrainConfig, TrainReport

__all__ = [
    "__version__",
    "LayerProfile",
    "ModelProfile",
    "Partition",
    "CompressorSpec",
    "CompressedPayload",
    "ResidualState",
    "CostParams",
    "TimingSample",
    "SimConfig",
    "SimReport",
    "SearchConfig",
    "SearchResult",
    "TrainConfig",
    "TrainReport",
]
