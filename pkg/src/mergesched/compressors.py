"""Gradient codecs: sparsifiers and quantizers over flat float32 buffers.

Every codec is a pure encode/decode pair.  Encode may carry per-group state:
an error-feedback residual (the part of the corrected gradient the payload
failed to represent, re-added next call) and, for momentum-based codecs, a
momentum buffer.  The error-feedback decomposition is exact by construction:

    decode(payload) + residual_new == input + residual_old   (bitwise)

where ``input`` is the raw float32 gradient (momentum-corrected first for
the codecs that use momentum) and the residual is held in float64 so the
subtraction that defines it does not round.

Payloads serialize to a canonical little-endian layout so byte sizes are
exact and testable: a 22-byte header (algo:u8, flags:u8, original_len:u64,
three u32 section lengths) followed by u32 indices, f32 values, and packed
bit codes.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

ALGORITHMS = (
    "identity",
    "fp16",
    "topk",
    "randk",
    "dgc_lite",
    "threshold",
    "qsgd",
    "signsgd",
    "efsignsgd",
    "onebit",
    "signum",
    "terngrad",
    "int8",
)

_ALGO_IDS = {name: i for i, name in enumerate(ALGORITHMS)}

# Codecs that only make sense (or are conventionally run) with error feedback.
_EF_DEFAULT_ON = frozenset({"topk", "dgc_lite", "efsignsgd", "onebit"})

_SPARSIFIERS = frozenset({"topk", "randk", "dgc_lite", "threshold"})
_STOCHASTIC = frozenset({"randk", "qsgd", "terngrad"})

HEADER_BYTES = struct.calcsize("<BBQIII")  # 22

_FLAG_UNBIASED = 0x01


@dataclass(frozen=True)
class CompressorSpec:
    """Configuration of one codec.

    ``sparsity`` is the dropped fraction for sparsifiers (0.99 keeps 1%).
    ``levels`` is the quantization lattice size for qsgd (256 = 8-bit codes).
    ``bucket_size`` is the scaling granularity of bucketed quantizers.
    ``error_feedback`` of None means the codec's conventional default
    (on for topk/dgc_lite/efsignsgd/onebit, off otherwise).
    ``momentum`` enables gradient-accumulator correction for dgc_lite and
    overrides signum's default 0.9 coefficient.
    """

    algorithm: str
    sparsity: float = 0.99
    levels: int = 256
    bucket_size: int = 512
    error_feedback: Optional[bool] = None
    unbiased_scaling: bool = False
    threshold: float = 1e-3
    momentum: Optional[float] = None

    def __post_init__(self):
        if self.algorithm not in _ALGO_IDS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        if not (0.0 <= self.sparsity < 1.0):
            raise ValueError(f"sparsity must be in [0, 1), got {self.sparsity}")
        if self.levels < 2:
            raise ValueError(f"levels must be >= 2, got {self.levels}")
        if self.bucket_size < 1:
            raise ValueError(f"bucket_size must be >= 1, got {self.bucket_size}")
        if self.threshold < 0:
            raise ValueError(f"threshold must be >= 0, got {self.threshold}")
        if self.momentum is not None and not (0.0 <= self.momentum < 1.0):
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")

    @property
    def uses_error_feedback(self) -> bool:
        if self.error_feedback is not None:
            return self.error_feedback
        return self.algorithm in _EF_DEFAULT_ON

    @property
    def momentum_coef(self) -> Optional[float]:
        """Effective momentum coefficient, or None when momentum is unused."""
        if self.algorithm == "signum":
            return 0.9 if self.momentum is None else self.momentum
        if self.algorithm == "dgc_lite" and self.momentum is not None:
            return self.momentum
        return None

    @property
    def is_stochastic(self) -> bool:
        return self.algorithm in _STOCHASTIC

    def to_dict(self) -> dict:
        return {
            "algorithm": self.algorithm,
            "sparsity": self.sparsity,
            "levels": self.levels,
            "bucket_size": self.bucket_size,
            "error_feedback": self.error_feedback,
            "unbiased_scaling": self.unbiased_scaling,
            "threshold": self.threshold,
            "momentum": self.momentum,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "CompressorSpec":
        if "algorithm" not in doc:
            raise ValueError("compressor spec document missing 'algorithm'")
        known = {f for f in cls.__dataclass_fields__}
        extra = set(doc) - known
        if extra:
            raise ValueError(f"unknown compressor spec fields: {sorted(extra)}")
        return cls(**doc)


@dataclass
class ResidualState:
    """Per-(worker, group) codec memory.

    ``residual`` is the error-feedback buffer (all zeros at iteration 0).
    It is kept in double precision: subtracting a float32 decode from the
    float64 corrected buffer is exact, which makes the feedback
    decomposition hold to the last bit.  ``momentum`` exists only for
    momentum-based codecs and stays in the float32 wire precision.
    """

    residual: np.ndarray
    momentum: Optional[np.ndarray] = None

    @classmethod
    def zeros(cls, length: int, with_momentum: bool = False) -> "ResidualState":
        return cls(
            residual=np.zeros(length, dtype=np.float64),
            momentum=np.zeros(length, dtype=np.float32) if with_momentum else None,
        )

    def copy(self) -> "ResidualState":
        return ResidualState(
            residual=self.residual.copy(),
            momentum=None if self.momentum is None else self.momentum.copy(),
        )


@dataclass(frozen=True)
class CompressedPayload:
    """One encoded group: optional element indices, a value buffer (selected
    values or per-bucket scalers), and optional packed bit codes."""

    algorithm: str
    original_len: int
    indices: Optional[np.ndarray]  # uint32, strictly increasing
    values: np.ndarray  # float32
    bits: Optional[np.ndarray]  # uint8, packed
    flags: int = 0
    byte_size: int = field(init=False)

    def __post_init__(self):
        n_idx = 0 if self.indices is None else len(self.indices)
        n_bits = 0 if self.bits is None else len(self.bits)
        object.__setattr__(
            self, "byte_size", HEADER_BYTES + 4 * n_idx + 4 * len(self.values) + n_bits
        )


def top_k_count(sparsity: float, length: int) -> int:
    """Elements kept by a k-based sparsifier: max(1, ceil((1-sparsity)*len)).

    The product is rounded at the 9th decimal before the ceiling so that
    decimal-intent sparsities (0.99 of 10000 -> exactly 100) are not bumped
    up by binary float noise.
    """
    if length < 1:
        raise ValueError("length must be >= 1")
    return max(1, math.ceil(round((1.0 - sparsity) * length, 9)))


# --- bit packing -------------------------------------------------------------

def _pack_codes(codes: np.ndarray, bits_per: int) -> np.ndarray:
    """Pack small unsigned ints MSB-first into a uint8 buffer."""
    if bits_per == 8:
        return codes.astype(np.uint8)
    shifts = np.arange(bits_per - 1, -1, -1, dtype=np.uint32)
    bitmat = ((codes.astype(np.uint32)[:, None] >> shifts) & 1).astype(np.uint8)
    return np.packbits(bitmat.reshape(-1))


def _unpack_codes(packed: np.ndarray, count: int, bits_per: int) -> np.ndarray:
    if bits_per == 8:
        return packed[:count].astype(np.uint32)
    bits = np.unpackbits(packed)[: count * bits_per].reshape(count, bits_per)
    weights = (1 << np.arange(bits_per - 1, -1, -1, dtype=np.uint32))
    return (bits.astype(np.uint32) * weights).sum(axis=1, dtype=np.uint32)


def _pack_signs(x: np.ndarray) -> np.ndarray:
    return np.packbits((x >= 0).astype(np.uint8))


def _unpack_signs(packed: np.ndarray, count: int) -> np.ndarray:
    bits = np.unpackbits(packed)[:count]
    return np.where(bits == 1, np.float32(1.0), np.float32(-1.0))


def _sign_bytes(n: int) -> int:
    return (n + 7) // 8


def _code_bytes(n: int, bits_per: int) -> int:
    return (n * bits_per + 7) // 8


def _buckets(n: int, bucket_size: int) -> list[tuple[int, int]]:
    return [(lo, min(lo + bucket_size, n)) for lo in range(0, n, bucket_size)]


def _bucket_count(n: int, bucket_size: int) -> int:
    return (n + bucket_size - 1) // bucket_size


def _level_bits(levels: int) -> int:
    return max(1, (levels - 1).bit_length())


# --- encode ------------------------------------------------------------------

def derive_seed(root_seed: int, worker: int = 0, iteration: int = 0, group: int = 0) -> int:
    """Deterministic per-(worker, iteration, group) stream key."""
    ss = np.random.SeedSequence(entropy=(int(root_seed), int(worker), int(iteration), int(group)))
    words = ss.generate_state(2, np.uint64)
    return int(words[0]) | (int(words[1]) << 64)


def _rng(seed: int) -> np.random.Generator:
    # Philox is counter-based: the same key always replays the same stream.
    return np.random.Generator(np.random.Philox(key=seed))


def _compress(spec: CompressorSpec, x: np.ndarray, seed: int) -> CompressedPayload:
    """Dispatch: corrected buffer -> payload sections."""
    algo = spec.algorithm
    n = len(x)
    flags = _FLAG_UNBIASED if (algo == "randk" and spec.unbiased_scaling) else 0

    if algo == "identity":
        return CompressedPayload(algo, n, None, x.copy(), None, flags)

    if algo == "fp16":
        raw = x.astype(np.float16).view(np.uint8).copy()
        return CompressedPayload(algo, n, None, np.empty(0, np.float32), raw, flags)

    if algo in ("topk", "dgc_lite"):
        k = top_k_count(spec.sparsity, n)
        sel = np.argpartition(np.abs(x), n - k)[n - k:]
        idx = np.sort(sel).astype(np.uint32)
        return CompressedPayload(algo, n, idx, x[idx].copy(), None, flags)

    if algo == "randk":
        k = top_k_count(spec.sparsity, n)
        sel = _rng(seed).choice(n, size=k, replace=False)
        idx = np.sort(sel).astype(np.uint32)
        vals = x[idx].copy()
        if spec.unbiased_scaling:
            vals = (vals * np.float32(n / k)).astype(np.float32)
        return CompressedPayload(algo, n, idx, vals, None, flags)

    if algo == "threshold":
        idx = np.flatnonzero(np.abs(x) >= spec.threshold).astype(np.uint32)
        return CompressedPayload(algo, n, idx, x[idx].copy(), None, flags)

    if algo == "qsgd":
        bits_per = _level_bits(spec.levels)
        scales = np.empty(_bucket_count(n, spec.bucket_size), np.float32)
        codes = np.empty(n, np.uint32)
        rng = _rng(seed)
        for b, (lo, hi) in enumerate(_buckets(n, spec.bucket_size)):
            seg = x[lo:hi]
            scale = np.float32(np.linalg.norm(seg.astype(np.float64)))
            scales[b] = scale
            if scale == 0:
                codes[lo:hi] = 0
                continue
            # f32 scale may round below the true bucket norm; clip keeps the
            # codes inside the lattice.
            t = np.minimum(np.abs(seg) / scale, 1.0) * (spec.levels - 1)
            base = np.floor(t)
            lattice = base + (rng.random(hi - lo) < (t - base))
            codes[lo:hi] = np.minimum(lattice, spec.levels - 1).astype(np.uint32)
        packed = np.concatenate([_pack_signs(x), _pack_codes(codes, bits_per)])
        return CompressedPayload(algo, n, None, scales, packed, flags)

    if algo in ("signsgd", "signum"):
        scale = np.float32(np.abs(x).mean()) if n else np.float32(0)
        return CompressedPayload(algo, n, None, np.array([scale], np.float32), _pack_signs(x), flags)

    if algo == "efsignsgd":
        nb = _bucket_count(n, spec.bucket_size)
        scales = np.empty(nb, np.float32)
        for b, (lo, hi) in enumerate(_buckets(n, spec.bucket_size)):
            scales[b] = np.abs(x[lo:hi]).mean()
        return CompressedPayload(algo, n, None, scales, _pack_signs(x), flags)

    if algo == "onebit":
        # Two scalers per bucket: mean of the negative and of the non-negative
        # values, so decode reconstructs each side's average magnitude.
        nb = _bucket_count(n, spec.bucket_size)
        scales = np.zeros(2 * nb, np.float32)
        for b, (lo, hi) in enumerate(_buckets(n, spec.bucket_size)):
            seg = x[lo:hi]
            neg = seg[seg < 0]
            pos = seg[seg >= 0]
            if len(neg):
                scales[2 * b] = neg.mean()
            if len(pos):
                scales[2 * b + 1] = pos.mean()
        return CompressedPayload(algo, n, None, scales, _pack_signs(x), flags)

    if algo == "terngrad":
        scales = np.empty(_bucket_count(n, spec.bucket_size), np.float32)
        codes = np.empty(n, np.uint32)
        rng = _rng(seed)
        for b, (lo, hi) in enumerate(_buckets(n, spec.bucket_size)):
            seg = x[lo:hi]
            scale = np.float32(np.abs(seg).max()) if hi > lo else np.float32(0)
            scales[b] = scale
            if scale == 0:
                codes[lo:hi] = 1  # ternary code for zero
                continue
            keep = rng.random(hi - lo) < (np.abs(seg) / scale)
            codes[lo:hi] = (np.sign(seg) * keep + 1).astype(np.uint32)
        return CompressedPayload(algo, n, None, scales, _pack_codes(codes, 2), flags)

    if algo == "int8":
        scales = np.empty(_bucket_count(n, spec.bucket_size), np.float32)
        q = np.empty(n, np.int8)
        for b, (lo, hi) in enumerate(_buckets(n, spec.bucket_size)):
            seg = x[lo:hi]
            scale = np.float32(np.abs(seg).max()) if hi > lo else np.float32(0)
            scales[b] = scale
            if scale == 0:
                q[lo:hi] = 0
            else:
                q[lo:hi] = np.clip(np.rint(seg / scale * 127.0), -127, 127).astype(np.int8)
        return CompressedPayload(algo, n, None, scales, q.view(np.uint8).copy(), flags)

    raise AssertionError(f"unhandled algorithm {algo}")


def encode(
    spec: CompressorSpec,
    gradient: np.ndarray,
    state: Optional[ResidualState] = None,
    seed: int = 0,
) -> tuple[CompressedPayload, Optional[ResidualState]]:
    """Compress one gradient buffer, updating codec state.

    With error feedback the codec runs on ``gradient + residual`` and the new
    residual is exactly what the payload failed to represent.  The payload is
    deterministic given (spec, inputs, seed).
    """
    x = np.asarray(gradient, dtype=np.float32).reshape(-1)
    if len(x) < 1:
        raise ValueError("gradient must have at least one element")
    if not np.isfinite(x).all():
        raise ValueError("gradient contains non-finite values")

    use_ef = spec.uses_error_feedback
    mom_coef = spec.momentum_coef
    if (use_ef or mom_coef is not None) and state is None:
        state = ResidualState.zeros(len(x), with_momentum=mom_coef is not None)
    if state is not None and len(state.residual) != len(x):
        raise ValueError(
            f"state length {len(state.residual)} does not match gradient length {len(x)}"
        )

    new_state = state
    work = x
    if mom_coef is not None:
        if state.momentum is None:
            state = ResidualState(state.residual, np.zeros(len(x), np.float32))
        coef = np.float32(mom_coef)
        if spec.algorithm == "signum":
            momentum = coef * state.momentum + (np.float32(1.0) - coef) * x
        else:  # dgc-style accumulator
            momentum = coef * state.momentum + x
        work = momentum
        new_state = ResidualState(state.residual, momentum)

    if use_ef:
        corrected = work + new_state.residual  # float64
        payload = _compress(spec, corrected.astype(np.float32), seed)
        residual = corrected - decode(spec, payload)
        new_state = ResidualState(residual, new_state.momentum)
    else:
        payload = _compress(spec, work, seed)

    return payload, new_state


# --- decode ------------------------------------------------------------------

def _check(condition: bool, message: str) -> None:
    if not condition:
        raise ValueError(f"corrupt payload: {message}")


def decode(spec: CompressorSpec, payload: CompressedPayload) -> np.ndarray:
    """Reconstruct a float32 buffer of length ``original_len``.

    Positions a sparsifier did not transmit decode to zero.
    """
    if payload.algorithm != spec.algorithm:
        raise ValueError(
            f"payload algorithm {payload.algorithm!r} does not match spec {spec.algorithm!r}"
        )
    algo = spec.algorithm
    n = payload.original_len

    if algo in _SPARSIFIERS:
        idx, vals = payload.indices, payload.values
        _check(idx is not None, "sparsifier payload lacks indices")
        _check(len(idx) == len(vals), "index/value length mismatch")
        if len(idx):
            _check(int(idx[-1]) < n, "index out of range")
            _check(bool(np.all(np.diff(idx.astype(np.int64)) > 0)), "indices not increasing")
        out = np.zeros(n, np.float32)
        out[idx] = vals
        return out

    if algo == "identity":
        _check(len(payload.values) == n, "value buffer length mismatch")
        return payload.values.copy()

    if algo == "fp16":
        _check(payload.bits is not None and len(payload.bits) == 2 * n, "fp16 buffer length mismatch")
        return payload.bits.view(np.float16).astype(np.float32)

    if algo == "qsgd":
        bits_per = _level_bits(spec.levels)
        _check(payload.bits is not None, "missing bit codes")
        _check(len(payload.values) == _bucket_count(n, spec.bucket_size), "scale count mismatch")
        _check(
            len(payload.bits) == _sign_bytes(n) + _code_bytes(n, bits_per),
            "bit buffer length mismatch",
        )
        signs = _unpack_signs(payload.bits[: _sign_bytes(n)], n)
        codes = _unpack_codes(payload.bits[_sign_bytes(n):], n, bits_per).astype(np.float32)
        out = np.empty(n, np.float32)
        for b, (lo, hi) in enumerate(_buckets(n, spec.bucket_size)):
            out[lo:hi] = signs[lo:hi] * payload.values[b] * (codes[lo:hi] / np.float32(spec.levels - 1))
        return out

    if algo in ("signsgd", "signum"):
        _check(len(payload.values) == 1, "expected one global scaler")
        _check(payload.bits is not None and len(payload.bits) == _sign_bytes(n), "sign buffer mismatch")
        return _unpack_signs(payload.bits, n) * payload.values[0]

    if algo == "efsignsgd":
        _check(len(payload.values) == _bucket_count(n, spec.bucket_size), "scale count mismatch")
        _check(payload.bits is not None and len(payload.bits) == _sign_bytes(n), "sign buffer mismatch")
        signs = _unpack_signs(payload.bits, n)
        out = np.empty(n, np.float32)
        for b, (lo, hi) in enumerate(_buckets(n, spec.bucket_size)):
            out[lo:hi] = signs[lo:hi] * payload.values[b]
        return out

    if algo == "onebit":
        nb = _bucket_count(n, spec.bucket_size)
        _check(len(payload.values) == 2 * nb, "scaler count mismatch")
        _check(payload.bits is not None and len(payload.bits) == _sign_bytes(n), "sign buffer mismatch")
        positive = np.unpackbits(payload.bits)[:n] == 1
        out = np.empty(n, np.float32)
        for b, (lo, hi) in enumerate(_buckets(n, spec.bucket_size)):
            seg_pos = positive[lo:hi]
            out[lo:hi] = np.where(seg_pos, payload.values[2 * b + 1], payload.values[2 * b])
        return out

    if algo == "terngrad":
        _check(len(payload.values) == _bucket_count(n, spec.bucket_size), "scale count mismatch")
        _check(payload.bits is not None and len(payload.bits) == _code_bytes(n, 2), "code buffer mismatch")
        tern = _unpack_codes(payload.bits, n, 2).astype(np.float32) - np.float32(1.0)
        out = np.empty(n, np.float32)
        for b, (lo, hi) in enumerate(_buckets(n, spec.bucket_size)):
            out[lo:hi] = tern[lo:hi] * payload.values[b]
        return out

    if algo == "int8":
        _check(len(payload.values) == _bucket_count(n, spec.bucket_size), "scale count mismatch")
        _check(payload.bits is not None and len(payload.bits) == n, "int8 buffer mismatch")
        q = payload.bits.view(np.int8).astype(np.float32)
        out = np.empty(n, np.float32)
        for b, (lo, hi) in enumerate(_buckets(n, spec.bucket_size)):
            out[lo:hi] = q[lo:hi] * (payload.values[b] / np.float32(127.0))
        return out

    raise AssertionError(f"unhandled algorithm {algo}")


def aggregate(spec: CompressorSpec, payloads: Sequence[CompressedPayload]) -> np.ndarray:
    """Elementwise mean of the decoded payloads, summed in list order."""
    if not payloads:
        raise ValueError("need at least one payload")
    first = payloads[0]
    for p in payloads[1:]:
        if p.algorithm != first.algorithm:
            raise ValueError(f"mixed algorithms: {first.algorithm!r} vs {p.algorithm!r}")
        if p.original_len != first.original_len:
            raise ValueError(f"mixed lengths: {first.original_len} vs {p.original_len}")
    acc = np.zeros(first.original_len, np.float32)
    for p in payloads:
        acc += decode(spec, p)
    return acc / np.float32(len(payloads))


def empirical_error_bound(
    spec: CompressorSpec,
    samples: Sequence[np.ndarray],
    trials: int = 1,
) -> float:
    """Worst observed relative squared compression error over the samples.

    For stochastic codecs each sample's error is averaged over ``trials``
    seeded encodes.  Error feedback must be disabled: the measurement is of
    the raw codec, not of the feedback loop around it.
    """
    if spec.uses_error_feedback:
        raise ValueError("disable error_feedback for error-bound measurement")
    if trials < 1:
        raise ValueError("trials must be >= 1")
    worst = 0.0
    for i, sample in enumerate(samples):
        x = np.asarray(sample, dtype=np.float32).reshape(-1)
        denom = float(np.dot(x.astype(np.float64), x.astype(np.float64)))
        if denom == 0.0:
            raise ValueError(f"sample {i} has zero norm")
        total = 0.0
        for t in range(trials):
            payload, _ = encode(spec, x, None, seed=derive_seed(t, group=i))
            err = decode(spec, payload).astype(np.float64) - x.astype(np.float64)
            total += float(np.dot(err, err)) / denom
        worst = max(worst, total / trials)
    return worst


def payload_bytes(spec: CompressorSpec, group_size: int) -> int:
    """Serialized payload size in bytes for a group of ``group_size`` elements.

    Exact for deterministic codecs.  The threshold codec's size is data
    dependent; its planning size assumes the configured sparsity as the
    expected drop fraction.
    """
    if group_size < 1:
        raise ValueError("group_size must be >= 1")
    n = group_size
    algo = spec.algorithm
    if algo == "identity":
        return HEADER_BYTES + 4 * n
    if algo == "fp16":
        return HEADER_BYTES + 2 * n
    if algo in ("topk", "randk", "dgc_lite", "threshold"):
        k = top_k_count(spec.sparsity, n)
        return HEADER_BYTES + 8 * k
    nb = _bucket_count(n, spec.bucket_size)
    if algo == "qsgd":
        return HEADER_BYTES + 4 * nb + _sign_bytes(n) + _code_bytes(n, _level_bits(spec.levels))
    if algo in ("signsgd", "signum"):
        return HEADER_BYTES + 4 + _sign_bytes(n)
    if algo == "efsignsgd":
        return HEADER_BYTES + 4 * nb + _sign_bytes(n)
    if algo == "onebit":
        return HEADER_BYTES + 8 * nb + _sign_bytes(n)
    if algo == "terngrad":
        return HEADER_BYTES + 4 * nb + _code_bytes(n, 2)
    if algo == "int8":
        return HEADER_BYTES + 4 * nb + n
    raise AssertionError(f"unhandled algorithm {algo}")


# --- serialization -----------------------------------------------------------

def serialize(payload: CompressedPayload) -> bytes:
    """Canonical little-endian byte form; len(result) == payload.byte_size."""
    n_idx = 0 if payload.indices is None else len(payload.indices)
    n_bits = 0 if payload.bits is None else len(payload.bits)
    header = struct.pack(
        "<BBQIII",
        _ALGO_IDS[payload.algorithm],
        payload.flags,
        payload.original_len,
        n_idx,
        len(payload.values),
        n_bits,
    )
    parts = [header]
    if payload.indices is not None:
        parts.append(payload.indices.astype("<u4").tobytes())
    parts.append(payload.values.astype("<f4").tobytes())
    if payload.bits is not None:
        parts.append(payload.bits.tobytes())
    return b"".join(parts)


def deserialize(data: bytes) -> CompressedPayload:
    if len(data) < HEADER_BYTES:
        raise ValueError("payload shorter than header")
    algo_id, flags, original_len, n_idx, n_val, n_bits = struct.unpack_from("<BBQIII", data)
    if algo_id >= len(ALGORITHMS):
        raise ValueError(f"unknown algorithm id {algo_id}")
    expect = HEADER_BYTES + 4 * n_idx + 4 * n_val + n_bits
    if len(data) != expect:
        raise ValueError(f"payload length {len(data)} does not match header ({expect})")
    off = HEADER_BYTES
    indices = None
    if n_idx:
        indices = np.frombuffer(data, dtype="<u4", count=n_idx, offset=off).copy()
        off += 4 * n_idx
    values = np.frombuffer(data, dtype="<f4", count=n_val, offset=off).copy()
    off += 4 * n_val
    bits = None
    if n_bits:
        bits = np.frombuffer(data, dtype=np.uint8, count=n_bits, offset=off).copy()
    algo = ALGORITHMS[algo_id]
    if algo in _SPARSIFIERS and indices is None:
        indices = np.empty(0, dtype="<u4")
    return CompressedPayload(algo, original_len, indices, values, bits, flags)
