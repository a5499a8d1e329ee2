"""Codec correctness: selection rules, quantizer semantics, error feedback,
payload sizing, and the canonical serialization."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mergesched.compressors import (
    ALGORITHMS,
    HEADER_BYTES,
    CompressedPayload,
    CompressorSpec,
    ResidualState,
    aggregate,
    decode,
    derive_seed,
    deserialize,
    empirical_error_bound,
    encode,
    payload_bytes,
    serialize,
    top_k_count,
)

# every codec at its defaults, keyed by algorithm
DEFAULT_SPECS = {name: CompressorSpec(name) for name in ALGORITHMS}


def payloads_equal(a: CompressedPayload, b: CompressedPayload) -> bool:
    def arr_eq(x, y):
        if x is None or y is None:
            return (x is None or len(x) == 0) and (y is None or len(y) == 0)
        return x.dtype == y.dtype and np.array_equal(x, y)

    return (
        a.algorithm == b.algorithm
        and a.original_len == b.original_len
        and a.flags == b.flags
        and arr_eq(a.indices, b.indices)
        and arr_eq(a.values, b.values)
        and arr_eq(a.bits, b.bits)
    )


class TestSpecValidation:
    def test_unknown_algorithm(self):
        with pytest.raises(ValueError):
            CompressorSpec("gzip")

    @pytest.mark.parametrize(
        "kw",
        [
            {"sparsity": 1.0},
            {"sparsity": -0.1},
            {"levels": 1},
            {"bucket_size": 0},
            {"threshold": -1.0},
            {"momentum": 1.0},
        ],
    )
    def test_invalid_fields(self, kw):
        with pytest.raises(ValueError):
            CompressorSpec("topk", **kw)

    def test_error_feedback_defaults(self):
        assert CompressorSpec("topk").uses_error_feedback
        assert CompressorSpec("dgc_lite").uses_error_feedback
        assert CompressorSpec("efsignsgd").uses_error_feedback
        assert CompressorSpec("onebit").uses_error_feedback
        for algo in ("identity", "fp16", "qsgd", "signsgd", "terngrad", "int8", "randk", "signum"):
            assert not CompressorSpec(algo).uses_error_feedback
        assert CompressorSpec("qsgd", error_feedback=True).uses_error_feedback
        assert not CompressorSpec("topk", error_feedback=False).uses_error_feedback

    def test_dict_roundtrip(self):
        spec = CompressorSpec("qsgd", levels=16, bucket_size=64, error_feedback=True)
        assert CompressorSpec.from_dict(spec.to_dict()) == spec

    def test_from_dict_rejects_unknown_fields(self):
        with pytest.raises(ValueError):
            CompressorSpec.from_dict({"algorithm": "topk", "ratio": 0.5})


class TestTopK:
    def test_magnitude_selection_example(self):
        spec = CompressorSpec("topk", sparsity=0.5, error_feedback=False)
        payload, _ = encode(spec, np.array([0.1, -0.5, 0.3, 0.05], np.float32))
        assert payload.indices.tolist() == [1, 2]
        np.testing.assert_array_equal(payload.values, np.float32([-0.5, 0.3]))

    def test_decode_zero_fills(self):
        spec = CompressorSpec("topk", sparsity=0.5, error_feedback=False)
        payload, _ = encode(spec, np.array([0.1, -0.5, 0.3, 0.05], np.float32))
        np.testing.assert_array_equal(decode(spec, payload), np.float32([0, -0.5, 0.3, 0]))

    def test_k_formula(self):
        assert top_k_count(0.5, 4) == 2
        assert top_k_count(0.99, 10000) == 100
        assert top_k_count(0.99, 1) == 1  # floor at one element
        assert top_k_count(0.7, 10) == 3
        assert top_k_count(0.0, 8) == 8

    def test_selection_dominance_property(self, rng):
        """Every kept magnitude is >= every dropped magnitude, and |kept| = k."""
        spec = CompressorSpec("topk", sparsity=0.9, error_feedback=False)
        for _ in range(100):
            n = int(rng.integers(1, 400))
            x = rng.standard_normal(n).astype(np.float32)
            payload, _ = encode(spec, x)
            k = top_k_count(0.9, n)
            assert len(payload.indices) == k
            kept = np.abs(x[payload.indices])
            mask = np.ones(n, bool)
            mask[payload.indices] = False
            if mask.any():
                assert kept.min() >= np.abs(x[mask]).max()


class TestIdentityAndFp16:
    def test_identity_bitwise_roundtrip(self, rng):
        spec = DEFAULT_SPECS["identity"]
        x = rng.standard_normal(257).astype(np.float32)
        payload, state = encode(spec, x)
        assert state is None
        np.testing.assert_array_equal(decode(spec, payload), x)
        assert payload.byte_size == 4 * 257 + HEADER_BYTES

    def test_fp16_relative_error_bound(self):
        spec = DEFAULT_SPECS["fp16"]
        x = np.logspace(-14, 15, 500, base=2.0).astype(np.float32)
        payload, _ = encode(spec, x)
        out = decode(spec, payload)
        rel = np.abs(out - x) / np.abs(x)
        assert rel.max() <= 2.0 ** -11

    def test_fp16_halves_bytes(self):
        assert payload_bytes(DEFAULT_SPECS["fp16"], 1024) == HEADER_BYTES + 2048


class TestErrorFeedback:
    @pytest.mark.parametrize("algo", sorted(set(ALGORITHMS) - {"signum"}))
    def test_decomposition_bitwise_exact(self, algo, rng):
        """decode(payload) + residual_new == gradient + residual_old, bitwise.

        signum is excluded: its identity is against the momentum-corrected
        stream, not the raw gradient (covered by the momentum tests)."""
        spec = CompressorSpec(algo, sparsity=0.9, error_feedback=True)
        state = None
        for _ in range(5):
            x = rng.standard_normal(300).astype(np.float32)
            old_residual = np.zeros(300, np.float32) if state is None else state.residual.copy()
            payload, state = encode(spec, x, state, seed=derive_seed(1))
            lhs = decode(spec, payload) + state.residual
            rhs = x + old_residual
            np.testing.assert_array_equal(lhs, rhs)

    def test_dgc_lite_defaults_to_plain_ef_topk(self, rng):
        """Without a momentum coefficient dgc_lite is top-k with error feedback."""
        x = rng.standard_normal(128).astype(np.float32)
        p1, s1 = encode(CompressorSpec("dgc_lite"), x)
        p2, s2 = encode(CompressorSpec("topk"), x)
        np.testing.assert_array_equal(p1.indices, p2.indices)
        np.testing.assert_array_equal(p1.values, p2.values)
        np.testing.assert_array_equal(s1.residual, s2.residual)

    def test_dgc_lite_momentum_accumulates(self, rng):
        spec = CompressorSpec("dgc_lite", momentum=0.9, sparsity=0.5)
        x1 = rng.standard_normal(64).astype(np.float32)
        x2 = rng.standard_normal(64).astype(np.float32)
        _, state = encode(spec, x1)
        np.testing.assert_array_equal(state.momentum, x1)
        _, state = encode(spec, x2, state)
        np.testing.assert_array_equal(state.momentum, np.float32(0.9) * x1 + x2)

    def test_residual_starts_at_zero(self):
        spec = CompressorSpec("topk", sparsity=0.5)
        x = np.float32([1.0, -2.0, 3.0, -4.0])
        payload, state = encode(spec, x)
        # k=2 keeps |-4|,|3|; residual holds the dropped values exactly
        np.testing.assert_array_equal(state.residual, np.float32([1.0, -2.0, 0.0, 0.0]))

    def test_state_length_mismatch_rejected(self):
        spec = CompressorSpec("topk")
        with pytest.raises(ValueError, match="length"):
            encode(spec, np.zeros(8, np.float32), ResidualState.zeros(9))

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError, match="finite"):
            encode(DEFAULT_SPECS["identity"], np.float32([1.0, np.nan]))

    def test_empty_gradient_rejected(self):
        with pytest.raises(ValueError):
            encode(DEFAULT_SPECS["identity"], np.zeros(0, np.float32))


class TestQuantizers:
    def test_efsignsgd_decode_values_are_bucket_l1_means(self, rng):
        spec = CompressorSpec("efsignsgd", bucket_size=32, error_feedback=False)
        x = rng.standard_normal(100).astype(np.float32)
        out = decode(spec, encode(spec, x)[0])
        for lo in range(0, 100, 32):
            seg = x[lo:lo + 32]
            expect = np.float32(np.abs(seg).mean())
            np.testing.assert_array_equal(np.abs(out[lo:lo + 32]), np.full(len(seg), expect))
            np.testing.assert_array_equal(np.sign(out[lo:lo + 32]), np.where(seg >= 0, 1.0, -1.0))

    def test_signsgd_global_scaler(self, rng):
        spec = DEFAULT_SPECS["signsgd"]
        x = rng.standard_normal(1000).astype(np.float32)
        out = decode(spec, encode(spec, x)[0])
        scale = np.float32(np.abs(x).mean())
        assert set(np.unique(out)) <= {scale, -scale}

    def test_onebit_two_sided_bucket_means(self, rng):
        spec = CompressorSpec("onebit", bucket_size=50, error_feedback=False)
        x = rng.standard_normal(100).astype(np.float32)
        out = decode(spec, encode(spec, x)[0])
        for lo in (0, 50):
            seg, rec = x[lo:lo + 50], out[lo:lo + 50]
            pos, neg = seg >= 0, seg < 0
            np.testing.assert_allclose(rec[pos], seg[pos].mean(), rtol=1e-6)
            np.testing.assert_allclose(rec[neg], seg[neg].mean(), rtol=1e-6)

    def test_terngrad_levels(self, rng):
        spec = CompressorSpec("terngrad", bucket_size=64)
        x = rng.standard_normal(200).astype(np.float32)
        out = decode(spec, encode(spec, x, seed=5)[0])
        for lo in range(0, 200, 64):
            seg, rec = x[lo:lo + 64], out[lo:lo + 64]
            s = np.float32(np.abs(seg).max())
            assert set(np.unique(rec)) <= {np.float32(-s), np.float32(0.0), s}

    def test_terngrad_keeps_max_magnitude_deterministically(self):
        spec = CompressorSpec("terngrad", bucket_size=8)
        x = np.float32([0.0, 0.0, -3.0, 0.0])
        out = decode(spec, encode(spec, x, seed=0)[0])
        assert out[2] == -3.0

    def test_int8_quantization_error_bound(self, rng):
        spec = CompressorSpec("int8", bucket_size=256)
        x = rng.standard_normal(1000).astype(np.float32)
        out = decode(spec, encode(spec, x)[0])
        for lo in range(0, 1000, 256):
            seg, rec = x[lo:lo + 256], out[lo:lo + 256]
            s = np.abs(seg).max()
            assert np.abs(rec - seg).max() <= s / 253  # half a step plus fp fuzz

    def test_signum_momentum_ema(self, rng):
        spec = DEFAULT_SPECS["signum"]
        beta = np.float32(0.9)
        one_minus = np.float32(1.0) - beta
        x1 = rng.standard_normal(64).astype(np.float32)
        x2 = rng.standard_normal(64).astype(np.float32)
        _, state = encode(spec, x1)
        expected = beta * np.zeros(64, np.float32) + one_minus * x1
        np.testing.assert_array_equal(state.momentum, expected)
        payload, state = encode(spec, x2, state)
        expected = beta * expected + one_minus * x2
        np.testing.assert_array_equal(state.momentum, expected)
        out = decode(spec, payload)
        np.testing.assert_array_equal(np.sign(out), np.where(expected >= 0, 1.0, -1.0))

    def test_threshold_keeps_at_or_above_tau(self):
        spec = CompressorSpec("threshold", threshold=0.5)
        x = np.float32([0.1, 0.5, -0.6, 0.49, -0.5])
        payload, _ = encode(spec, x)
        assert payload.indices.tolist() == [1, 2, 4]

    def test_threshold_empty_selection_decodes_to_zeros(self):
        spec = CompressorSpec("threshold", threshold=10.0)
        x = np.float32([0.1, -0.2])
        payload, _ = encode(spec, x)
        assert len(payload.indices) == 0
        np.testing.assert_array_equal(decode(spec, payload), np.zeros(2, np.float32))

    def test_zero_buffer_quantizers_stay_finite(self):
        for algo in ("qsgd", "terngrad", "int8", "signsgd", "efsignsgd", "onebit"):
            spec = CompressorSpec(algo, error_feedback=False)
            payload, _ = encode(spec, np.zeros(700, np.float32), seed=3)
            out = decode(spec, payload)
            np.testing.assert_array_equal(out, np.zeros(700, np.float32))


class TestStochasticUnbiasedness:
    """Smoke-level Monte-Carlo checks (the acceptance suite runs the 10000-trial
    versions); seeds fixed so the sampled z-statistics stay inside the band."""

    def test_qsgd_mean_converges_to_input(self):
        spec = CompressorSpec("qsgd", levels=256, bucket_size=512)
        x = np.random.default_rng(2024).standard_normal(1000).astype(np.float32)
        acc = np.zeros(1000)
        trials = 800
        for t in range(trials):
            acc += decode(spec, encode(spec, x, seed=derive_seed(14, iteration=t))[0])
        err = np.abs(acc / trials - x)
        assert np.quantile(err, 0.99) < 0.02

    def test_randk_unbiased_scaling(self):
        spec = CompressorSpec("randk", sparsity=0.5, unbiased_scaling=True, error_feedback=False)
        x = np.random.default_rng(2024).standard_normal(400).astype(np.float32)
        acc = np.zeros(400)
        trials = 2000
        for t in range(trials):
            acc += decode(spec, encode(spec, x, seed=derive_seed(2, iteration=t))[0])
        # per-element std of the mean is |x|*sqrt(n/k-1)/sqrt(trials) <= ~0.08
        np.testing.assert_allclose(acc / trials, x, atol=0.3)

    def test_randk_without_scaling_shrinks_mean(self):
        spec = CompressorSpec("randk", sparsity=0.75, error_feedback=False)
        x = np.ones(200, np.float32)
        acc = np.zeros(200)
        for t in range(400):
            acc += decode(spec, encode(spec, x, seed=derive_seed(3, iteration=t))[0])
        assert abs((acc / 400).mean() - 0.25) < 0.05  # keeps k/n of the mass

    def test_seeded_encode_deterministic(self):
        spec = CompressorSpec("randk", sparsity=0.9, error_feedback=False)
        x = np.random.default_rng(0).standard_normal(128).astype(np.float32)
        a, _ = encode(spec, x, seed=42)
        b, _ = encode(spec, x, seed=42)
        assert payloads_equal(a, b)
        c, _ = encode(spec, x, seed=43)
        assert not payloads_equal(a, c)

    def test_derive_seed_distinct_streams(self):
        seeds = {
            derive_seed(7, worker=w, iteration=t, group=g)
            for w in range(3)
            for t in range(3)
            for g in range(3)
        }
        assert len(seeds) == 27


class TestEmpiricalErrorBound:
    def test_identity_is_lossless(self, rng):
        spec = CompressorSpec("identity")
        assert empirical_error_bound(spec, [rng.standard_normal(64)]) == 0.0

    def test_full_topk_is_lossless(self, rng):
        spec = CompressorSpec("topk", sparsity=0.0, error_feedback=False)
        assert empirical_error_bound(spec, [rng.standard_normal(64)]) == 0.0

    def test_qsgd_matches_analytic_expectation(self):
        """Fixture q-hat derived from the closed-form oracle: the expected
        relative error of per-bucket stochastic rounding is
        sum(step^2 p(1-p)) / ||x||^2 with step = scale/(levels-1).  Max over
        the five seeded 4096-element buffers = 1.3233e-03."""
        q_hat = 1.32326392e-03
        rng = np.random.default_rng(314)
        buffers = [rng.standard_normal(4096) for _ in range(5)]

        # recompute the oracle in-place so the frozen constant stays honest
        analytic = []
        for x in buffers:
            num = den = 0.0
            for lo in range(0, 4096, 512):
                seg = x[lo:lo + 512]
                scale = np.linalg.norm(seg)
                t = np.abs(seg) / scale * 255
                p = t - np.floor(t)
                num += float(np.sum((scale / 255) ** 2 * p * (1 - p)))
                den += float(np.sum(seg ** 2))
            analytic.append(num / den)
        assert max(analytic) == pytest.approx(q_hat, rel=1e-6)

        spec = CompressorSpec("qsgd", levels=256, bucket_size=512)
        measured = empirical_error_bound(spec, buffers, trials=30)
        assert measured == pytest.approx(q_hat, rel=0.10)

    def test_zero_norm_sample_rejected(self):
        with pytest.raises(ValueError, match="zero norm"):
            empirical_error_bound(CompressorSpec("identity"), [np.zeros(8)])

    def test_error_feedback_must_be_off(self, rng):
        with pytest.raises(ValueError, match="error_feedback"):
            empirical_error_bound(CompressorSpec("topk"), [rng.standard_normal(8)])


class TestPayloadBytes:
    def test_identity_example(self):
        assert payload_bytes(DEFAULT_SPECS["identity"], 1024) == 4096 + HEADER_BYTES

    def test_signsgd_example(self):
        assert payload_bytes(DEFAULT_SPECS["signsgd"], 1024) == 128 + 4 + HEADER_BYTES

    def test_topk_example(self):
        spec = CompressorSpec("topk", sparsity=0.99)
        assert payload_bytes(spec, 10000) == 100 * (4 + 4) + HEADER_BYTES

    def test_sign_bits_beat_dense_beyond_64_elements(self):
        for n in (64, 100, 1024, 10**6):
            assert payload_bytes(DEFAULT_SPECS["identity"], n) > payload_bytes(
                DEFAULT_SPECS["signsgd"], n
            )

    @pytest.mark.parametrize("algo", sorted(set(ALGORITHMS) - {"threshold"}))
    @pytest.mark.parametrize("n", [1, 7, 63, 512, 1000, 4109])
    def test_predicted_size_matches_encode(self, algo, n, rng):
        spec = CompressorSpec(algo, error_feedback=False)
        x = rng.standard_normal(n).astype(np.float32)
        payload, _ = encode(spec, x, seed=9)
        assert payload.byte_size == payload_bytes(spec, n)
        assert len(serialize(payload)) == payload.byte_size


class TestSerialization:
    @pytest.mark.parametrize("algo", sorted(ALGORITHMS))
    def test_roundtrip_bitwise(self, algo, rng):
        spec = CompressorSpec(algo, error_feedback=False)
        x = rng.standard_normal(333).astype(np.float32)
        payload, _ = encode(spec, x, seed=17)
        back = deserialize(serialize(payload))
        assert payloads_equal(payload, back)
        np.testing.assert_array_equal(decode(spec, back), decode(spec, payload))

    def test_empty_selection_roundtrip(self):
        spec = CompressorSpec("threshold", threshold=99.0)
        payload, _ = encode(spec, np.float32([0.1, 0.2]))
        assert payloads_equal(payload, deserialize(serialize(payload)))

    @given(st.binary(max_size=21))
    @settings(max_examples=30, deadline=None)
    def test_truncated_header_rejected(self, blob):
        with pytest.raises(ValueError):
            deserialize(blob)

    def test_length_mismatch_rejected(self):
        payload, _ = encode(DEFAULT_SPECS["identity"], np.float32([1, 2, 3]))
        blob = serialize(payload)
        with pytest.raises(ValueError, match="length"):
            deserialize(blob + b"\x00")

    def test_unknown_algorithm_id_rejected(self):
        payload, _ = encode(DEFAULT_SPECS["identity"], np.float32([1.0]))
        blob = bytearray(serialize(payload))
        blob[0] = 200
        with pytest.raises(ValueError, match="algorithm id"):
            deserialize(bytes(blob))


class TestDecodeValidation:
    def test_index_out_of_range(self):
        spec = CompressorSpec("topk", error_feedback=False)
        bad = CompressedPayload("topk", 4, np.array([7], np.uint32), np.float32([1.0]), None)
        with pytest.raises(ValueError, match="corrupt"):
            decode(spec, bad)

    def test_index_value_length_mismatch(self):
        spec = CompressorSpec("topk", error_feedback=False)
        bad = CompressedPayload("topk", 4, np.array([1, 2], np.uint32), np.float32([1.0]), None)
        with pytest.raises(ValueError, match="corrupt"):
            decode(spec, bad)

    def test_algorithm_mismatch(self):
        payload, _ = encode(DEFAULT_SPECS["identity"], np.float32([1.0]))
        with pytest.raises(ValueError, match="match"):
            decode(DEFAULT_SPECS["signsgd"], payload)


class TestAggregate:
    def test_single_worker_equals_decode(self, rng):
        spec = DEFAULT_SPECS["identity"]
        x = rng.standard_normal(32).astype(np.float32)
        payload, _ = encode(spec, x)
        np.testing.assert_array_equal(aggregate(spec, [payload]), decode(spec, payload))

    def test_opposite_buffers_cancel(self, rng):
        spec = DEFAULT_SPECS["identity"]
        x = rng.standard_normal(32).astype(np.float32)
        a, _ = encode(spec, x)
        b, _ = encode(spec, -x)
        np.testing.assert_array_equal(aggregate(spec, [a, b]), np.zeros(32, np.float32))

    def test_disjoint_topk_mean_divides_by_n(self):
        spec = CompressorSpec("topk", sparsity=0.75, error_feedback=False)
        payloads = []
        for w in range(4):
            x = np.zeros(8, np.float32)
            x[2 * w] = 4.0
            x[2 * w + 1] = -4.0
            payloads.append(encode(spec, x)[0])
        out = aggregate(spec, payloads)
        np.testing.assert_array_equal(np.abs(out), np.full(8, 1.0, np.float32))

    def test_mixed_algorithms_rejected(self, rng):
        x = rng.standard_normal(16).astype(np.float32)
        a, _ = encode(DEFAULT_SPECS["identity"], x)
        b, _ = encode(DEFAULT_SPECS["signsgd"], x)
        with pytest.raises(ValueError, match="mixed"):
            aggregate(DEFAULT_SPECS["identity"], [a, b])

    def test_mixed_lengths_rejected(self, rng):
        spec = DEFAULT_SPECS["identity"]
        a, _ = encode(spec, rng.standard_normal(16).astype(np.float32))
        b, _ = encode(spec, rng.standard_normal(17).astype(np.float32))
        with pytest.raises(ValueError, match="mixed"):
            aggregate(spec, [a, b])
