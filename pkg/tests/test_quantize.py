"""Quantizer unit tests: scale law, rounding oracle, fake quantization,
range trackers, and model wrapping."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from zaq import autodiff as ad
from zaq.errors import ConfigError, ModelError
from zaq.models import build_teacher, forward_with_taps
from zaq.quantize import (ActRangeTracker, FakeQuantParam, QuantSpec, fake_quant,
                          fake_quant_array, fake_quant_weight, qmax, quantize_model,
                          quantize_value, scale_for)


def brute_force_quantize(v: float, s: float, k: int) -> int:
    """Scan all grid levels, pick the nearest with half-away-from-zero ties."""
    levels = range(-qmax(k), qmax(k) + 1)
    target = s * v

    def key(q):
        # distance first; on exact ties prefer larger magnitude
        return (abs(target - q), -abs(q))

    return min(levels, key=key)


class TestScaleFor:
    def test_hand_case_k4(self):
        assert scale_for(2.0, 4) == pytest.approx(3.5)

    def test_hand_case_k8(self):
        assert scale_for(1.0, 8) == pytest.approx(127.0)

    def test_zero_range_is_pass_through(self):
        assert scale_for(0.0, 4) is None

    def test_k_below_two_rejected(self):
        with pytest.raises(ConfigError):
            scale_for(1.0, 1)


class TestQuantizeValue:
    def test_zero_is_fixed(self):
        assert quantize_value(0.0, 3.5, 4) == 0

    def test_half_away_from_zero(self):
        assert quantize_value(1.0, 3.5, 4) == 4

    def test_negative(self):
        assert quantize_value(-0.2, 127.0, 8) == -25

    def test_clamps_to_grid(self):
        assert quantize_value(100.0, 127.0, 8) == 127
        assert quantize_value(-100.0, 127.0, 8) == -127

    @pytest.mark.parametrize("k", [2, 4, 8])
    def test_matches_brute_force_oracle(self, k):
        rng = np.random.default_rng(99)
        values = rng.uniform(-2.0, 2.0, 500)
        s = scale_for(2.0, k)
        for v in values:
            assert quantize_value(float(v), s, k) == brute_force_quantize(float(v), s, k)


class TestFakeQuant:
    def test_two_bit_hand_case(self):
        x = np.array([-1.0, -0.2, 0.6, 1.0], dtype=np.float32)
        np.testing.assert_allclose(fake_quant_array(x, 2), [-1.0, 0.0, 1.0, 1.0])

    def test_all_zero_passes_through(self):
        x = np.zeros(5, dtype=np.float32)
        np.testing.assert_array_equal(fake_quant_array(x, 4), x)

    def test_disabled_bits_identity(self):
        x = np.random.default_rng(0).standard_normal(16).astype(np.float32)
        assert fake_quant_array(x, 32) is x

    @settings(max_examples=60, deadline=None)
    @given(st.integers(2, 8),
           st.lists(st.floats(-10, 10, allow_nan=False, width=32), min_size=1, max_size=32))
    def test_symmetry(self, k, values):
        x = np.asarray(values, dtype=np.float32)
        np.testing.assert_allclose(fake_quant_array(-x, k), -fake_quant_array(x, k))

    @settings(max_examples=60, deadline=None)
    @given(st.integers(2, 8),
           st.lists(st.floats(-4, 4, allow_nan=False, width=32), min_size=1, max_size=32))
    def test_grid_membership(self, k, values):
        x = np.asarray(values, dtype=np.float32)
        m = float(np.abs(x).max())
        s = scale_for(m, k)
        y = fake_quant_array(x, k)
        if s is None:
            np.testing.assert_array_equal(y, x)
            return
        scaled = y.astype(np.float64) * s
        np.testing.assert_allclose(scaled, np.rint(scaled), atol=1e-5)
        assert np.all(np.abs(scaled) <= qmax(k) + 1e-5)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(2, 8),
           st.lists(st.floats(-4, 4, allow_nan=False, width=32), min_size=2, max_size=32))
    def test_round_trip_bound(self, k, values):
        x = np.asarray(values, dtype=np.float32)
        m = float(np.abs(x).max())
        s = scale_for(m, k)
        if s is None:
            return
        y = fake_quant_array(x, k)
        assert np.all(np.abs(x - y) <= 1.0 / (2.0 * s) + 1e-6)

    def test_idempotence_over_random_tensors(self):
        rng = np.random.default_rng(1234)
        for _ in range(1000):
            k = int(rng.integers(2, 9))
            x = rng.uniform(-3, 3, size=rng.integers(1, 40)).astype(np.float32)
            once = fake_quant_array(x, k)
            twice = fake_quant_array(once, k)
            np.testing.assert_allclose(twice, once, rtol=1e-5, atol=1e-7)

    def test_ste_identity_inside_range(self):
        x = ad.Tensor([-0.5, 0.3, 0.9], requires_grad=True)
        with ad.Tape() as tape:
            loss = ad.sum_(fake_quant(x, 4))
        tape.backward(loss)
        np.testing.assert_allclose(x.grad, [1.0, 1.0, 1.0])

    def test_ste_zero_outside_tracker_range(self):
        tracker = ActRangeTracker()
        tracker.observe(1.0)
        tracker.freeze()
        x = ad.Tensor([-2.0, -1.0, 0.5, 1.0, 3.0], requires_grad=True)
        with ad.Tape() as tape:
            loss = ad.sum_(fake_quant(x, 4, tracker))
        tape.backward(loss)
        np.testing.assert_allclose(x.grad, [0.0, 1.0, 1.0, 1.0, 0.0])


class TestActRangeTracker:
    def test_max_mode_non_decreasing(self):
        tr = ActRangeTracker(mode="max")
        seen = []
        for v in [0.5, 2.0, 1.0, 3.0, 0.1]:
            tr.observe(v)
            seen.append(tr.running_max)
        assert seen == sorted(seen)
        assert tr.running_max == 3.0

    def test_ema_mode_smooths(self):
        tr = ActRangeTracker(momentum=0.5, mode="ema")
        tr.observe(1.0)
        assert tr.running_max == 1.0  # first observation initializes
        tr.observe(3.0)
        assert tr.running_max == pytest.approx(2.0)

    def test_frozen_never_changes(self):
        tr = ActRangeTracker()
        tr.observe(1.0)
        tr.freeze()
        tr.observe(100.0)
        assert tr.running_max == 1.0

    def test_bad_momentum_rejected(self):
        with pytest.raises(ConfigError):
            ActRangeTracker(momentum=1.5)


class TestQuantSpec:
    def test_valid_range(self):
        spec = QuantSpec(3, 3)
        assert spec.zero_point == 0

    @pytest.mark.parametrize("bits", [0, 1, 9, 31])
    def test_out_of_range_rejected(self, bits):
        with pytest.raises(ConfigError):
            QuantSpec(bits, 4)

    def test_disabled_bits_allowed(self):
        QuantSpec(32, 32)


class TestQuantizeModel:
    @pytest.fixture
    def teacher(self):
        return build_teacher(4, np.random.default_rng(7))

    def test_disabled_wrapper_is_bit_exact(self, teacher):
        q = quantize_model(teacher, QuantSpec(32, 32))
        teacher.eval()
        q.eval()
        x = ad.Tensor(np.random.default_rng(1).uniform(-1, 1, (4, 3, 16, 16)).astype(np.float32))
        np.testing.assert_array_equal(q.forward(x).data, teacher.forward(x).data)

    def test_wraps_weights_and_activations(self, teacher):
        q = quantize_model(teacher, QuantSpec(3, 3))
        kinds = {l.kind: l for l in q.layers}
        assert all(l.weight_quant is not None for l in q.layers
                   if l.kind in ("conv2d", "linear"))
        assert all(l.act_quant_bits == 3 for l in q.layers if l.kind == "relu")
        assert kinds["batchnorm2d"].weight_quant is None  # BN stays full precision

    def test_shadow_initialized_from_source(self, teacher):
        q = quantize_model(teacher, QuantSpec(3, 3))
        for (_, pt), (_, qt) in zip(teacher.named_parameters(), q.named_parameters()):
            np.testing.assert_array_equal(pt.data, qt.data)

    def test_source_model_untouched(self, teacher):
        quantize_model(teacher, QuantSpec(3, 3))
        assert all(l.weight_quant is None for l in teacher.layers)

    def test_forward_lands_on_weight_grid(self, teacher):
        q = quantize_model(teacher, QuantSpec(3, 8))
        conv = q.layers[0]
        w_view = fake_quant_weight(conv.weight_quant)
        s = conv.weight_quant.last_scale
        scaled = w_view.data.astype(np.float64) * s
        np.testing.assert_allclose(scaled, np.rint(scaled), atol=1e-3)

    def test_unsupported_layer_kind_named(self, teacher):
        class Odd:
            kind = "mystery"
            weight_quant = None
        teacher.layers.append(Odd())
        with pytest.raises(ModelError, match="mystery"):
            quantize_model(teacher, QuantSpec(3, 3))

    def test_quantized_taps_match_architecture(self, teacher):
        q = quantize_model(teacher, QuantSpec(3, 3))
        assert q.tap_indices == teacher.tap_indices
        q.eval()
        x = ad.Tensor(np.random.default_rng(2).uniform(-1, 1, (2, 3, 16, 16)).astype(np.float32))
        _, taps, _ = forward_with_taps(q, x)
        assert [tp.shape[1] for tp in taps] == [16, 32, 64, 64]
