"""Discrepancy machinery: relation maps, adaptive weights, regularizer, and
the stage-loss algebra."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from zaq import autodiff as ad
from zaq.errors import ConfigError, ContractError, ShapeError
from zaq.losses import (ActivationStats, AdaptiveWeightState, activation_regularizer,
                        crm, feature_discrepancy, loss_de, loss_kt, output_discrepancy,
                        update_adaptive_weights)


def t(data, grad=False):
    return ad.Tensor(data, requires_grad=grad)


def feature_maps(draw_shape=(3, 2, 2)):
    return hnp.arrays(np.float32, draw_shape,
                      elements=st.floats(-2, 2, allow_nan=False, width=32))


class TestCrm:
    def test_identical_channels_all_ones(self):
        fm = np.stack([np.full((2, 2), 3.0), np.full((2, 2), 1.0)])
        r = crm(t(fm)).data
        np.testing.assert_allclose(r, np.ones((2, 2)), atol=1e-6)

    def test_orthogonal_channels_identity(self):
        fm = np.zeros((2, 1, 2), dtype=np.float32)
        fm[0, 0, 0] = 1.0
        fm[1, 0, 1] = 1.0
        np.testing.assert_allclose(crm(t(fm)).data, np.eye(2), atol=1e-6)

    def test_hand_cosine(self):
        fm = np.array([[[1.0, 0.0]], [[1.0, 1.0]]], dtype=np.float32)
        r = crm(t(fm)).data
        np.testing.assert_allclose(r, [[1.0, 0.70711], [0.70711, 1.0]], atol=1e-4)

    def test_zero_channel_rows_are_zero(self):
        fm = np.zeros((2, 2, 2), dtype=np.float32)
        fm[0] = 1.0
        r = crm(t(fm)).data
        assert r[0, 0] == pytest.approx(1.0, abs=1e-6)
        assert r[0, 1] == r[1, 0] == r[1, 1] == 0.0

    def test_batched_maps_one_per_sample(self):
        rng = np.random.default_rng(0)
        fm = rng.uniform(-1, 1, (4, 3, 2, 2)).astype(np.float32)
        r = crm(t(fm)).data
        assert r.shape == (4, 3, 3)
        for i in range(4):
            np.testing.assert_allclose(r[i], crm(t(fm[i])).data, atol=1e-6)

    def test_invalid_rank_rejected(self):
        with pytest.raises(ShapeError):
            crm(t(np.ones((3, 3))))

    @settings(max_examples=40, deadline=None)
    @given(feature_maps(), st.floats(0.1, 20.0))
    def test_positive_scale_invariance(self, fm, factor):
        scaled = fm.copy()
        scaled[1] *= np.float32(factor)
        np.testing.assert_allclose(crm(t(scaled)).data, crm(t(fm)).data, atol=1e-5)

    @settings(max_examples=40, deadline=None)
    @given(feature_maps((4, 2, 2)), st.permutations(list(range(4))))
    def test_permutation_equivariance(self, fm, perm):
        perm = np.asarray(perm)
        permuted = crm(t(fm[perm])).data
        base = crm(t(fm)).data
        np.testing.assert_allclose(permuted, base[np.ix_(perm, perm)], atol=1e-5)

    @settings(max_examples=40, deadline=None)
    @given(feature_maps())
    def test_symmetric_unit_diag_bounded(self, fm):
        r = crm(t(fm)).data.astype(np.float64)
        np.testing.assert_allclose(r, r.T, atol=1e-5)
        assert np.all(np.abs(r) <= 1.0 + 1e-5)
        norms = np.linalg.norm(fm.reshape(3, -1), axis=1)
        for i, n in enumerate(norms):
            if n >= 1e-8:
                assert r[i, i] == pytest.approx(1.0, abs=1e-5)

    def test_gram_mode_raw_inner_products(self):
        fm = np.array([[[1.0, 0.0]], [[1.0, 1.0]]], dtype=np.float32)
        r = crm(t(fm), gram=True).data
        np.testing.assert_allclose(r, [[1.0, 1.0], [1.0, 2.0]], atol=1e-6)


class TestOutputDiscrepancy:
    def test_identical_outputs_are_zero(self):
        p = t(np.ones((3, 4)))
        assert output_discrepancy(p, t(np.ones((3, 4)))).item() == 0.0

    def test_hand_case(self):
        d = output_discrepancy(t([[1.0, 0.0]]), t([[0.0, 1.0]]))
        assert d.item() == pytest.approx(1.0)

    def test_l1_homogeneity(self):
        rng = np.random.default_rng(1)
        p = rng.standard_normal((4, 5)).astype(np.float32)
        q = rng.standard_normal((4, 5)).astype(np.float32)
        base = output_discrepancy(t(p), t(q)).item()
        scaled = output_discrepancy(t(3 * p), t(3 * q)).item()
        assert scaled == pytest.approx(3 * base, rel=1e-5)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            output_discrepancy(t(np.ones((2, 3))), t(np.ones((3, 2))))


class TestAdaptiveWeights:
    def test_equal_gaps_uniform(self):
        state = AdaptiveWeightState(4)
        state.update([2.0, 2.0, 2.0, 2.0])
        np.testing.assert_allclose(state.weights, 0.25)

    def test_hand_softmax(self):
        state = AdaptiveWeightState(2, ema_momentum=0.9)
        state.update([np.log(2.0), 0.0])
        np.testing.assert_allclose(state.weights, [2 / 3, 1 / 3], atol=1e-6)

    def test_epoch_reset_exact(self):
        state = AdaptiveWeightState(4)
        state.update([1.0, 5.0, 2.0, 0.5])
        state.reset_epoch()
        assert state.weights == (0.25, 0.25, 0.25, 0.25)
        assert state.ema is None and state.step_count == 0

    def test_first_update_initializes_ema(self):
        state = AdaptiveWeightState(2, ema_momentum=0.9)
        state.update([4.0, 2.0])
        np.testing.assert_allclose(state.ema, [4.0, 2.0])
        state.update([0.0, 0.0])
        np.testing.assert_allclose(state.ema, [3.6, 1.8])

    def test_negative_gap_rejected(self):
        state = AdaptiveWeightState(2)
        with pytest.raises(ContractError):
            state.update([1.0, -0.5])

    def test_length_mismatch_rejected(self):
        with pytest.raises(ContractError):
            AdaptiveWeightState(3).update([1.0, 2.0])

    def test_free_function_updates_state(self):
        state = update_adaptive_weights(AdaptiveWeightState(2), [1.0, 3.0])
        assert state.step_count == 1

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(0, 50, allow_nan=False), min_size=3, max_size=3),
           st.lists(st.floats(0, 50, allow_nan=False), min_size=3, max_size=3))
    def test_distribution_and_argmax(self, gaps1, gaps2):
        state = AdaptiveWeightState(3)
        state.update(gaps1)
        state.update(gaps2)
        w = np.asarray(state.weights)
        assert w.sum() == pytest.approx(1.0, abs=1e-6)
        assert np.all(w > 0)
        assert int(np.argmax(w)) == int(np.argmax(state.ema))


class TestFeatureDiscrepancy:
    def test_identical_taps_zero(self):
        rng = np.random.default_rng(2)
        taps = [t(rng.uniform(-1, 1, (2, 3, 2, 2)).astype(np.float32)) for _ in range(2)]
        state = AdaptiveWeightState(2)
        total, gaps = feature_discrepancy(taps, taps, state)
        assert total.item() == 0.0
        assert gaps == [0.0, 0.0]

    def test_identity_vs_allones_hand_case(self):
        # two orthogonal unit channels vs two identical channels:
        # relation maps are I and all-ones, L1 gap 2, weighted by 1/C^2
        p_map = np.zeros((1, 2, 1, 2), dtype=np.float32)
        p_map[0, 0, 0, 0] = 1.0
        p_map[0, 1, 0, 1] = 1.0
        q_map = np.ones((1, 2, 1, 2), dtype=np.float32)
        total, gaps = feature_discrepancy([t(p_map)], [t(q_map)], [1.0])
        assert total.item() == pytest.approx(0.5, abs=1e-5)
        assert gaps[0] == pytest.approx(2.0, abs=1e-5)

    def test_linearity_in_weights(self):
        rng = np.random.default_rng(3)
        p = [t(rng.uniform(-1, 1, (2, 2, 2, 2)).astype(np.float32))]
        q = [t(rng.uniform(-1, 1, (2, 2, 2, 2)).astype(np.float32))]
        one, _ = feature_discrepancy(p, q, [1.0])
        two, _ = feature_discrepancy(p, q, [2.0])
        assert two.item() == pytest.approx(2 * one.item(), rel=1e-5)

    def test_symmetry_in_models(self):
        rng = np.random.default_rng(4)
        p = [t(rng.uniform(-1, 1, (2, 3, 2, 2)).astype(np.float32))]
        q = [t(rng.uniform(-1, 1, (2, 3, 2, 2)).astype(np.float32))]
        state = AdaptiveWeightState(1)
        a, _ = feature_discrepancy(p, q, state)
        b, _ = feature_discrepancy(q, p, state)
        assert a.item() == pytest.approx(b.item(), rel=1e-6)

    def test_tap_count_mismatch_rejected(self):
        maps = [t(np.ones((1, 2, 2, 2)))]
        with pytest.raises(ShapeError):
            feature_discrepancy(maps, maps * 2, AdaptiveWeightState(2))


class TestActivationRegularizer:
    def test_zero_maps_zero(self):
        stats = ActivationStats(t(np.zeros((2, 3, 2, 2))))
        assert activation_regularizer(stats).item() == 0.0

    def test_hand_case(self):
        maps = np.array([1.0, -1.0, 2.0], dtype=np.float32).reshape(1, 1, 1, 3)
        assert activation_regularizer(ActivationStats(t(maps))).item() == pytest.approx(-4.0)

    def test_stronger_activation_more_negative(self):
        rng = np.random.default_rng(5)
        h = rng.uniform(0.1, 1.0, (2, 4, 3, 3)).astype(np.float32)
        weak = activation_regularizer(ActivationStats(t(h))).item()
        strong = activation_regularizer(ActivationStats(t(2 * h))).item()
        assert strong < weak <= 0.0

    def test_empty_maps_rejected(self):
        with pytest.raises(ContractError):
            ActivationStats(t(np.ones((3, 2))))


class TestLossAlgebra:
    def test_zero_terms(self):
        zero = t(0.0)
        assert loss_kt(zero, zero, 0.1).item() == 0.0
        assert loss_de(zero, zero, zero, 0.1, 0.05).item() == 0.0

    def test_hand_case(self):
        d_o, d_f, l_a = t(1.0), t(2.0), t(-4.0)
        assert loss_kt(d_o, d_f, 0.1).item() == pytest.approx(1.2)
        assert loss_de(d_o, d_f, l_a, 0.1, 0.05).item() == pytest.approx(-1.4)

    def test_negative_coefficients_rejected(self):
        zero = t(0.0)
        with pytest.raises(ConfigError):
            loss_kt(zero, zero, -0.1)
        with pytest.raises(ConfigError):
            loss_de(zero, zero, zero, 0.1, -0.05)

    @settings(max_examples=100, deadline=None)
    @given(st.floats(0, 5, allow_nan=False, width=32),
           st.floats(0, 5, allow_nan=False, width=32),
           st.floats(-5, 0, allow_nan=False, width=32),
           st.floats(0, 1, allow_nan=False, width=32),
           st.floats(0, 1, allow_nan=False, width=32))
    def test_identity_de_plus_kt(self, d_o, d_f, l_a, alpha, beta):
        de = loss_de(t(d_o), t(d_f), t(l_a), alpha, beta).item()
        kt = loss_kt(t(d_o), t(d_f), alpha).item()
        assert de + kt == pytest.approx(beta * l_a, abs=1e-6)

    def test_identity_on_random_batches(self):
        rng = np.random.default_rng(6)
        for _ in range(100):
            p = t(rng.uniform(-1, 1, (4, 6)).astype(np.float32))
            q = t(rng.uniform(-1, 1, (4, 6)).astype(np.float32))
            pm = [t(rng.uniform(-1, 1, (4, 3, 2, 2)).astype(np.float32))]
            qm = [t(rng.uniform(-1, 1, (4, 3, 2, 2)).astype(np.float32))]
            h = t(rng.uniform(-1, 1, (4, 3, 2, 2)).astype(np.float32))
            d_o = output_discrepancy(p, q)
            d_f, _ = feature_discrepancy(pm, qm, [1.0])
            l_a = activation_regularizer(ActivationStats(h))
            de = loss_de(d_o, d_f, l_a, 0.1, 0.05).item()
            kt = loss_kt(d_o, d_f, 0.1).item()
            assert de + kt == pytest.approx(0.05 * l_a.item(), abs=1e-6)
