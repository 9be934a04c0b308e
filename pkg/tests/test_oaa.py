import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from mmoaa.beamform import BeamformerState, bcd_solve
from mmoaa.channel import ChannelSet
from mmoaa.errors import DegenerateError
from mmoaa.oaa import (complex_length, downlink_broadcast, ideal_aggregate, pack_complex,
                       pack_padded, place_models, unpack_complex, uplink_aggregate)
from mmoaa.scheduler import Schedule, single_group

from support import random_channels, random_instance, random_state, ref_group_estimate

finite = st.floats(-1e6, 1e6, allow_nan=False)


class TestPacking:
    def test_example(self):
        np.testing.assert_array_equal(pack_complex([1, 2, 3, 4]).values, [1 + 3j, 2 + 4j])

    def test_odd_rejected(self):
        with pytest.raises(ValueError):
            pack_complex([1.0, 2.0, 3.0])

    @given(st.lists(finite, min_size=1, max_size=40))
    def test_round_trip_exact(self, xs):
        theta = np.array(xs)
        packed = pack_padded(theta)
        assert packed.values.size == complex_length(theta.size)
        np.testing.assert_array_equal(packed.unpack(), theta)

    @given(st.lists(finite, min_size=2, max_size=40).filter(lambda v: len(v) % 2 == 0))
    def test_norm_preserved(self, xs):
        theta = np.array(xs)
        assert np.linalg.norm(pack_complex(theta).values) == pytest.approx(np.linalg.norm(theta))

    def test_unpack_truncates_pad(self):
        np.testing.assert_array_equal(unpack_complex(np.array([1 + 3j, 2 + 0j]), 3), [1, 2, 3])


class TestDownlink:
    def test_noiseless_copy(self):
        theta = np.arange(6.0)
        np.testing.assert_array_equal(downlink_broadcast(theta, 0.0, np.random.default_rng(0))[0],
                                      theta)

    def test_variance(self):
        out = downlink_broadcast(np.zeros(1), 0.3, np.random.default_rng(1), n_devices=100_000)
        assert np.var(out) == pytest.approx(0.3, rel=0.05)

    def test_devices_independent(self):
        out = downlink_broadcast(np.zeros(100_000), 1.0, np.random.default_rng(2), n_devices=2)
        assert abs(np.corrcoef(out[0], out[1])[0, 1]) < 0.02

    def test_negative_variance(self):
        with pytest.raises(ValueError):
            downlink_broadcast(np.zeros(2), -1.0, np.random.default_rng(0))


def locals_for(rng, K, D):
    return {k: rng.standard_normal(D) for k in range(K)}


class TestUplink:
    @given(st.integers(0, 10_000))
    @settings(max_examples=30, deadline=None)
    def test_noiseless_single_group_is_weighted_average(self, seed):
        rng, ch, _, caps = random_instance(seed, M=1)
        sch = single_group(ch.K)
        state = random_state(rng, 1, ch.N, caps)
        D = int(rng.integers(1, 12))
        loc = locals_for(rng, ch.K, D)
        agg = uplink_aggregate(loc, state, ch, sch, 0, [D], [0], rng, sigma2_ul=0.0)
        rho = agg.weights[0]
        assert abs(rho.sum() - 1.0) <= 1e-12
        expected = sum(r * loc[k] for r, k in zip(rho, sch.members(1)))
        np.testing.assert_allclose(agg.global_models[1], expected, atol=1e-10, rtol=0)

    def test_orthogonal_subspaces(self):
        rng = np.random.default_rng(4)
        h = np.zeros((4, 4), dtype=complex)
        h[:2, :2] = rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2))
        h[2:, 2:] = rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2))
        ch = ChannelSet(0, h, 0.0, 0.0)
        sch = Schedule(0, (np.array([0, 1]), np.array([2, 3])))
        w = np.zeros((2, 4), dtype=complex)
        w[0, :2] = [0.6, 0.8j]
        w[1, 2:] = [0.8, -0.6]
        state = BeamformerState(w, np.ones(4))
        loc = locals_for(rng, 4, 6)
        agg = uplink_aggregate(loc, state, ch, sch, 0, [6, 6], [0, 0], rng)
        for i in (1, 2):
            m = sch.model_of(i, 0)
            expected = sum(r * loc[k] for r, k in zip(agg.weights[i - 1], sch.members(i)))
            np.testing.assert_allclose(agg.global_models[m], expected, atol=1e-10, rtol=0)
            assert agg.interference_power[i - 1] < 1e-25

    @pytest.mark.parametrize("seed", range(6))
    def test_single_device_groups_match_transcription(self, seed):
        rng = np.random.default_rng(seed)
        M = 3
        ch = random_channels(rng, M, 4)
        sch = Schedule(0, tuple(np.array([k]) for k in range(M)))
        caps = np.ones(M)
        state = bcd_solve(ch, sch, caps, 2).state
        dims = [6, 6, 6]
        loc = locals_for(rng, M, 6)
        t = int(rng.integers(0, 5))
        agg = uplink_aggregate(loc, state, ch, sch, t, dims, [0] * M, rng, sigma2_ul=0.0)
        groups = [list(g) for g in sch.groups]
        for i in range(1, M + 1):
            ref, _, _ = ref_group_estimate(i - 1, loc, state.w, state.p, ch.h, groups,
                                           [3] * M, [0] * M, 3)
            got = pack_complex(agg.global_models[sch.model_of(i, t)]).values
            np.testing.assert_allclose(got, ref, atol=1e-10, rtol=0)

    def test_noise_floor(self):
        rng = np.random.default_rng(8)
        ch = random_channels(rng, 3, 4, sigma2_ul=0.5)
        sch = single_group(3)
        state = random_state(rng, 1, 4, np.ones(3))
        D = 8
        theta = np.full(D, 0.7)
        loc = {k: theta for k in range(3)}
        runs = 4000
        sq = np.empty(runs)
        for n in range(runs):
            agg = uplink_aggregate(loc, state, ch, sch, 0, [D], [0], rng)
            sq[n] = np.sum((agg.global_models[1] - theta) ** 2)
        inner = np.abs(state.w[0].conj() @ ch.h.T)
        alpha_sum = np.sum(np.sqrt(state.p) * inner / np.linalg.norm(pack_complex(theta).values))
        expected = 0.5 * D / 2 / alpha_sum ** 2
        assert np.mean(sq) == pytest.approx(expected, rel=0.1)

    def test_disjoint_placements_cancel_interference(self):
        rng = np.random.default_rng(6)
        ch = random_channels(rng, 4, 3)
        sch = Schedule(0, (np.array([0, 1]), np.array([2, 3])))
        state = random_state(rng, 2, 3, np.ones(4))
        dims = [4, 4]  # two symbols each inside a four-symbol frame
        D_max = 8
        loc = locals_for(rng, 4, 4)
        agg = uplink_aggregate(loc, state, ch, sch, 0, dims + [D_max], [0, 2], rng,
                               sigma2_ul=0.0, audit=True)
        for m in (1, 2):
            np.testing.assert_array_equal(agg.terms["interference"][m], 0)

    def test_overlapping_placements_interfere(self):
        rng = np.random.default_rng(6)
        ch = random_channels(rng, 4, 3)
        sch = Schedule(0, (np.array([0, 1]), np.array([2, 3])))
        state = random_state(rng, 2, 3, np.ones(4))
        loc = locals_for(rng, 4, 4)
        agg = uplink_aggregate(loc, state, ch, sch, 0, [4, 4, 8], [1, 2], rng,
                               sigma2_ul=0.0, audit=True)
        # group 1 holds slots 1-2, group 2 slots 2-3; only slot 2 is shared
        assert agg.terms["interference"][1][0] == 0
        assert agg.terms["interference"][1][1] != 0

    @pytest.mark.parametrize("seed", range(5))
    def test_audit_decomposition(self, seed):
        rng, ch, sch, caps = random_instance(seed, K=6, M=3, N=4)
        state = bcd_solve(ch, sch, caps, 10).state
        dims = [5, 10, 7]
        t = int(rng.integers(0, 6))
        offsets = place_models(sch, dims, 10, t, rng)
        loc = {}
        for i in range(1, 4):
            D = dims[sch.model_of(i, t) - 1]
            loc.update({int(k): rng.standard_normal(D) for k in sch.members(i)})
        agg = uplink_aggregate(loc, state, ch, sch, t, dims, offsets, rng, audit=True)
        T = agg.terms
        for m in (1, 2, 3):
            total = T["signal"][m] + T["interference"][m] + T["noise"][m]
            np.testing.assert_allclose(total, T["end_to_end"][m], atol=1e-10, rtol=0)
            np.testing.assert_allclose(T["per_channel_use"][m], T["end_to_end"][m], atol=1e-10,
                                       rtol=0)

    def test_update_terms(self):
        rng, ch, sch, caps = random_instance(2, K=4, M=2, N=3)
        state = bcd_solve(ch, sch, caps, 6).state
        dims = [6, 6]
        previous = {1: rng.standard_normal(6), 2: rng.standard_normal(6)}
        starts, loc = {}, {}
        for i in (1, 2):
            m = sch.model_of(i, 0)
            for k in sch.members(i):
                starts[int(k)] = previous[m] + 0.01 * rng.standard_normal(6)
                loc[int(k)] = starts[int(k)] - 0.1 * rng.standard_normal(6)
        agg = uplink_aggregate(loc, state, ch, sch, 0, dims, [0, 0], rng, audit=True,
                               previous=previous, starts=starts)
        for m in (1, 2):
            parts = agg.terms["update"][m]
            rebuilt = parts["previous"] + parts["progress"] + parts["downlink_noise"]
            np.testing.assert_allclose(rebuilt, agg.terms["signal"][m], atol=1e-12, rtol=0)

    def test_zero_local_model(self):
        rng, ch, sch, caps = random_instance(3, K=2, M=1, N=2)
        state = random_state(rng, 1, 2, caps)
        loc = {0: np.zeros(4), 1: np.ones(4)}
        with pytest.raises(DegenerateError):
            uplink_aggregate(loc, state, ch, single_group(2), 0, [4], [0], rng)

    def test_zero_gain_group(self):
        rng, ch, sch, caps = random_instance(3, K=2, M=1, N=2)
        state = BeamformerState(random_state(rng, 1, 2, caps).w, np.zeros(2))
        loc = {0: np.ones(4), 1: np.ones(4)}
        with pytest.raises(DegenerateError):
            uplink_aggregate(loc, state, ch, single_group(2), 0, [4], [0], rng)

    def test_wrong_length(self):
        rng, ch, sch, caps = random_instance(3, K=2, M=1, N=2)
        state = random_state(rng, 1, 2, caps)
        with pytest.raises(ValueError):
            uplink_aggregate({0: np.ones(4), 1: np.ones(6)}, state, ch, single_group(2), 0, [4],
                             [0], rng)


class TestIdeal:
    def test_identical_locals(self):
        sch = single_group(3)
        v = np.array([0.5, -1.0, 2.0])
        agg = ideal_aggregate({k: v for k in range(3)}, sch, 0, [3])
        np.testing.assert_allclose(agg.global_models[1], v)

    def test_midpoint(self):
        agg = ideal_aggregate({0: np.zeros(5), 1: np.full(5, 2.0)}, single_group(2), 0, [5])
        np.testing.assert_array_equal(agg.global_models[1], np.ones(5))

    def test_equal_gain_limit_of_uplink(self):
        rng = np.random.default_rng(3)
        h = np.tile(rng.standard_normal((1, 3)) + 1j * rng.standard_normal((1, 3)), (2, 1))
        ch = ChannelSet(0, h, 0.0, 0.0)
        state = BeamformerState(h[:1] / np.linalg.norm(h[0]), np.ones(2))
        u = rng.standard_normal(6)
        loc = {0: u, 1: -u[::-1]}  # equal norms so equal alpha
        up = uplink_aggregate(loc, state, ch, single_group(2), 0, [6], [0], rng)
        ideal = ideal_aggregate(loc, single_group(2), 0, [6])
        np.testing.assert_allclose(up.global_models[1], ideal.global_models[1], atol=1e-12)

    def test_custom_weights(self):
        agg = ideal_aggregate({0: np.zeros(2), 1: np.ones(2)}, single_group(2), 0, [2],
                              weights=[np.array([0.25, 0.75])])
        np.testing.assert_allclose(agg.global_models[1], [0.75, 0.75])


class TestPlacement:
    def test_full_size_offset_zero(self):
        sch = Schedule(0, (np.array([0]), np.array([1])))
        offsets = place_models(sch, [10, 10], 10, 0, np.random.default_rng(0))
        np.testing.assert_array_equal(offsets, [0, 0])

    def test_uniform_offsets(self):
        sch = single_group(1)
        rng = np.random.default_rng(1)
        # D_m = 6 inside D_max = 20: offsets 0..7
        draws = np.array([place_models(sch, [6, 20], 20, 0, rng)[0] for _ in range(10_000)])
        counts = np.bincount(draws, minlength=8)
        assert counts.size == 8
        assert stats.chisquare(counts).pvalue > 0.01

    def test_model_too_large(self):
        with pytest.raises(ValueError):
            place_models(single_group(1), [12], 10, 0, np.random.default_rng(0))
