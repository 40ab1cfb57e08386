import math

import numpy as np
import pytest

from bevrope import embeddings, numerics
from bevrope.embeddings import (
    ChannelPartition, FrequencySpectrum, LearnablePositionTable, RotaryAngles,
    SpatioTemporalCoord, angle_matrix, apply_rotation, lookup_learnable,
    mrope_angles, normalize_bev, normalize_time, rotation_tables, sinusoidal_pe)
from bevrope.numerics import ConfigurationError, Matrix, Tape


class TestSinusoidal:
    def test_position_zero(self):
        v = sinusoidal_pe(0.0, 8)
        assert np.array_equal(v[0::2], np.zeros(4))
        assert np.array_equal(v[1::2], np.ones(4))

    def test_closed_form_dim4(self):
        v = sinusoidal_pe(1.0, 4, base=10000.0)
        # oracle: channel 2i = sin(base^(-2i/4)), 2i+1 = cos(same)
        expect = [math.sin(1.0), math.cos(1.0), math.sin(0.01), math.cos(0.01)]
        assert np.allclose(v, expect, rtol=0, atol=1e-15)
        assert np.allclose(v, [0.841471, 0.540302, 0.010000, 0.999950], atol=1e-6)

    def test_wavelength_multiple(self):
        # channel 2 frequency is base^(-2/4); a half-period position zeroes it
        pos = math.pi * 10000 ** (2 / 4)
        assert abs(sinusoidal_pe(pos, 4)[2]) < 1e-9

    def test_entries_bounded(self):
        v = sinusoidal_pe(12345.678, 32)
        assert np.abs(v).max() <= 1.0

    def test_odd_dim_rejected(self):
        with pytest.raises(ConfigurationError):
            sinusoidal_pe(1.0, 5)

    def test_distinct_positions(self):
        vecs = np.stack([sinusoidal_pe(p, 16) for p in range(256)])
        for i in range(256):
            diff = np.abs(vecs - vecs[i]).max(axis=1)
            diff[i] = 1.0
            assert diff.min() > 1e-9


class TestNormalization:
    def test_bev_center(self):
        assert normalize_bev(0.0, 0.0, 50.0) == (0.5, 0.5)

    def test_bev_corners(self):
        assert normalize_bev(-50.0, 50.0, 50.0) == (0.0, 1.0)

    def test_bev_formula(self):
        assert normalize_bev(25.0, -10.0, 50.0) == (0.75, 0.4)

    def test_bev_clamps(self):
        assert normalize_bev(-999.0, 999.0, 50.0) == (0.0, 1.0)

    def test_bev_bad_extent(self):
        with pytest.raises(ConfigurationError):
            normalize_bev(0.0, 0.0, 0.0)

    def test_time(self):
        assert normalize_time(0, 8) == 0.0
        assert normalize_time(8, 8) == 1.0
        assert normalize_time(3, 8) == 0.375
        assert normalize_time(99, 8) == 1.0

    def test_time_bad_window(self):
        with pytest.raises(ConfigurationError):
            normalize_time(0, 0)

    def test_coord_clamps(self):
        c = SpatioTemporalCoord(-0.5, 1.5, 0.25)
        assert (c.x, c.y, c.t) == (0.0, 1.0, 0.25)


class TestFrequencySpectrum:
    def test_strictly_decreasing_in_unit_interval(self):
        w = FrequencySpectrum(16).frequencies()
        assert w[0] == 1.0
        assert (np.diff(w) < 0).all()
        assert (w > 0).all() and (w <= 1.0).all()
        assert w[-1] >= 10000.0 ** (-1) * 10000.0 ** (1 / 16) - 1e-15

    def test_log_spacing(self):
        w = FrequencySpectrum(12, base=10000.0).frequencies()
        gaps = np.diff(np.log(w))
        assert np.abs(gaps - gaps[0]).max() < 1e-12

    def test_validation(self):
        with pytest.raises(ConfigurationError):
            FrequencySpectrum(4, base=1.0)
        with pytest.raises(ConfigurationError):
            FrequencySpectrum(4, position_scale=0.0)
        with pytest.raises(ConfigurationError):
            FrequencySpectrum(-1)


class TestChannelPartition:
    def test_spatial_symmetry_enforced(self):
        with pytest.raises(ConfigurationError):
            ChannelPartition(2, 3, 4)

    def test_default_64(self):
        part = ChannelPartition.default_for(64)
        assert (part.pairs_t, part.pairs_x, part.pairs_y) == (8, 12, 12)

    def test_default_16(self):
        part = ChannelPartition.default_for(16)
        assert (part.pairs_t, part.pairs_x, part.pairs_y) == (2, 3, 3)

    def test_spatial_only(self):
        part = ChannelPartition.spatial_only(16)
        assert (part.pairs_t, part.pairs_x, part.pairs_y) == (0, 4, 4)

    def test_coverage(self):
        for head_dim in (8, 16, 32, 64):
            assert ChannelPartition.default_for(head_dim).total == head_dim // 2

    def test_odd_head_dim(self):
        with pytest.raises(ConfigurationError):
            ChannelPartition.default_for(7)


class TestMropeAngles:
    part = ChannelPartition(2, 3, 3)
    spec_t = FrequencySpectrum(2, position_scale=128.0)
    spec_xy = FrequencySpectrum(3, position_scale=128.0)

    def test_origin_gives_zero(self):
        ang = mrope_angles(SpatioTemporalCoord(0, 0, 0), self.part,
                           self.spec_t, self.spec_xy)
        assert np.array_equal(ang.values, np.zeros(8))

    def test_block_leading_angles(self):
        ang = mrope_angles(SpatioTemporalCoord(1, 1, 1), self.part,
                           self.spec_t, self.spec_xy)
        # first angle of every block is coord * scale * omega_0 = 128
        assert ang.values[0] == 128.0          # t block
        assert ang.values[2] == 128.0          # x block
        assert ang.values[5] == 128.0          # y block

    def test_layout_matches_partition(self):
        c = SpatioTemporalCoord(0.25, 0.75, 0.5)
        ang = mrope_angles(c, self.part, self.spec_t, self.spec_xy)
        expect = np.concatenate([
            0.5 * 128.0 * self.spec_t.frequencies(),
            0.25 * 128.0 * self.spec_xy.frequencies(),
            0.75 * 128.0 * self.spec_xy.frequencies(),
        ])
        assert np.array_equal(ang.values, expect)

    def test_spatial_only_partition(self):
        part = ChannelPartition(0, 4, 4)
        ang = mrope_angles(SpatioTemporalCoord(0.5, 0.5, 0.9), part,
                           FrequencySpectrum(0), FrequencySpectrum(4))
        assert ang.values.shape == (8,)
        # no temporal block: changing t changes nothing
        ang2 = mrope_angles(SpatioTemporalCoord(0.5, 0.5, 0.1), part,
                            FrequencySpectrum(0), FrequencySpectrum(4))
        assert np.array_equal(ang.values, ang2.values)

    def test_mismatched_spectrum(self):
        with pytest.raises(ConfigurationError):
            mrope_angles(SpatioTemporalCoord(0, 0, 0), self.part,
                         FrequencySpectrum(5), self.spec_xy)

    def test_angle_matrix_matches_scalar_path(self):
        gen = np.random.default_rng(3)
        coords = gen.uniform(0, 1, (6, 3))
        batch = angle_matrix(coords, self.part, self.spec_t, self.spec_xy)
        for i, (x, y, t) in enumerate(coords):
            single = mrope_angles(SpatioTemporalCoord(x, y, t), self.part,
                                  self.spec_t, self.spec_xy)
            assert np.allclose(batch[i], single.values, rtol=0, atol=1e-15)


class TestApplyRotation:
    def test_zero_angles_identity(self):
        v = np.arange(8.0)
        out = apply_rotation(v, np.zeros(4))
        assert np.array_equal(out, v)

    def test_quarter_turn(self):
        out = apply_rotation(np.array([1.0, 0.0]), np.array([math.pi / 2]))
        assert abs(out[0]) < 1e-12 and abs(out[1] - 1.0) < 1e-12

    def test_norm_preserved(self):
        gen = np.random.default_rng(5)
        for _ in range(200):
            v = gen.standard_normal(12)
            theta = gen.uniform(-20, 20, 6)
            out = apply_rotation(v, theta)
            assert abs(np.linalg.norm(out) - np.linalg.norm(v)) < 1e-12

    def test_composition(self):
        gen = np.random.default_rng(6)
        for _ in range(200):
            v = gen.standard_normal(10)
            a = gen.uniform(-5, 5, 5)
            b = gen.uniform(-5, 5, 5)
            once = apply_rotation(v, a + b)
            twice = apply_rotation(apply_rotation(v, a), b)
            assert np.abs(once - twice).max() < 1e-9

    def test_length_mismatch(self):
        with pytest.raises(ConfigurationError):
            apply_rotation(np.ones(6), np.zeros(4))

    def test_rotary_angles_wrapper(self):
        part = ChannelPartition(1, 1, 1)
        ang = RotaryAngles(np.array([0.1, 0.2, 0.3]), part)
        out = apply_rotation(np.ones(6), ang)
        assert out.shape == (6,)


class TestRelativeOffset:
    """The core rotary identity: logits depend only on relative offsets."""

    def test_per_axis_blocks(self):
        part = ChannelPartition(2, 3, 3)
        spec_t = FrequencySpectrum(2, position_scale=32.0)
        spec_xy = FrequencySpectrum(3, position_scale=128.0)
        gen = np.random.default_rng(7)
        for axis in range(3):
            for _ in range(200):
                q = gen.standard_normal(16)
                k = gen.standard_normal(16)
                a = gen.uniform(0, 0.5, 3)
                b = gen.uniform(0, 0.5, 3)
                s = gen.uniform(0, 0.5)
                a2, b2 = a.copy(), b.copy()
                a2[axis] += s
                b2[axis] += s
                ang = angle_matrix(np.stack([a, b, a2, b2]), part, spec_t, spec_xy)
                d1 = apply_rotation(q, ang[0]) @ apply_rotation(k, ang[1])
                d2 = apply_rotation(q, ang[2]) @ apply_rotation(k, ang[3])
                assert abs(d1 - d2) < 1e-6


class TestLearnableTable:
    def test_seeded_determinism(self):
        from bevrope import rng
        a = rng.stream(9, rng.INIT, "table").standard_normal((4, 3))
        b = rng.stream(9, rng.INIT, "table").standard_normal((4, 3))
        table = LearnablePositionTable(4, 3, a)
        assert np.array_equal(table.values, b)

    def test_single_sgd_step_moves_one_row(self):
        table = LearnablePositionTable(5, 4, np.zeros((5, 4)))
        before = table.values.copy()
        tape = Tape()
        tracked = tape.param("table", table.values)
        loss = numerics.sum_all(lookup_learnable(tracked, 3))
        grads = tape.backprop(loss)
        table.values -= 0.1 * grads["table"]
        assert np.allclose(table.values[3], before[3] - 0.1, atol=0)
        others = [r for r in range(5) if r != 3]
        assert np.array_equal(table.values[others], before[others])

    def test_gradients_flow_on_backprop(self):
        tape = Tape()
        tracked = tape.param("table", np.ones((4, 2)))
        row = lookup_learnable(tracked, 1)
        grads = tape.backprop(numerics.sum_all(numerics.gelu(row)))
        assert np.abs(grads["table"][1]).max() > 0
        assert np.array_equal(grads["table"][[0, 2, 3]], np.zeros((3, 2)))

    def test_out_of_range_index(self):
        tape = Tape()
        tracked = tape.param("table", np.ones((4, 2)))
        with pytest.raises(ConfigurationError):
            lookup_learnable(tracked, 4)
        with pytest.raises(ConfigurationError):
            lookup_learnable(tracked, -1)

    def test_bad_init_shape(self):
        with pytest.raises(ConfigurationError):
            LearnablePositionTable(4, 3, np.zeros((3, 3)))


def test_rotation_tables_tile_per_head():
    part = ChannelPartition(1, 1, 1)
    ang = angle_matrix(np.array([[0.2, 0.4, 0.6]]), part,
                       FrequencySpectrum(1, position_scale=1.0),
                       FrequencySpectrum(1, position_scale=1.0))
    cos, sin = rotation_tables(ang, 3)
    assert cos.shape == (1, 9)
    assert np.array_equal(cos[0, :3], cos[0, 3:6])
    assert np.array_equal(sin[0, :3], sin[0, 6:9])
