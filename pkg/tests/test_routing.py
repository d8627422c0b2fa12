"""Direction decision, rotation, resizing, and the directional mask."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bivex.routing import (
    Direction,
    concat_dem,
    decide_direction,
    dem_mask,
    rotate_ccw,
    route,
)


class TestDecideDirection:
    def test_wide_is_horizontal(self):
        assert decide_direction(100, 32) is Direction.HORIZONTAL

    def test_tall_is_vertical(self):
        assert decide_direction(32, 100) is Direction.VERTICAL

    def test_square_falls_to_vertical(self):
        assert decide_direction(64, 64) is Direction.VERTICAL

    def test_nonpositive_rejected(self):
        with pytest.raises(ValueError):
            decide_direction(0, 5)
        with pytest.raises(ValueError):
            decide_direction(5, -1)

    def test_exhaustive_small_cases(self):
        for w in range(1, 9):
            for h in range(1, 9):
                expected = Direction.HORIZONTAL if w > h else Direction.VERTICAL
                assert decide_direction(w, h) is expected, (w, h)

    @given(st.integers(1, 10_000), st.integers(1, 10_000))
    @settings(max_examples=200, deadline=None)
    def test_property(self, w, h):
        assert (decide_direction(w, h) is Direction.HORIZONTAL) == (w > h)


class TestRotation:
    def test_ramp_index_mapping(self):
        # 3x2 ramp: rotate counterclockwise, top row becomes left column
        src = np.arange(6, dtype=np.uint8).reshape(3, 2)
        rot = rotate_ccw(src)
        assert rot.shape == (2, 3)
        for r in range(3):
            for c in range(2):
                assert rot[c, r] == src[r, 2 - 1 - c]

    def test_multiset_preserved(self):
        rng = np.random.default_rng(0)
        img = rng.integers(0, 256, size=(5, 9), dtype=np.uint8)
        assert sorted(rotate_ccw(img).ravel()) == sorted(img.ravel())

    def test_top_edge_becomes_left_edge(self):
        img = np.zeros((4, 2), dtype=np.uint8)
        img[0, :] = 255  # top stripe
        rot = rotate_ccw(img)
        assert rot[:, 0].tolist() == [255, 255]


class TestRoute:
    def test_horizontal_same_size_is_identity(self):
        rng = np.random.default_rng(1)
        img = rng.integers(0, 256, size=(32, 100), dtype=np.uint8)
        routed = route(img)
        assert routed.direction is Direction.HORIZONTAL
        assert routed.original_shape == (32, 100)
        np.testing.assert_allclose(routed.pixels.data[0], img / 255.0 - 0.5, atol=1e-12)

    def test_vertical_gets_rotated(self):
        img = np.zeros((100, 32), dtype=np.uint8)
        img[:10, :] = 255  # top band of the vertical sign
        routed = route(img)
        assert routed.direction is Direction.VERTICAL
        # after CCW rotation + resize the band sits at the left edge
        left = routed.pixels.data[0, :, :5].mean()
        right = routed.pixels.data[0, :, -5:].mean()
        assert left > right

    def test_all_zero_normalizes_to_minus_half(self):
        routed = route(np.zeros((10, 20), dtype=np.uint8))
        np.testing.assert_array_equal(routed.pixels.data, np.full((1, 32, 100), -0.5))

    def test_pixel_range_invariant(self):
        rng = np.random.default_rng(2)
        routed = route(rng.integers(0, 256, size=(13, 57), dtype=np.uint8))
        assert routed.pixels.data.min() >= -0.5
        assert routed.pixels.data.max() <= 0.5

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            route(np.zeros((0, 5)))
        with pytest.raises(ValueError):
            route(np.zeros((3, 4, 5)))

    def test_nearest_mode(self):
        img = np.arange(6, dtype=np.uint8).reshape(2, 3) * 40
        routed = route(img, target=(4, 6), interp="nearest")
        assert routed.pixels.shape == (1, 4, 6)
        # nearest keeps only original values
        vals = np.unique(np.round((routed.pixels.data + 0.5) * 255).astype(int))
        assert set(vals) <= set((np.arange(6) * 40).tolist())


class TestDemMask:
    def test_horizontal_closed_form_w3(self):
        m = dem_mask(Direction.HORIZONTAL, 2, 3).data
        np.testing.assert_allclose(m[0, 0], [0.0, np.sin(np.pi / 4), 1.0], atol=1e-12)

    def test_vertical_closed_form_w3(self):
        m = dem_mask(Direction.VERTICAL, 2, 3).data
        np.testing.assert_allclose(m[0, 0], [1.0, np.cos(np.pi / 4), 0.0], atol=1e-12)

    def test_closed_form_at_quarter_points(self):
        m_h = dem_mask(Direction.HORIZONTAL, 1, 5).data[0, 0]
        m_v = dem_mask(Direction.VERTICAL, 1, 5).data[0, 0]
        for k, u in enumerate([0.0, 0.25, 0.5, 0.75, 1.0]):
            assert abs(m_h[k] - np.sin(0.5 * u * np.pi)) <= 1e-12
            assert abs(m_v[k] - np.cos(0.5 * u * np.pi)) <= 1e-12

    def test_pythagorean_identity_per_column(self):
        m_h = dem_mask(Direction.HORIZONTAL, 4, 33).data
        m_v = dem_mask(Direction.VERTICAL, 4, 33).data
        np.testing.assert_allclose(m_h**2 + m_v**2, np.ones_like(m_h), atol=1e-12)

    def test_constant_rows_and_monotone_columns(self):
        m_h = dem_mask(Direction.HORIZONTAL, 5, 17).data[0]
        m_v = dem_mask(Direction.VERTICAL, 5, 17).data[0]
        assert np.all(m_h == m_h[0:1, :])
        assert np.all(np.diff(m_h[0]) >= 0)
        assert np.all(np.diff(m_v[0]) <= 0)
        assert m_h.min() >= 0 and m_h.max() <= 1

    def test_swap_exchanges_kernels(self):
        a = dem_mask(Direction.HORIZONTAL, 2, 9, swap=True).data
        b = dem_mask(Direction.VERTICAL, 2, 9).data
        np.testing.assert_array_equal(a, b)

    def test_single_column(self):
        assert dem_mask(Direction.HORIZONTAL, 3, 1).data[0, 0, 0] == 0.0
        assert dem_mask(Direction.VERTICAL, 3, 1).data[0, 0, 0] == 1.0


class TestConcatDem:
    def test_zero_image_horizontal(self):
        routed = route(np.zeros((10, 30), dtype=np.uint8))
        x = concat_dem(routed)
        assert x.shape == (2, 32, 100)
        u = np.arange(100) / 99.0
        np.testing.assert_allclose(x.data[1, 0], np.sin(0.5 * u * np.pi), atol=1e-12)
        np.testing.assert_array_equal(x.data[0], np.full((32, 100), -0.5))

    def test_baseline_uses_raw_pixels(self):
        routed = route(np.full((10, 30), 128, dtype=np.uint8))
        assert routed.pixels.shape == (1, 32, 100)

    def test_vertical_channel(self):
        routed = route(np.zeros((30, 10), dtype=np.uint8))
        x = concat_dem(routed)
        assert x.data[1, 0, 0] == pytest.approx(1.0, abs=1e-12)
        assert x.data[1, 0, -1] == pytest.approx(0.0, abs=1e-12)
