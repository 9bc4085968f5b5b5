"""Raster invariants: ink mapping, geometry, determinism, monotonicity."""

import numpy as np
import pytest

from strokeforge.data import StrokeSequence, polylines_to_stroke5
from strokeforge.raster import (
    RASTER_SIZE,
    bounding_box,
    normalize_rgb,
    render,
    rgb_to_ink,
)


def _seq(points):
    return StrokeSequence(np.asarray(points, dtype=np.float32))


class TestInkMapping:
    def test_black_maps_to_one(self):
        assert normalize_rgb(0, 0, 0) == (1.0, 1.0, 1.0)

    def test_white_maps_to_zero(self):
        assert normalize_rgb(255, 255, 255) == (0.0, 0.0, 0.0)

    def test_mid_gray(self):
        value = normalize_rgb(127, 127, 127)[0]
        assert value == pytest.approx(0.5019608, abs=1e-6)

    def test_all_gray_levels_bit_exact(self):
        for v in range(256):
            expected = 1.0 - v / 255.0
            assert normalize_rgb(v, v, v) == (expected, expected, expected)
            assert rgb_to_ink(v, v, v) == pytest.approx(expected, abs=1e-15)

    def test_channel_mean(self):
        assert rgb_to_ink(0, 255, 255) == pytest.approx(1.0 / 3.0)

    def test_out_of_range_rejected(self):
        with pytest.raises(ValueError, match="g=256"):
            normalize_rgb(0, 256, 0)
        with pytest.raises(ValueError, match="r=-1"):
            normalize_rgb(-1, 0, 0)


class TestRenderGeometry:
    def test_single_point_single_center_pixel(self):
        image = render(_seq([[0, 0, 0, 0, 1]]))
        assert image.shape == (RASTER_SIZE, RASTER_SIZE)
        assert image.sum() == 1.0
        ys, xs = np.nonzero(image)
        assert (xs[0], ys[0]) == (64, 64)

    def test_horizontal_segment_single_row(self):
        image = render(_seq([[10, 0, 0, 0, 1]]))
        rows = (image.sum(axis=1) > 0).sum()
        assert rows == 1
        assert image.sum() > 100  # spans the fitted viewport

    def test_disjoint_strokes_leave_a_gap(self):
        # two horizontal dashes with a pen-up jump between them
        pts = polylines_to_stroke5([[[0, 10], [0, 0]], [[30, 40], [0, 0]]])
        image = render(_seq(pts))
        row = image[64]
        lit = np.nonzero(row)[0]
        # ink at both dashes but a hole between x=10 and x=30 regions
        runs = np.split(lit, np.where(np.diff(lit) > 1)[0] + 1)
        assert len(runs) == 2

    def test_values_are_zero_or_one(self):
        rng = np.random.default_rng(0)
        pts = np.zeros((12, 5), dtype=np.float32)
        pts[:, :2] = rng.integers(-9, 9, (12, 2))
        pts[:, 2] = 1
        pts[-1, 2:5] = (0, 0, 1)
        image = render(_seq(pts))
        assert set(np.unique(image)) <= {0.0, 1.0}

    def test_nonempty_sequence_has_ink(self):
        rng = np.random.default_rng(1)
        for _ in range(10):
            n = int(rng.integers(1, 15))
            pts = np.zeros((n, 5), dtype=np.float32)
            pts[:, :2] = rng.standard_normal((n, 2))
            pts[:, 2] = 1
            pts[-1, 2:5] = (0, 0, 1)
            assert render(_seq(pts), offset_scale=3.0).sum() > 0

    def test_margin_respected(self):
        pts = _seq([[100, 100, 1, 0, 0], [-200, -200, 0, 0, 1]])
        image = render(pts)
        assert image[:5, :].sum() == 0 and image[-5:, :].sum() == 0
        assert image[:, :5].sum() == 0 and image[:, -5:].sum() == 0

    def test_deterministic(self):
        pts = np.zeros((6, 5), dtype=np.float32)
        pts[:, :2] = np.random.default_rng(2).standard_normal((6, 2))
        pts[:, 2] = 1
        pts[-1, 2:5] = (0, 0, 1)
        a = render(_seq(pts))
        b = render(_seq(pts))
        assert np.array_equal(a, b)


class TestTranslationInvariance:
    def test_translated_polylines_render_identically(self):
        base = [[[0, 10, 20], [0, 15, 5]], [[40, 50], [0, 0]]]
        for tx, ty in ((37, -12), (500, 900), (-3, 0)):
            moved = [[[x + tx for x in xs], [y + ty for y in ys]] for xs, ys in base]
            a = render(_seq(polylines_to_stroke5(base)))
            b = render(_seq(polylines_to_stroke5(moved)))
            assert np.array_equal(a, b)

    def test_offset_scale_is_neutral_under_fit(self):
        pts = polylines_to_stroke5([[[0, 3, 9], [0, 7, 2]]])
        assert np.array_equal(render(_seq(pts), 1.0), render(_seq(pts), 25.0))


class TestPrefixMonotonicity:
    def test_prefix_pixels_subset_of_full(self):
        rng = np.random.default_rng(3)
        for _ in range(8):
            n = int(rng.integers(4, 16))
            pts = np.zeros((n, 5), dtype=np.float32)
            pts[:, :2] = rng.integers(-20, 20, (n, 2))
            pts[:, 2] = (rng.random(n) > 0.2).astype(np.float32)
            pts[:, 3] = 1 - pts[:, 2]
            pts[-1, 2:5] = (0, 0, 1)
            seq = _seq(pts)
            box = bounding_box(seq)
            full = render(seq, viewport=box)
            for cut in range(1, n):
                prefix = render(_seq(pts[:cut]), viewport=box)
                assert np.all(full[prefix == 1.0] == 1.0)
