import numpy as np
import pytest
from hypothesis import given, settings, strategies as hst

from hygroflow.grids import (FlowField, area_resample, bilinear_sample,
                             divergence, downsample_mask_strict,
                             gradient_forward, warp_bilinear)


def gradient_oracle(g):
    """Index-by-index forward differences with replicated boundary."""
    h, w = g.shape
    gx = np.zeros_like(g)
    gy = np.zeros_like(g)
    for y in range(h):
        for x in range(w):
            gx[y, x] = g[y, x + 1] - g[y, x] if x + 1 < w else 0.0
            gy[y, x] = g[y + 1, x] - g[y, x] if y + 1 < h else 0.0
    return gx, gy


class TestGradientForward:
    def test_constant_grid_has_zero_gradient(self):
        gx, gy = gradient_forward(np.full((6, 7), 3.5))
        assert np.all(gx == 0) and np.all(gy == 0)

    def test_linear_ramp(self):
        xx = np.tile(np.arange(4.0), (4, 1))
        gx, gy = gradient_forward(xx)
        assert np.all(gx[:, :3] == 1.0)
        assert np.all(gx[:, 3] == 0.0)
        assert np.all(gy == 0.0)

    def test_matches_elementwise_oracle(self):
        g = np.random.default_rng(11).standard_normal((8, 8))
        gx, gy = gradient_forward(g)
        ox, oy = gradient_oracle(g)
        assert np.array_equal(gx, ox)
        assert np.array_equal(gy, oy)


class TestDivergence:
    def test_zero_fields(self):
        assert np.all(divergence(np.zeros((5, 5)), np.zeros((5, 5))) == 0)

    def test_adjoint_identity_random(self):
        rng = np.random.default_rng(5)
        a = rng.standard_normal((6, 6))
        px = rng.standard_normal((6, 6))
        py = rng.standard_normal((6, 6))
        gx, gy = gradient_forward(a)
        lhs = np.sum(gx * px + gy * py)
        rhs = -np.sum(a * divergence(px, py))
        assert abs(lhs - rhs) <= 1e-12 * max(1.0, abs(lhs))

    def test_constant_interior_divergence_zero(self):
        px = np.ones((7, 7))
        py = np.ones((7, 7))
        d = divergence(px, py)
        assert np.all(d[1:-1, 1:-1] == 0.0)

    @settings(max_examples=40, deadline=None)
    @given(hst.integers(2, 64), hst.integers(2, 64), hst.integers(0, 2 ** 31 - 1))
    def test_adjointness_property(self, h, w, seed):
        rng = np.random.default_rng(seed)
        a = rng.standard_normal((h, w))
        px = rng.standard_normal((h, w))
        py = rng.standard_normal((h, w))
        gx, gy = gradient_forward(a)
        lhs = np.sum(gx * px + gy * py)
        rhs = -np.sum(a * divergence(px, py))
        scale = max(1.0, abs(lhs), abs(rhs))
        assert abs(lhs + (-rhs) - 2 * lhs) / scale < 1e-10 or abs(lhs - rhs) / scale < 1e-10


class TestBilinearSample:
    def test_exact_at_integer_coordinates(self):
        g = np.random.default_rng(0).standard_normal((5, 6))
        for y in range(5):
            for x in range(6):
                assert bilinear_sample(g, float(x), float(y)) == g[y, x]

    def test_exact_on_linear_ramp_midpoints(self):
        xx = np.tile(np.arange(6.0), (5, 1))
        assert bilinear_sample(xx, 2.5, 1.0) == pytest.approx(2.5, abs=1e-12)
        assert bilinear_sample(xx, 3.25, 3.75) == pytest.approx(3.25, abs=1e-12)

    def test_out_of_range_clamps(self):
        g = np.arange(12.0).reshape(3, 4)
        assert bilinear_sample(g, -5.0, -5.0) == g[0, 0]
        assert bilinear_sample(g, 99.0, 99.0) == g[2, 3]

    def test_affine_field_reproduced_exactly(self):
        yy, xx = np.mgrid[0:9, 0:11].astype(float)
        g = 0.3 * xx - 1.7 * yy + 4.0
        rng = np.random.default_rng(2)
        xs = rng.uniform(0, 10, 50)
        ys = rng.uniform(0, 8, 50)
        vals = bilinear_sample(g, xs, ys)
        assert np.allclose(vals, 0.3 * xs - 1.7 * ys + 4.0, atol=1e-12)

    def test_preserves_finiteness(self):
        g = np.random.default_rng(1).standard_normal((4, 4)) * 1e6
        out = bilinear_sample(g, np.linspace(-3, 9, 15), np.linspace(-2, 8, 15))
        assert np.all(np.isfinite(out))


class TestWarp:
    def test_zero_flow_is_identity(self):
        g = np.random.default_rng(4).standard_normal((7, 7))
        out = warp_bilinear(g, FlowField.zeros((7, 7)))
        assert np.allclose(out, g, atol=1e-14)

    def test_integer_shift_matches_roll_interior(self):
        g = np.random.default_rng(9).standard_normal((10, 10))
        flow = FlowField(np.full((10, 10), 2.0), np.zeros((10, 10)))
        out = warp_bilinear(g, flow)
        assert np.allclose(out[:, :-2], g[:, 2:], atol=1e-14)


class TestAreaResample:
    def test_integer_factor_is_block_mean(self):
        g = np.arange(16.0).reshape(4, 4)
        out = area_resample(g, (2, 2))
        expect = np.array([[g[:2, :2].mean(), g[:2, 2:].mean()],
                           [g[2:, :2].mean(), g[2:, 2:].mean()]])
        assert np.allclose(out, expect, atol=1e-14)

    def test_identity_shape_returns_copy(self):
        g = np.random.default_rng(3).standard_normal((5, 5))
        out = area_resample(g, (5, 5))
        assert np.array_equal(out, g)
        assert out is not g

    def test_fractional_ratio_preserves_mean(self):
        g = np.random.default_rng(8).standard_normal((13, 11))
        out = area_resample(g, (7, 5))
        # box means weight every input pixel equally overall
        assert out.mean() == pytest.approx(g.mean(), abs=1e-10)

    def test_constant_stays_constant(self):
        out = area_resample(np.full((10, 9), 2.25), (7, 4))
        assert np.allclose(out, 2.25, atol=1e-12)


class TestMaskDownsample:
    def test_strict_and_all_true(self):
        m = np.ones((12, 12), dtype=bool)
        assert downsample_mask_strict(m, (5, 5)).all()

    def test_single_false_poisons_footprint(self):
        m = np.ones((8, 8), dtype=bool)
        m[3, 3] = False
        out = downsample_mask_strict(m, (4, 4))
        assert not out[1, 1]
        assert out.sum() == 15
