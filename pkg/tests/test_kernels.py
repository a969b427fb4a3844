import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scnet import kernels

BACKENDS = kernels.backends()


def pixel_bilinear(img, r, c):
    """Per-pixel bilinear oracle with zero fill."""
    h, w = img.shape
    r0, c0 = math.floor(r), math.floor(c)
    fy, fx = r - r0, c - c0

    def at(i, j):
        return float(img[i, j]) if 0 <= i < h and 0 <= j < w else 0.0

    top = at(r0, c0) * (1 - fx) + at(r0, c0 + 1) * fx
    bot = at(r0 + 1, c0) * (1 - fx) + at(r0 + 1, c0 + 1) * fx
    return top * (1 - fy) + bot * fy


@pytest.fixture(params=sorted(BACKENDS))
def impl(request):
    return BACKENDS[request.param]


def test_active_backend_is_listed():
    assert kernels.BACKEND in BACKENDS


def test_compiled_backend_present():
    # the package is built with its extension in this repository
    assert "cython" in BACKENDS


class TestWarp:
    def test_matches_pixel_oracle(self, impl, rng):
        img = rng.random((1, 7, 9, 1))
        rows = rng.uniform(-1.5, 8.5, (7, 9))
        cols = rng.uniform(-1.5, 10.5, (7, 9))
        out = impl.warp_bilinear(img, rows, cols)
        for i in range(7):
            for j in range(9):
                assert out[0, i, j, 0] == pytest.approx(pixel_bilinear(img[0, :, :, 0], rows[i, j], cols[i, j]),
                                                        abs=1e-12)

    def test_identity_coordinates(self, impl, rng):
        img = rng.random((3, 5, 5, 2)).astype(np.float32)
        r, c = np.mgrid[:5, :5].astype(np.float64)
        np.testing.assert_array_equal(impl.warp_bilinear(img, r, c), img)

    def test_preserves_dtype(self, impl, rng):
        for dt in (np.float32, np.float64):
            img = rng.random((2, 4, 4, 1)).astype(dt)
            r, c = np.mgrid[:4, :4].astype(np.float64)
            assert impl.warp_bilinear(img, r + 0.3, c).dtype == dt


class TestRasterize:
    def test_counts_normalized_by_peak(self, impl):
        xy = np.array([[[-0.99, 0.99], [-0.99, 0.99], [0.99, -0.99]]])
        out = impl.rasterize(xy, 4)
        assert out[0, 0, 0] == 1.0
        assert out[0, 3, 3] == 0.5
        assert out.sum() == 1.5

    def test_axis_conventions(self, impl):
        # +x goes right, +y goes up
        out = impl.rasterize(np.array([[[0.9, 0.9]]]), 8)
        assert out[0, 0, 7] == 1.0

    def test_clipping_at_edge(self, impl):
        out = impl.rasterize(np.array([[[1.0, -1.0]]]), 8)
        assert out[0, 7, 7] == 1.0


class TestIm2col:
    def test_adjoint_identity(self, impl, rng):
        x = rng.standard_normal((2, 3, 7, 6))
        for stride in (1, 2):
            cols = impl.im2col(x, 3, 2, stride)
            g = rng.standard_normal(cols.shape)
            lhs = float((cols * g).sum())
            rhs = float((x * impl.col2im(g, 3, 7, 6, 3, 2, stride)).sum())
            assert lhs == pytest.approx(rhs, rel=1e-10)

    def test_patch_layout(self, impl):
        x = np.arange(2 * 4 * 4, dtype=np.float64).reshape(1, 2, 4, 4)
        cols = impl.im2col(x, 2, 2, 2)
        np.testing.assert_array_equal(cols[0, 1], [2, 3, 6, 7, 18, 19, 22, 23])


@pytest.mark.skipif(len(BACKENDS) < 2, reason="compiled backend not built")
class TestParity:
    def test_warp_bit_identical(self, rng):
        img = rng.random((5, 16, 16, 3)).astype(np.float32)
        rows = rng.uniform(-2, 18, (16, 16))
        cols = rng.uniform(-2, 18, (16, 16))
        np.testing.assert_array_equal(BACKENDS["python"].warp_bilinear(img, rows, cols),
                                      BACKENDS["cython"].warp_bilinear(img, rows, cols))

    def test_rasterize_bit_identical(self, rng):
        xy = rng.uniform(-1.2, 1.2, (3, 500, 2))
        np.testing.assert_array_equal(BACKENDS["python"].rasterize(xy, 32),
                                      BACKENDS["cython"].rasterize(xy, 32))

    @settings(max_examples=25, deadline=None)
    @given(st.integers(1, 3), st.integers(1, 3), st.integers(1, 4), st.integers(1, 2),
           st.integers(5, 9), st.integers(0, 10 ** 6))
    def test_im2col_col2im(self, c, kh, kw, stride, size, seed):
        x = np.random.default_rng(seed).standard_normal((2, c, size, size + 1)).astype(np.float32)
        a = BACKENDS["python"].im2col(x, kh, kw, stride)
        np.testing.assert_array_equal(a, BACKENDS["cython"].im2col(x, kh, kw, stride))
        np.testing.assert_allclose(BACKENDS["python"].col2im(a, c, size, size + 1, kh, kw, stride),
                                   BACKENDS["cython"].col2im(a, c, size, size + 1, kh, kw, stride),
                                   rtol=1e-6, atol=1e-6)
