import importlib

import numpy as np
import pytest

from bevrope import kernels
from bevrope.kernels import pure

try:
    core = importlib.import_module("bevrope.kernels._core")
except ImportError:
    core = None

needs_core = pytest.mark.skipif(core is None, reason="compiled core not built")


def test_backend_selected():
    assert kernels.BACKEND in ("pure", "compiled")
    for name in kernels.KERNELS:
        assert callable(getattr(kernels, name))


@needs_core
class TestBackendEquivalence:
    """Compiled kernels agree with the numpy reference to float precision."""

    gen = np.random.default_rng(100)

    def test_softmax(self):
        for shape in ((1, 1), (7, 5), (64, 256)):
            x = self.gen.standard_normal(shape) * 50
            a, b = core.softmax_rows(x), pure.softmax_rows(x)
            assert np.allclose(a, b, rtol=1e-13, atol=1e-15)

    def test_softmax_grad(self):
        x = self.gen.standard_normal((6, 9))
        g = self.gen.standard_normal((6, 9))
        p = pure.softmax_rows(x)
        assert np.allclose(core.softmax_rows_grad(p, g),
                           pure.softmax_rows_grad(p, g), rtol=1e-13, atol=1e-15)

    def test_layer_norm(self):
        x = self.gen.standard_normal((11, 16))
        gain = self.gen.standard_normal(16)
        bias = self.gen.standard_normal(16)
        ya, xa, ia = core.layer_norm(x, gain, bias, 1e-5)
        yb, xb, ib = pure.layer_norm(x, gain, bias, 1e-5)
        assert np.allclose(ya, yb, rtol=1e-12, atol=1e-13)
        assert np.allclose(xa, xb, rtol=1e-12, atol=1e-13)
        assert np.allclose(ia, ib, rtol=1e-12, atol=1e-13)

    def test_layer_norm_grad(self):
        x = self.gen.standard_normal((11, 16))
        gain = self.gen.standard_normal(16)
        g = self.gen.standard_normal((11, 16))
        _, xhat, inv = pure.layer_norm(x, gain, np.zeros(16), 1e-5)
        for got, want in zip(core.layer_norm_grad(xhat, inv, gain, g),
                             pure.layer_norm_grad(xhat, inv, gain, g)):
            assert np.allclose(got, want, rtol=1e-12, atol=1e-13)

    def test_rotate_pairs(self):
        x = self.gen.standard_normal((9, 12))
        theta = self.gen.uniform(-8, 8, (9, 6))
        c, s = np.cos(theta), np.sin(theta)
        assert np.allclose(core.rotate_pairs(x, c, s),
                           pure.rotate_pairs(x, c, s), rtol=1e-14, atol=1e-15)
        g = self.gen.standard_normal((9, 12))
        assert np.allclose(core.rotate_pairs_grad(c, s, g),
                           pure.rotate_pairs_grad(c, s, g),
                           rtol=1e-14, atol=1e-15)

    def test_gelu(self):
        x = self.gen.standard_normal((8, 20)) * 3
        g = self.gen.standard_normal((8, 20))
        assert np.allclose(core.gelu(x), pure.gelu(x), rtol=1e-13, atol=1e-15)
        assert np.allclose(core.gelu_grad(x, g), pure.gelu_grad(x, g),
                           rtol=1e-13, atol=1e-15)

    def test_sigmoid(self):
        x = self.gen.standard_normal((5, 7)) * 20
        g = self.gen.standard_normal((5, 7))
        ya, yb = core.sigmoid(x), pure.sigmoid(x)
        assert np.allclose(ya, yb, rtol=1e-14, atol=1e-16)
        assert np.allclose(core.sigmoid_grad(ya, g), pure.sigmoid_grad(yb, g),
                           rtol=1e-13, atol=1e-16)

    def test_raster_gauss(self):
        cells = self.gen.uniform(-50, 50, (40, 2))
        objs = self.gen.uniform(-25, 25, (5, 2))
        assert np.allclose(core.raster_gauss(cells, objs, 6.25),
                           pure.raster_gauss(cells, objs, 6.25),
                           rtol=1e-13, atol=1e-16)
        empty = np.zeros((0, 2))
        assert np.array_equal(core.raster_gauss(cells, empty, 6.25),
                              pure.raster_gauss(cells, empty, 6.25))


def test_softmax_stability_large_logits():
    x = np.array([[1000.0, 0.0, -1000.0]])
    for mod in filter(None, (core, pure)):
        out = mod.softmax_rows(x)
        assert np.isfinite(out).all()
        assert abs(out.sum() - 1.0) < 1e-12


def test_gelu_matches_reference_values():
    # gelu(0) = 0, gelu(large) ~ identity, gelu(-large) ~ 0
    x = np.array([[0.0, 10.0, -10.0]])
    out = pure.gelu(x)
    assert out[0, 0] == 0.0
    assert abs(out[0, 1] - 10.0) < 1e-6
    assert abs(out[0, 2]) < 1e-6
