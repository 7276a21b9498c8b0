"""Tensor arithmetic, the gradient tape, and the finite-difference checker."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from invrescale import autodiff as ad
from invrescale.errors import ShapeError


def conv3x3_loops(x, k, b):
    """Six-nested-loop reference convolution: zero pad 1, stride 1."""
    c, h, w = x.shape
    o = k.shape[0]
    out = np.zeros((o, h, w))
    for oc in range(o):
        for i in range(h):
            for j in range(w):
                acc = b[oc]
                for ic in range(c):
                    for di in range(3):
                        for dj in range(3):
                            ii, jj = i + di - 1, j + dj - 1
                            if 0 <= ii < h and 0 <= jj < w:
                                acc += k[oc, ic, di, dj] * x[ic, ii, jj]
                out[oc, i, j] = acc
    return out


class TestConv2d:
    def test_identity_kernel(self):
        x = ad.Tensor(np.array([[[5.0]]]))
        k = np.zeros((1, 1, 3, 3))
        k[0, 0, 1, 1] = 1.0
        out = ad.conv2d(x, ad.Tensor(k), ad.Tensor(np.zeros(1)))
        assert out.data == pytest.approx(np.array([[[5.0]]]))

    def test_padding_arithmetic(self):
        # All-ones kernel over a constant image counts the live taps:
        # 9 in the interior, 4 at corners.
        c = 3.7
        x = np.full((1, 4, 4), c)
        out = ad.conv2d(ad.Tensor(x), ad.Tensor(np.ones((1, 1, 3, 3))), ad.Tensor(np.zeros(1))).data
        assert out[0, 1, 1] == pytest.approx(9 * c)
        assert out[0, 0, 0] == pytest.approx(4 * c)
        assert out[0, 0, 3] == pytest.approx(4 * c)
        assert out[0, 1, 0] == pytest.approx(6 * c)

    def test_matches_loop_reference(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((2, 5, 5))
        k = rng.standard_normal((3, 2, 3, 3))
        b = rng.standard_normal(3)
        got = ad.conv2d(ad.Tensor(x), ad.Tensor(k), ad.Tensor(b)).data
        want = conv3x3_loops(x, k, b)
        np.testing.assert_allclose(got, want, atol=1e-12)

    def test_linearity(self):
        rng = np.random.default_rng(1)
        k = ad.Tensor(rng.standard_normal((2, 3, 3, 3)))
        zero_b = ad.Tensor(np.zeros(2))
        x = rng.standard_normal((3, 6, 6))
        y = rng.standard_normal((3, 6, 6))
        a, b = 1.7, -0.3
        lhs = ad.conv2d(ad.Tensor(a * x + b * y), k, zero_b).data
        rhs = a * ad.conv2d(ad.Tensor(x), k, zero_b).data + b * ad.conv2d(ad.Tensor(y), k, zero_b).data
        np.testing.assert_allclose(lhs, rhs, atol=1e-12)

    def test_channel_mismatch(self):
        with pytest.raises(ShapeError, match="channel"):
            ad.conv2d(ad.Tensor(np.zeros((2, 4, 4))), ad.Tensor(np.zeros((1, 3, 3, 3))), ad.Tensor(np.zeros(1)))

    def test_kernel_must_be_3x3(self):
        with pytest.raises(ShapeError):
            ad.conv2d(ad.Tensor(np.zeros((1, 4, 4))), ad.Tensor(np.zeros((1, 1, 5, 5))), ad.Tensor(np.zeros(1)))


class TestLeakyRelu:
    def test_basic_values(self):
        out = ad.leaky_relu(ad.Tensor([-1.0, 0.0, 2.0]), 0.2)
        np.testing.assert_allclose(out.data, [-0.2, 0.0, 2.0])

    def test_identity_on_nonnegative(self):
        x = np.abs(np.random.default_rng(2).standard_normal(20))
        out = ad.leaky_relu(ad.Tensor(x), 0.2)
        np.testing.assert_array_equal(out.data, x)

    def test_gradient_on_negative_side(self):
        x = ad.parameter(np.array(-3.0))
        err = ad.fd_check(lambda: ad.leaky_relu(x, 0.2).sum(), [x])
        assert err < 1e-9
        assert x.grad == pytest.approx(0.2)

    def test_slope_validation(self):
        with pytest.raises(ValueError):
            ad.leaky_relu(ad.Tensor([1.0]), 1.5)


class TestPosScale:
    def test_zero_maps_to_one(self):
        assert ad.pos_scale(ad.Tensor(np.array(0.0))).item() == 1.0

    def test_saturation(self):
        assert ad.pos_scale(ad.Tensor(np.array(100.0))).item() == pytest.approx(10.0)
        assert ad.pos_scale(ad.Tensor(np.array(-100.0))).item() == pytest.approx(0.1)

    def test_closed_form(self):
        assert ad.pos_scale(ad.Tensor(np.array(-math.log(2.0)))).item() == pytest.approx(0.5, abs=1e-12)

    @given(arrays(np.float64, (17,), elements=st.floats(-1e6, 1e6)))
    @settings(max_examples=50, deadline=None)
    def test_range_bounds(self, x):
        out = ad.pos_scale(ad.Tensor(x)).data
        assert np.all(out >= 0.1) and np.all(out <= 10.0)


class TestBackward:
    def test_square(self):
        x = ad.parameter(np.array(3.0))
        (x * x).backward()
        assert x.grad == pytest.approx(6.0)

    def test_fanout_adjoints_sum(self):
        x = ad.parameter(np.array(2.0))
        y = x * x + x * 3.0  # dy/dx = 2x + 3 = 7
        y.backward()
        assert x.grad == pytest.approx(7.0)

    def test_non_scalar_root_rejected(self):
        x = ad.parameter(np.ones(3))
        with pytest.raises(ShapeError, match="scalar"):
            (x * 2.0).backward()

    def test_conv_gradients_match_fd(self):
        rng = np.random.default_rng(3)
        x = ad.parameter(rng.standard_normal((2, 4, 4)))
        k = ad.parameter(rng.standard_normal((2, 2, 3, 3)) * 0.5)
        b = ad.parameter(rng.standard_normal(2) * 0.1)
        err = ad.fd_check(lambda: ad.conv2d(x, k, b).sum(), [x, k, b])
        assert err < 1e-6

    def test_adjoint_shapes_match_values(self):
        rng = np.random.default_rng(4)
        x = ad.parameter(rng.standard_normal((3, 4, 4)))
        k = ad.parameter(rng.standard_normal((2, 3, 3, 3)))
        b = ad.parameter(np.zeros(2))
        out = ad.leaky_relu(ad.conv2d(x, k, b))
        out.sum().backward()
        for p in (x, k, b):
            assert p.grad.shape == p.data.shape

    def test_deterministic_evaluation(self):
        rng = np.random.default_rng(5)
        x = rng.standard_normal((3, 6, 6))
        k = rng.standard_normal((4, 3, 3, 3))
        b = rng.standard_normal(4)

        def run():
            out = ad.pos_scale(ad.conv2d(ad.Tensor(x), ad.Tensor(k), ad.Tensor(b)))
            return (out * out).mean().item()

        assert run() == run()


# Check every registered primitive against central differences on
# randomized shapes; inputs are kept away from the kink/clamp loci of
# the piecewise-linear ops.
_PRIMITIVES = [
    ("add", lambda a, b: (a + b).sum()),
    ("sub", lambda a, b: (a - b).sum()),
    ("mul", lambda a, b: (a * b).sum()),
    ("div", lambda a, b: (a / (b * b + 1.0)).sum()),
    ("neg", lambda a, b: (-a).mean()),
    ("abs", lambda a, b: (a + 3.0).abs().sum()),
    ("mean", lambda a, b: (a * b).mean()),
    ("leaky_relu", lambda a, b: ad.leaky_relu(a + 2.0, 0.2).sum()),
    ("pos_scale", lambda a, b: ad.pos_scale(a * 0.5).sum()),
    ("narrow", lambda a, b: ad.narrow_channels(a, 1, 2).sum()),
    ("concat", lambda a, b: ad.concat_channels([a, b]).mean()),
]


@pytest.mark.parametrize("name,fn", _PRIMITIVES, ids=[n for n, _ in _PRIMITIVES])
def test_primitive_gradients(name, fn):
    rng = np.random.default_rng(hash(name) % 2**32)
    shape = (4, rng.integers(2, 9), rng.integers(2, 9))
    a = ad.parameter(rng.uniform(0.1, 1.0, shape))
    b = ad.parameter(rng.uniform(0.1, 1.0, shape))
    err = ad.fd_check(lambda: fn(a, b), [a, b])
    assert err < 1e-4


class TestFdCheck:
    def test_quadratic_form(self):
        # Central differences are exact for quadratics up to roundoff.
        rng = np.random.default_rng(6)
        d = rng.uniform(0.5, 2.0, 5)
        y = ad.parameter(rng.standard_normal(5))
        err = ad.fd_check(lambda: ((y * y) * ad.Tensor(d)).sum(), [y])
        assert err < 1e-9

    def test_zero_function(self):
        x = ad.parameter(np.ones(3))
        err = ad.fd_check(lambda: (x * 0.0).sum(), [x])
        assert err == 0.0

    def test_step_bounds(self):
        x = ad.parameter(np.ones(2))
        with pytest.raises(ValueError):
            ad.fd_check(lambda: x.sum(), [x], step=1e-8)

    def test_nonfinite_diagnostic_names_parameter(self):
        # Finite at the base point, but perturbing element 1 downward by
        # the step lands exactly on zero and the division blows up.
        step = 1e-5
        x = ad.parameter(np.array([1.0, step]))

        def f():
            return (ad.Tensor([1.0, 1.0]) / x).sum()

        with pytest.raises(ArithmeticError, match="parameter 0, element 1"):
            ad.fd_check(f, [x], step=step)


class TestShapeContracts:
    def test_elementwise_mismatch(self):
        with pytest.raises(ShapeError):
            ad.Tensor(np.ones(3)) + ad.Tensor(np.ones(4))

    def test_narrow_out_of_range(self):
        with pytest.raises(ShapeError):
            ad.narrow_channels(ad.Tensor(np.ones((2, 3, 3))), 1, 5)

    def test_concat_spatial_mismatch(self):
        with pytest.raises(ShapeError):
            ad.concat_channels([ad.Tensor(np.ones((1, 2, 2))), ad.Tensor(np.ones((1, 3, 3)))])

    def test_tensor_is_row_major_float64(self):
        t = ad.Tensor(np.asfortranarray(np.ones((3, 4))))
        assert t.data.flags["C_CONTIGUOUS"]
        assert t.data.dtype == np.float64
