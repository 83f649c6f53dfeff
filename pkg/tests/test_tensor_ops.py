import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rgbp import tensor_ops as T
from rgbp.errors import ShapeError
from rgbp.gradcases import CASES, PRIMITIVES
from rgbp.gradcheck import GradCase, grad_check


def test_identity_1x1_conv(rng):
    x = rng.standard_normal((2, 3, 5, 4))
    p = T.ConvParams(np.eye(3).reshape(3, 3, 1, 1), np.zeros(3))
    assert np.array_equal(T.conv2d(x, p), x)


def test_box_filter_border():
    c = 2.5
    x = np.full((1, 1, 5, 5), c)
    y = T.conv2d(x, T.ConvParams(np.full((1, 1, 3, 3), 1 / 9), padding=1))
    assert y[0, 0, 2, 2] == pytest.approx(c)
    # zero padding leaves 4 of the 9 taps inside at a corner
    assert y[0, 0, 0, 0] == pytest.approx(4 / 9 * c)
    assert y[0, 0, 0, 2] == pytest.approx(6 / 9 * c)


def test_conv_matches_direct_loop(rng):
    x = rng.standard_normal((1, 2, 6, 5))
    w = rng.standard_normal((3, 2, 3, 3))
    b = rng.standard_normal(3)
    y = T.conv2d(x, T.ConvParams(w, b, stride=2, padding=1))
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    ref = np.zeros((1, 3, 3, 3))
    for o in range(3):
        for i in range(3):
            for j in range(3):
                ref[0, o, i, j] = np.sum(xp[0, :, 2 * i : 2 * i + 3, 2 * j : 2 * j + 3] * w[o]) + b[o]
    assert np.allclose(y, ref)


def test_transposed_conv_scatter(rng):
    x = rng.standard_normal((1, 2, 3, 3))
    w = rng.standard_normal((4, 2, 2, 2))
    y = T.conv2d(x, T.ConvParams(w, stride=2, transposed=True))
    assert y.shape == (1, 4, 6, 6)
    ref = np.zeros((1, 4, 6, 6))
    for i in range(3):
        for j in range(3):
            ref[0, :, 2 * i : 2 * i + 2, 2 * j : 2 * j + 2] += np.einsum("c,ocuv->ouv", x[0, :, i, j], w)
    assert np.allclose(y, ref)


def test_conv_shape_errors():
    with pytest.raises(ShapeError):
        T.conv2d(np.zeros((1, 2, 5, 5)), T.ConvParams(np.zeros((1, 3, 3, 3))))
    # 6 with k=3, s=2, p=0 would drop the last column
    with pytest.raises(ShapeError):
        T.conv2d(np.zeros((1, 1, 6, 6)), T.ConvParams(np.zeros((1, 1, 3, 3)), stride=2))
    with pytest.raises(ShapeError):
        T.conv2d(np.zeros((1, 1, 2, 2)), T.ConvParams(np.zeros((1, 1, 3, 3))))
    with pytest.raises(ShapeError):
        T.ConvParams(np.zeros((1, 1, 3, 2)))
    with pytest.raises(ShapeError):
        T.conv2d(np.zeros((1, 5, 5)), T.ConvParams(np.zeros((1, 1, 3, 3))))


def test_even_input_halves_with_padding():
    y = T.conv2d(np.zeros((1, 1, 64, 64)), T.ConvParams(np.zeros((1, 1, 3, 3)), stride=2, padding=1))
    assert y.shape == (1, 1, 32, 32)


def test_batch_norm_modes(rng):
    x = rng.standard_normal((4, 3, 5, 5)) * 3 + 2
    p = T.BatchNormParams.identity(3, eps=1e-12)
    assert np.allclose(T.batch_norm(x, p), x, atol=1e-6)
    p.mode = "batch"
    y = T.batch_norm(x, p)
    assert np.allclose(y.mean(axis=(0, 2, 3)), 0, atol=1e-10)
    assert np.allclose(y.var(axis=(0, 2, 3)), 1, atol=1e-6)


def test_activations():
    assert T.silu(np.array(0.0)) == 0.0
    assert T.sigmoid(np.array(0.0)) == 0.5
    assert float(T.silu(np.array(1.0))) == pytest.approx(1 / (1 + math.exp(-1)), abs=1e-12)
    assert float(T.silu(np.array(1.0))) == pytest.approx(0.731059, abs=1e-6)
    big = T.sigmoid(np.array([-800.0, 800.0]))
    assert np.all(np.isfinite(big)) and big[0] == 0.0 and big[1] == 1.0


@settings(max_examples=50, deadline=None)
@given(st.floats(-50, 50), st.floats(-50, 50))
def test_softmax_pair_law(a, b):
    al, be = T.softmax_pair(np.array([a]), np.array([b]))
    assert abs(al[0] + be[0] - 1) < 1e-12
    assert 0 <= al[0] <= 1


def test_softmax_pair_symmetric(rng):
    x = rng.standard_normal((2, 3, 1, 1))
    al, be = T.softmax_pair(x, x)
    assert np.all(al == 0.5) and np.all(be == 0.5)


@pytest.mark.parametrize("k,s,p", [(3, 1, 1), (3, 2, 1), (5, 1, 2), (2, 2, 0)])
def test_pools_on_constant(k, s, p):
    x = np.full((1, 2, 8, 8), 0.7)
    assert np.allclose(T.max_pool(x, k, s, p), 0.7)
    assert np.allclose(T.avg_pool(x, k, s, p), 0.7)


def test_channel_and_global_pools():
    x = np.array([1.0, 3.0, 2.0]).reshape(1, 3, 1, 1)
    assert T.channel_max(x).shape == (1, 1, 1, 1) and T.channel_max(x).item() == 3.0
    assert T.channel_avg(x).item() == 2.0
    y = np.arange(8.0).reshape(1, 2, 2, 2)
    assert np.array_equal(T.global_max(y).ravel(), [3.0, 7.0])
    assert np.array_equal(T.global_avg(y).ravel(), [1.5, 5.5])


def test_max_pool_tie_goes_to_first():
    x = np.ones((1, 1, 2, 2))
    g = T.max_pool_backward(x, 2, 2, 0, np.ones((1, 1, 1, 1)))
    assert np.array_equal(g[0, 0], [[1, 0], [0, 0]])


def test_fully_connected():
    x = np.array([[2.0, 3.0]])
    assert np.array_equal(T.fully_connected(x, T.LinearParams(np.eye(2), np.zeros(2))), x)
    y = T.fully_connected(x, T.LinearParams(np.array([[1.0, 1.0], [1.0, -1.0]]), np.zeros(2)))
    assert np.array_equal(y, [[5.0, -1.0]])


def test_scharr():
    assert np.all(T.scharr_edge(np.full((1, 1, 6, 6), 3.0)) == 0)
    x = np.zeros((1, 1, 7, 8))
    x[..., 4:] = 1.0
    e = T.scharr_edge(x)
    assert e[0, 0, 3, 3] == pytest.approx((3 + 10 + 3) / 16)
    assert e[0, 0, 3, 4] == pytest.approx(1.0)
    assert np.all(e[..., :2] == 0) and np.all(e[..., 6:] == 0)
    assert np.all(e.max(axis=3) == e[..., 3])


def test_structure_helpers(rng):
    a, b = rng.standard_normal((2, 3, 4, 4)), rng.standard_normal((2, 5, 4, 4))
    sa, sb = T.split_channels(T.concat_channels([a, b]), [3, 5])
    assert np.array_equal(sa, a) and np.array_equal(sb, b)
    with pytest.raises(ShapeError):
        T.concat_channels([a, np.zeros((2, 1, 3, 4))])
    m = rng.standard_normal((2, 1, 4, 4))
    assert np.array_equal(T.mul(m, b), m * b)
    c = rng.standard_normal((2, 5, 1, 1))
    assert np.array_equal(T.mul(c, b), c * b)
    with pytest.raises(ShapeError):
        T.mul(np.zeros((1, 2, 4, 4)), np.zeros((2, 2, 4, 4)))


def test_conv_block_defaults():
    blk = T.conv_block(np.zeros((4, 2, 3, 3)))
    assert blk.conv.padding == 1 and blk.conv.bias is None and blk.bn is not None
    up = T.conv_block(np.zeros((4, 2, 2, 2)), stride=2, transposed=True)
    assert up.conv.padding == 0


@pytest.mark.parametrize("name", PRIMITIVES)
def test_primitive_gradients(name):
    rep = grad_check(CASES[name](42), seed=42)
    assert rep.passed, rep.line()


def test_gradcheck_catches_wrong_backward():
    case = CASES["conv2d"](42)
    good = case.backward

    def bad(cots):
        g = dict(good(cots))
        g["weight"] = 2 * g["weight"]
        return g

    rep = grad_check(GradCase("conv2d_bad", case.arrays, case.forward, bad), seed=42)
    assert not rep.passed and rep.worst == "weight"


def test_gradcheck_silu_seed0():
    assert grad_check(CASES["silu"](0), seed=0).passed
