import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from maginet import tensor as T
from maginet.gradcheck import grad_check
from maginet.params import ParamStore

from oracles import avg_pool2_loops, bilinear_loops, conv2d_loops, pool_stats_loops, replicate_pad_loops


def rand(rng, *shape):
    return rng.uniform(-1, 1, size=shape).astype(np.float32)


# -- conv2d -------------------------------------------------------------------


def test_conv_box_sum_center_and_corner():
    out = T.conv2d(T.ones((1, 1, 3, 3)), T.ones((1, 1, 3, 3)), pad=1).data
    assert out[0, 0, 1, 1] == 9.0
    assert out[0, 0, 0, 0] == 4.0


def test_conv_identity_kernel():
    rng = np.random.default_rng(0)
    x = rand(rng, 2, 3, 7, 6)
    w = np.zeros((3, 3, 3, 3), np.float32)
    for c in range(3):
        w[c, c, 1, 1] = 1
    np.testing.assert_array_equal(T.conv2d(T.Tensor(x), T.Tensor(w), pad=1).data, x)


def test_conv_stride2_matches_loops():
    rng = np.random.default_rng(1)
    x, w, b = rand(rng, 2, 3, 8, 8), rand(rng, 4, 3, 3, 3), rand(rng, 4)
    got = T.conv2d(T.Tensor(x), T.Tensor(w), T.Tensor(b), stride=2, pad=1).data
    assert got.shape == (2, 4, 4, 4)
    np.testing.assert_allclose(got, conv2d_loops(x, w, b, 2, 1), atol=1e-5)


@settings(max_examples=25, deadline=None)
@given(
    st.integers(1, 2), st.integers(1, 3), st.integers(1, 3), st.integers(3, 9), st.sampled_from([1, 3, 5]),
    st.integers(1, 2), st.integers(0, 2), st.integers(0, 10_000),
)
def test_conv_random_shapes_match_loops(n, c, o, h, k, stride, pad, seed):
    if h + 2 * pad < k:
        return
    rng = np.random.default_rng(seed)
    x, w = rand(rng, n, c, h, h), rand(rng, o, c, k, k)
    got = T.conv2d(T.Tensor(x), T.Tensor(w), stride=stride, pad=pad).data
    np.testing.assert_allclose(got, conv2d_loops(x, w, None, stride, pad), atol=1e-5)


def test_conv_shape_errors():
    with pytest.raises(T.ShapeError):
        T.conv2d(T.ones((1, 2, 4, 4)), T.ones((1, 3, 3, 3)))
    with pytest.raises(T.ShapeError):
        T.conv2d(T.ones((1, 1, 2, 2)), T.ones((1, 1, 5, 5)))


def test_conv_rejects_non_finite_input():
    x = np.ones((1, 1, 4, 4), np.float32)
    x[0, 0, 1, 1] = np.nan
    with pytest.raises(T.NonFiniteError):
        T.conv2d(T.Tensor(x), T.ones((1, 1, 3, 3)), pad=1)


def test_conv_gradients():
    rng = np.random.default_rng(2)
    p = ParamStore()
    p.add("x", rand(rng, 1, 2, 5, 5))
    p.add("w", rand(rng, 3, 2, 3, 3))
    p.add("b", rand(rng, 3))
    rep = grad_check(lambda q: T.tsum(T.square(T.conv2d(q["x"], q["w"], q["b"], stride=2, pad=1))), p)
    assert rep.passed, rep.lines()


# -- resize / pooling ------------------------------------------------------------


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 7), st.integers(1, 7), st.integers(1, 12), st.integers(1, 12), st.integers(0, 10_000))
def test_bilinear_matches_loops(h, w, oh, ow, seed):
    x = rand(np.random.default_rng(seed), 1, 2, h, w)
    np.testing.assert_allclose(T.bilinear_resize(T.Tensor(x), oh, ow).data, bilinear_loops(x, oh, ow), atol=1e-5)


def test_bilinear_constant_preserved():
    x = np.full((1, 3, 5, 4), 0.37, np.float32)
    np.testing.assert_allclose(T.bilinear_resize(T.Tensor(x), 11, 3).data, 0.37, atol=1e-6)


def test_bilinear_corners_preserved():
    x = np.array([[[[1, 2], [3, 4]]]], np.float32)
    up = T.bilinear_resize(T.Tensor(x), 4, 4).data[0, 0]
    assert (up[0, 0], up[0, 3], up[3, 0], up[3, 3]) == (1, 2, 3, 4)
    np.testing.assert_allclose(up, bilinear_loops(x, 4, 4)[0, 0], atol=1e-6)


def test_up_then_pool_is_three_tap_smoothing():
    # the pair is exact on constants; otherwise each axis sees a [1/8, 3/4, 1/8] blur
    rng = np.random.default_rng(3)
    x = rand(rng, 1, 1, 6, 6)
    back = T.avg_pool2(T.bilinear_resize(T.Tensor(x), 12, 12)).data
    xp = replicate_pad_loops(x.astype(np.float64), 1)
    k = np.array([0.125, 0.75, 0.125])
    rows = sum(k[i] * xp[:, :, i : i + 6, :] for i in range(3))
    want = sum(k[j] * rows[:, :, :, j : j + 6] for j in range(3))
    np.testing.assert_allclose(back, want, atol=1e-6)
    c = np.full((1, 2, 4, 4), 0.5, np.float32)
    np.testing.assert_allclose(T.avg_pool2(T.bilinear_resize(T.Tensor(c), 8, 8)).data, c, atol=1e-6)


def test_resize_zero_target_rejected():
    with pytest.raises(T.ShapeError):
        T.bilinear_resize(T.ones((1, 1, 2, 2)), 0, 3)


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 3), st.integers(1, 4), st.integers(1, 8), st.integers(0, 10_000))
def test_avg_pool_matches_loops(n, c, half, seed):
    x = rand(np.random.default_rng(seed), n, c, 2 * half, 2 * half)
    np.testing.assert_allclose(T.avg_pool2(T.Tensor(x)).data, avg_pool2_loops(x), atol=1e-6)


def test_pad_replicate_matches_loops():
    x = rand(np.random.default_rng(4), 2, 2, 4, 5)
    np.testing.assert_allclose(T.pad_replicate(T.Tensor(x), 2).data, replicate_pad_loops(x, 2), atol=0)


@pytest.mark.parametrize("kind", ["global_avg", "channel_avg", "channel_max"])
def test_pool_stats_constant(kind):
    out = T.pool_stats(T.Tensor(np.full((2, 3, 4, 4), 1.5, np.float32)), kind).data
    np.testing.assert_allclose(out, 1.5)


def test_pool_stats_two_channels():
    x = np.stack([np.ones((4, 4)), 3 * np.ones((4, 4))])[None].astype(np.float32)
    np.testing.assert_allclose(T.pool_stats(T.Tensor(x), "channel_avg").data, 2.0)
    np.testing.assert_allclose(T.pool_stats(T.Tensor(x), "channel_max").data, 3.0)


@pytest.mark.parametrize("kind", ["global_avg", "channel_avg", "channel_max"])
def test_pool_stats_matches_loops(kind):
    x = rand(np.random.default_rng(5), 1, 4, 5, 5)
    np.testing.assert_allclose(T.pool_stats(T.Tensor(x), kind).data, pool_stats_loops(x, kind), atol=1e-6)


def test_channel_max_gradient_ties_go_to_first():
    x = T.Tensor(np.ones((1, 3, 2, 2), np.float32), requires_grad=True)
    T.backward(T.tsum(T.pool_stats(x, "channel_max")))
    assert (x.grad[0, 0] == 1).all() and (x.grad[0, 1:] == 0).all()


# -- elementwise / broadcasting ---------------------------------------------------


def test_sigmoid_zero():
    assert T.sigmoid(T.zeros((1,))).data[0] == 0.5


def test_mul_ones_identity():
    x = rand(np.random.default_rng(6), 2, 3)
    np.testing.assert_array_equal((T.Tensor(x) * T.ones((2, 3))).data, x)


def test_broadcast_mul_matches_loops():
    rng = np.random.default_rng(7)
    a, b = rand(rng, 1, 3, 1, 1), rand(rng, 1, 1, 4, 4)
    want = np.zeros((1, 3, 4, 4))
    for c in range(3):
        for i in range(4):
            for j in range(4):
                want[0, c, i, j] = float(a[0, c, 0, 0]) * float(b[0, 0, i, j])
    np.testing.assert_allclose(T.mul(T.Tensor(a), T.Tensor(b)).data, want, atol=1e-6)


def test_non_broadcastable_rejected():
    with pytest.raises(T.ShapeError):
        T.Tensor(np.ones((2, 3))) + T.Tensor(np.ones((4, 3)))


@settings(max_examples=50, deadline=None)
@given(st.floats(-1e4, 1e4, allow_nan=False))
def test_squashing_ranges_open(v):
    x = T.Tensor(np.array([v], np.float32))
    s, t = T.sigmoid(x).data[0], T.tanh(x).data[0]
    assert 0.0 < s < 1.0
    assert -1.0 < t < 1.0


def test_concat_channels():
    a, b = T.ones((1, 2, 3, 3)), T.zeros((1, 1, 3, 3))
    out = T.elementwise("concat_channels", a, b)
    assert out.shape == (1, 3, 3, 3)


def test_ops_deterministic():
    rng = np.random.default_rng(8)
    x, w = rand(rng, 2, 3, 9, 9), rand(rng, 4, 3, 3, 3)
    a = T.conv2d(T.Tensor(x), T.Tensor(w), pad=1)
    b = T.conv2d(T.Tensor(x), T.Tensor(w), pad=1)
    assert a.data.tobytes() == b.data.tobytes()


@pytest.mark.parametrize(
    "fn",
    [
        lambda p: T.tsum(T.relu(p["a"]) * p["b"]),
        lambda p: T.tsum(T.leaky_relu(p["a"] - p["b"], 0.2)),
        lambda p: T.tsum(T.tanh(p["a"]) / (T.sigmoid(p["b"]) + 0.5)),
        lambda p: T.mean(T.abs_(p["a"] - p["b"]) + T.square(p["a"])),
        lambda p: T.tsum(T.clamp(p["a"] * 2.0, -0.5, 0.5)),
        lambda p: T.tsum(T.bilinear_resize(p["a"], 7, 5) * T.bilinear_resize(p["b"], 7, 5)),
        lambda p: T.tsum(T.square(T.avg_pool2(p["a"] * p["b"]))),
        lambda p: T.tsum(T.square(T.pad_replicate(p["a"], 2))),
        lambda p: T.tsum(T.pool_stats(p["a"], "channel_max") * T.pool_stats(p["b"], "channel_avg")),
        lambda p: T.tsum(T.square(T.pool_stats(p["a"], "global_avg"))),
        lambda p: T.tsum(T.concat([p["a"], p["b"]], axis=1) * 1.5),
        lambda p: T.tsum(p["a"][:, 1:, 1:3] * p["b"][:, :1, 2:4]),
        lambda p: T.tsum(T.square(p["a"].reshape(2, 16) @ p["b"].reshape(16, 2))),
    ],
)
def test_op_gradients_match_finite_differences(fn):
    rng = np.random.default_rng(9)
    p = ParamStore()
    p.add("a", rand(rng, 1, 2, 4, 4))
    p.add("b", rand(rng, 1, 2, 4, 4))
    rep = grad_check(fn, p)
    assert rep.passed, rep.lines()


# -- backward -------------------------------------------------------------------


def test_backward_sum_gives_ones():
    x = T.Tensor(np.zeros((2, 2), np.float32), requires_grad=True)
    T.backward(T.tsum(x))
    np.testing.assert_array_equal(x.grad, np.ones((2, 2)))


def test_backward_square_sum():
    x = T.Tensor(np.array([1.0, 2.0], np.float32), requires_grad=True)
    T.backward(T.tsum(x * x))
    np.testing.assert_array_equal(x.grad, [2.0, 4.0])


def test_backward_accumulates():
    x = T.Tensor(np.array([1.0, 2.0], np.float32), requires_grad=True)
    T.backward(T.tsum(x * 3.0))
    T.backward(T.tsum(x * 3.0))
    np.testing.assert_array_equal(x.grad, [6.0, 6.0])


def test_backward_requires_scalar():
    x = T.Tensor(np.ones(3, np.float32), requires_grad=True)
    with pytest.raises(T.ShapeError):
        T.backward(x * 2.0)


def test_no_grad_records_nothing():
    x = T.Tensor(np.ones(3, np.float32), requires_grad=True)
    with T.no_grad():
        y = x * 2.0
    assert not y.requires_grad


def test_float32_default():
    assert (T.Tensor(np.ones(2)) * 2.0).data.dtype == np.float32
