import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from scbnet import ops
from scbnet.errors import ConfigError, ShapeError
from scbnet.tensor import precision


def naive_conv(x, w, b):
    """Direct loop oracle: zero-pad by one, 3x3 cross-correlation, stride 1."""
    n, c, h, wd = x.shape
    f = w.shape[0]
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    out = np.zeros((n, f, h, wd))
    for i in range(n):
        for o in range(f):
            for r in range(h):
                for s in range(wd):
                    out[i, o, r, s] = np.sum(xp[i, :, r:r + 3, s:s + 3] * w[o]) + b[o]
    return out


def naive_maxpool(x):
    n, c, h, w = x.shape
    out = np.zeros((n, c, h // 2, w // 2))
    for i in range(h // 2):
        for j in range(w // 2):
            out[:, :, i, j] = x[:, :, 2 * i:2 * i + 2, 2 * j:2 * j + 2].max(axis=(2, 3))
    return out


# -- conv ------------------------------------------------------------------------


def test_conv_ones_kernel_counts_neighbours():
    x = np.ones((1, 1, 3, 3), dtype=np.float32)
    p = ops.ConvParams(np.ones((1, 1, 3, 3), dtype=np.float32), np.zeros(1, dtype=np.float32))
    np.testing.assert_array_equal(ops.conv2d(x, p)[0, 0], [[4, 6, 4], [6, 9, 6], [4, 6, 4]])


@settings(max_examples=25, deadline=None)
@given(
    n=st.integers(1, 2), c=st.integers(1, 3), f=st.integers(1, 3),
    h=st.integers(1, 6), w=st.integers(1, 6), seed=st.integers(0, 2**16),
)
def test_conv_matches_loop_oracle(n, c, f, h, w, seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, c, h, w))
    p = ops.ConvParams(rng.normal(size=(f, c, 3, 3)), rng.normal(size=f))
    np.testing.assert_allclose(ops.conv2d(x, p), naive_conv(x, p.weight, p.bias), atol=1e-10)


def test_conv_is_cross_correlation_not_convolution():
    x = np.zeros((1, 1, 3, 3))
    x[0, 0, 1, 1] = 1.0
    w = np.arange(9, dtype=float).reshape(1, 1, 3, 3)
    out = ops.conv2d(x, ops.ConvParams(w, np.zeros(1)))
    # an impulse reproduces the kernel flipped under cross-correlation
    np.testing.assert_array_equal(out[0, 0], w[0, 0, ::-1, ::-1])


def test_conv_channel_mismatch_names_both_shapes():
    p = ops.ConvParams(np.zeros((4, 3, 3, 3)), np.zeros(4))
    with pytest.raises(ShapeError, match=r"\(2, 2, 5, 5\).*\(4, 3, 3, 3\)"):
        ops.conv2d(np.zeros((2, 2, 5, 5)), p)


def test_conv_rejects_other_kernel_sizes():
    with pytest.raises(ConfigError):
        ops.conv2d(np.zeros((1, 1, 5, 5)), ops.ConvParams(np.zeros((1, 1, 5, 5)), np.zeros(1)))


def test_rank_check():
    p = ops.ConvParams(np.zeros((1, 1, 3, 3)), np.zeros(1))
    with pytest.raises(ShapeError):
        ops.conv2d(np.zeros((1, 3, 3)), p)


def test_he_init_statistics(rng):
    p = ops.ConvParams.he_init(64, 128, rng)
    assert p.weight.dtype == np.float32
    assert np.all(p.bias == 0)
    assert abs(p.weight.std() - math.sqrt(2 / (64 * 9))) < 0.01 * math.sqrt(2 / (64 * 9)) * 5


# -- batch norm ------------------------------------------------------------------


def test_batchnorm_train_normalizes_per_channel(rng):
    x = rng.normal(3.0, 2.5, size=(8, 3, 5, 5))
    p = ops.BatchNormParams.fresh(3, np.float64)
    p.gamma[:] = [1.0, 2.0, 0.5]
    p.beta[:] = [0.0, -1.0, 3.0]
    y = ops.batchnorm(x, p, "train")
    np.testing.assert_allclose(y.mean(axis=(0, 2, 3)), p.beta, atol=1e-10)
    np.testing.assert_allclose(y.std(axis=(0, 2, 3)), np.abs(p.gamma), rtol=1e-5)


def test_batchnorm_running_stats_update(rng):
    x = rng.normal(1.0, 2.0, size=(4, 2, 3, 3))
    p = ops.BatchNormParams.fresh(2, np.float64)
    ops.batchnorm(x, p, "train")
    np.testing.assert_allclose(p.running_mean, 0.1 * x.mean(axis=(0, 2, 3)))
    np.testing.assert_allclose(p.running_var, 0.9 + 0.1 * x.var(axis=(0, 2, 3)))


def test_batchnorm_infer_uses_running_stats_and_is_pure(rng):
    x = rng.normal(size=(2, 2, 3, 3))
    p = ops.BatchNormParams.fresh(2, np.float64)
    y = ops.batchnorm(x, p, "infer")
    np.testing.assert_allclose(y, x / math.sqrt(1 + ops.BN_EPSILON))
    np.testing.assert_array_equal(p.running_mean, 0)
    np.testing.assert_array_equal(p.running_var, 1)
    # per-sample independence: a batch of one gives the same row
    np.testing.assert_allclose(ops.batchnorm(x[:1], p, "infer"), y[:1])


def test_batchnorm_constant_channel_is_finite():
    x = np.full((3, 1, 2, 2), 7.0)
    y = ops.batchnorm(x, ops.BatchNormParams.fresh(1, np.float64), "train")
    assert np.all(np.isfinite(y)) and np.allclose(y, 0)


def test_batchnorm_train_needs_two_values():
    with pytest.raises(ShapeError):
        ops.batchnorm(np.zeros((1, 1, 1, 1)), ops.BatchNormParams.fresh(1), "train")


def test_batchnorm_param_validation():
    with pytest.raises(ConfigError):
        ops.BatchNormParams(np.ones(1), np.zeros(1), np.zeros(1), np.ones(1), epsilon=0.0)
    with pytest.raises(ConfigError):
        ops.BatchNormParams(np.ones(1), np.zeros(1), np.zeros(1), np.ones(1), momentum=1.0)


# -- pooling ---------------------------------------------------------------------


def test_pool_examples():
    x = np.arange(1, 17, dtype=float).reshape(1, 1, 4, 4)
    out, _ = ops.maxpool2x2(x)
    np.testing.assert_array_equal(out[0, 0], [[6, 8], [14, 16]])
    np.testing.assert_array_equal(ops.avgpool2x2(x)[0, 0], [[3.5, 5.5], [11.5, 13.5]])


@settings(max_examples=25, deadline=None)
@given(h=st.integers(2, 7), w=st.integers(2, 7), seed=st.integers(0, 2**16))
def test_maxpool_matches_oracle_with_floor(h, w, seed):
    x = np.random.default_rng(seed).normal(size=(2, 2, h, w))
    out, _ = ops.maxpool2x2(x)
    assert out.shape == (2, 2, h // 2, w // 2)
    np.testing.assert_array_equal(out, naive_maxpool(x))


def test_maxpool_tie_routes_gradient_to_first_entry():
    x = np.ones((1, 1, 2, 2))
    out, idx = ops.maxpool2x2(x)
    dx = ops.maxpool2x2_backward(np.ones_like(out), idx, x.shape)
    np.testing.assert_array_equal(dx[0, 0], [[1, 0], [0, 0]])


def test_pool_backward_drops_odd_edge():
    x = np.random.default_rng(0).normal(size=(1, 1, 5, 5))
    out, idx = ops.maxpool2x2(x)
    dx = ops.maxpool2x2_backward(np.ones_like(out), idx, x.shape)
    assert dx.shape == x.shape and dx.sum() == 4
    assert np.all(dx[..., 4, :] == 0) and np.all(dx[..., :, 4] == 0)
    da = ops.avgpool2x2_backward(np.ones((1, 1, 2, 2)), x.shape)
    np.testing.assert_allclose(da[0, 0, :4, :4], 0.25)


def test_pool_underflow():
    with pytest.raises(ShapeError):
        ops.maxpool2x2(np.zeros((1, 1, 1, 4)))
    with pytest.raises(ShapeError):
        ops.avgpool2x2(np.zeros((1, 1, 4, 1)))


# -- activation, dense, loss -----------------------------------------------------


def test_relu_and_subgradient_at_zero():
    x = np.array([-1.0, 0.0, 2.0])
    np.testing.assert_array_equal(ops.relu(x), [0, 0, 2])
    np.testing.assert_array_equal(ops.relu_backward(np.ones(3), x), [0, 0, 1])


def test_dense_shape_check():
    p = ops.DenseParams(np.zeros((3, 4)), np.zeros(3))
    assert ops.dense(np.zeros((2, 4)), p).shape == (2, 3)
    with pytest.raises(ShapeError):
        ops.dense(np.zeros((2, 5)), p)


def test_bce_at_zero_logit():
    loss, grad = ops.sigmoid_bce(np.array([[0.0]]), np.array([1]))
    assert loss == pytest.approx(math.log(2), abs=1e-12)
    assert grad[0, 0] == pytest.approx(-0.5)


def test_bce_extreme_logits_stay_finite():
    loss, grad = ops.sigmoid_bce(np.array([30.0, -30.0, 1000.0, -1000.0]), np.array([1, 0, 1, 0]))
    assert math.isfinite(loss) and 0 <= loss < 1e-12
    assert np.all(np.isfinite(grad))
    loss, _ = ops.sigmoid_bce(np.array([30.0]), np.array([1]))
    assert loss == pytest.approx(9.357622968839299e-14, rel=1e-6)
    loss, _ = ops.sigmoid_bce(np.array([-1000.0]), np.array([1]))
    assert loss == pytest.approx(1000.0)


@settings(max_examples=50, deadline=None)
@given(z=st.floats(-10, 10), y=st.sampled_from([0, 1]))
def test_bce_matches_direct_formula(z, y):
    # the naive formula is only trustworthy where sigmoid stays away from 0 and 1
    loss, grad = ops.sigmoid_bce(np.array([z]), np.array([y]))
    p = 1 / (1 + math.exp(-z))
    ref = -(y * math.log(p) + (1 - y) * math.log1p(-p))
    assert loss == pytest.approx(ref, rel=1e-7, abs=1e-12)
    assert grad[0] == pytest.approx(p - y, abs=1e-12)


def test_bce_rejects_bad_labels():
    with pytest.raises(ValueError):
        ops.sigmoid_bce(np.zeros(2), np.array([0, 2]))


def test_precision_context():
    p = ops.DenseParams.he_init(3, 2, np.random.default_rng(0))
    assert p.weight.dtype == np.float32
    with precision(np.float64):
        assert ops.DenseParams.he_init(3, 2, np.random.default_rng(0)).weight.dtype == np.float64
    assert ops.BatchNormParams.fresh(2).gamma.dtype == np.float32
