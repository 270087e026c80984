import numpy as np
import pytest

from clickseg.autodiff import (
    Tensor,
    adaptive_avgpool,
    batchnorm2d,
    bilinear_upsample,
    conv2d,
    global_avgpool,
    grad_check,
    maxpool2d,
    relu,
    tsum,
)

from oracles import (
    adaptive_avgpool_loops,
    batchnorm_twopass,
    bilinear_scalar,
    conv2d_loops,
    maxpool2d_loops,
)


def rand64(shape, seed, requires_grad=False):
    rng = np.random.default_rng(seed)
    return Tensor(rng.standard_normal(shape), requires_grad=requires_grad)


class TestConv2dForward:
    def test_identity_1x1(self):
        x = rand64((1, 1, 4, 4), 0)
        w = Tensor(np.ones((1, 1, 1, 1)))
        b = Tensor(np.zeros(1))
        out = conv2d(x, w, b)
        assert np.array_equal(out.data, x.data)

    def test_matches_sliding_window_oracle(self):
        x = rand64((1, 1, 3, 3), 1)
        w = Tensor(np.array([[[[1.0, -1.0], [0.5, 2.0]]]]))
        out = conv2d(x, w)
        expected = conv2d_loops(x.data, w.data)
        assert np.allclose(out.data, expected, atol=1e-6)

    def test_oracle_with_stride_padding_channels(self):
        x = rand64((2, 3, 7, 6), 2)
        w = rand64((4, 3, 3, 3), 3)
        b = rand64((4,), 4)
        out = conv2d(x, w, b, stride=2, padding=1)
        expected = conv2d_loops(x.data, w.data, b.data, stride=2, padding=1)
        assert out.shape == expected.shape
        assert np.allclose(out.data, expected, atol=1e-6)

    def test_7x7_stride2_halves_512(self):
        x = Tensor(np.zeros((1, 1, 512, 4), dtype=np.float32))
        w = Tensor(np.zeros((1, 1, 7, 7), dtype=np.float32))
        out = conv2d(x, w, stride=2, padding=3)
        assert out.shape[2] == 256

    def test_channel_mismatch(self):
        with pytest.raises(ValueError):
            conv2d(rand64((1, 3, 4, 4), 0), rand64((2, 4, 1, 1), 1))

    def test_kernel_exceeds_padded_input(self):
        with pytest.raises(ValueError):
            conv2d(rand64((1, 1, 2, 2), 0), rand64((1, 1, 5, 5), 1))


class TestPoolingForward:
    def test_single_window(self):
        x = Tensor(np.array([[[[1.0, 2.0], [3.0, 4.0]]]]))
        assert maxpool2d(x).data[0, 0, 0, 0] == 4.0

    def test_constant_routes_to_first_index(self):
        x = Tensor(np.ones((1, 1, 2, 2)), requires_grad=True)
        tsum(maxpool2d(x)).backward()
        assert np.array_equal(x.grad, [[[[1.0, 0.0], [0.0, 0.0]]]])

    def test_oracle_8x8(self):
        x = rand64((2, 3, 8, 8), 5)
        out = maxpool2d(x)
        assert np.array_equal(out.data, maxpool2d_loops(x.data))

    def test_too_small_input(self):
        with pytest.raises(ValueError):
            maxpool2d(Tensor(np.zeros((1, 1, 1, 4))), kernel=2, stride=2)

    def test_adaptive_quadrant_means(self):
        x = Tensor(np.arange(16.0).reshape(1, 1, 4, 4))
        out = adaptive_avgpool(x, 2, 2)
        assert np.allclose(out.data, adaptive_avgpool_loops(x.data, 2, 2))

    def test_adaptive_uneven_partitions(self):
        x = rand64((1, 2, 5, 7), 6)
        out = adaptive_avgpool(x, 3, 4)
        assert np.allclose(out.data, adaptive_avgpool_loops(x.data, 3, 4), atol=1e-12)

    def test_adaptive_1x1_equals_global(self):
        x = rand64((2, 3, 5, 5), 7)
        assert np.allclose(adaptive_avgpool(x, 1, 1).data, global_avgpool(x).data)

    def test_constant_map_any_grid(self):
        x = Tensor(np.full((1, 1, 6, 6), 3.25))
        assert np.all(adaptive_avgpool(x, 2, 3).data == 3.25)

    def test_grid_exceeding_input(self):
        with pytest.raises(ValueError):
            adaptive_avgpool(Tensor(np.zeros((1, 1, 2, 2))), 3, 1)


class TestBatchNorm:
    def test_passthrough_on_standardized_input(self):
        rng = np.random.default_rng(8)
        raw = rng.uniform(-1.0, 1.0, (4, 3, 5, 5))  # bounded, so eps skew stays < 1e-5
        raw = (raw - raw.mean(axis=(0, 2, 3), keepdims=True)) / raw.std(axis=(0, 2, 3), keepdims=True)
        x = Tensor(raw)
        gamma, beta = Tensor(np.ones(3)), Tensor(np.zeros(3))
        out = batchnorm2d(x, gamma, beta, np.zeros(3), np.ones(3), training=True)
        assert np.max(np.abs(out.data - raw)) < 1e-5

    def test_constant_channel_zeros(self):
        x = Tensor(np.full((2, 1, 3, 3), 7.0))
        out = batchnorm2d(x, Tensor(np.ones(1)), Tensor(np.zeros(1)), np.zeros(1), np.ones(1), True)
        assert np.allclose(out.data, 0.0)

    def test_matches_two_pass_oracle(self):
        x = rand64((3, 2, 4, 4), 9)
        gamma = Tensor(np.array([1.5, 0.5]))
        beta = Tensor(np.array([0.1, -0.2]))
        out = batchnorm2d(x, gamma, beta, np.zeros(2), np.ones(2), training=True)
        expected = batchnorm_twopass(x.data, gamma.data, beta.data)
        assert np.max(np.abs(out.data - expected)) < 1e-5

    def test_running_stats_update_and_eval_mode(self):
        x = rand64((4, 2, 3, 3), 10)
        gamma, beta = Tensor(np.ones(2)), Tensor(np.zeros(2))
        rm, rv = np.zeros(2), np.ones(2)
        batchnorm2d(x, gamma, beta, rm, rv, training=True, momentum=0.1)
        assert np.allclose(rm, 0.1 * x.data.mean(axis=(0, 2, 3)))
        out = batchnorm2d(x, gamma, beta, rm, rv, training=False)
        expected = (x.data - rm.reshape(1, 2, 1, 1)) / np.sqrt(rv.reshape(1, 2, 1, 1) + 1e-5)
        assert np.allclose(out.data, expected)

    def test_degenerate_variance_error(self):
        x = Tensor(np.zeros((1, 3, 1, 1)))
        with pytest.raises(ValueError):
            batchnorm2d(x, Tensor(np.ones(3)), Tensor(np.zeros(3)), np.zeros(3), np.ones(3), True)


class TestBilinear:
    def test_identity_size(self):
        x = rand64((1, 2, 5, 5), 11)
        assert np.allclose(bilinear_upsample(x, 5, 5).data, x.data)

    def test_matches_scalar_formula(self):
        x = Tensor(np.array([[[[0.0, 1.0], [1.0, 2.0]]]]))
        out = bilinear_upsample(x, 4, 4)
        assert np.allclose(out.data, bilinear_scalar(x.data, 4, 4), atol=1e-12)

    def test_constant_stays_constant(self):
        x = Tensor(np.full((1, 1, 3, 4), 2.5))
        assert np.allclose(bilinear_upsample(x, 9, 16).data, 2.5)

    def test_random_against_oracle(self):
        x = rand64((2, 3, 4, 5), 12)
        out = bilinear_upsample(x, 11, 13)
        assert np.allclose(out.data, bilinear_scalar(x.data, 11, 13), atol=1e-12)

    def test_zero_output_rejected(self):
        with pytest.raises(ValueError):
            bilinear_upsample(rand64((1, 1, 2, 2), 0), 0, 4)


class TestSpatialGradients:
    """Central finite differences against every backward rule, float64."""

    def test_conv2d(self):
        x = rand64((2, 2, 5, 5), 13, requires_grad=True)
        w = rand64((3, 2, 3, 3), 14, requires_grad=True)
        b = rand64((3,), 15, requires_grad=True)

        def f(xv, wv, bv):
            out = conv2d(xv, wv, bv, stride=2, padding=1)
            return tsum(out * out)

        assert grad_check(f, [x, w, b]) < 1e-4

    def test_conv1x1_fast_path(self):
        x = rand64((1, 3, 4, 4), 16, requires_grad=True)
        w = rand64((2, 3, 1, 1), 17, requires_grad=True)
        b = rand64((2,), 18, requires_grad=True)
        err = grad_check(lambda *a: tsum(conv2d(a[0], a[1], a[2])), [x, w, b])
        assert err < 1e-6

    def test_maxpool(self):
        rng = np.random.default_rng(19)
        vals = rng.standard_normal((1, 2, 6, 6))
        x = Tensor(vals, requires_grad=True)
        err = grad_check(lambda v: tsum(maxpool2d(v) * maxpool2d(v)), [x])
        assert err < 1e-4

    def test_batchnorm_train(self):
        x = rand64((3, 2, 4, 4), 20, requires_grad=True)
        gamma = Tensor(np.array([1.2, 0.8]), requires_grad=True)
        beta = Tensor(np.array([0.3, -0.1]), requires_grad=True)

        def f(xv, g, bta):
            out = batchnorm2d(xv, g, bta, np.zeros(2), np.ones(2), training=True)
            return (out * out).mean()

        assert grad_check(f, [x, gamma, beta], eps=1e-3) < 1e-4

    def test_batchnorm_eval(self):
        x = rand64((2, 2, 3, 3), 21, requires_grad=True)
        gamma = Tensor(np.ones(2), requires_grad=True)
        beta = Tensor(np.zeros(2), requires_grad=True)
        rm, rv = np.array([0.2, -0.1]), np.array([1.5, 0.7])

        def f(xv, g, bta):
            return tsum(batchnorm2d(xv, g, bta, rm.copy(), rv.copy(), training=False))

        assert grad_check(f, [x, gamma, beta]) < 1e-6

    def test_pools_and_upsample(self):
        x = rand64((1, 2, 4, 4), 22, requires_grad=True)
        assert grad_check(lambda v: tsum(global_avgpool(v)), [x]) < 1e-6
        assert grad_check(lambda v: tsum(adaptive_avgpool(v, 3, 2)), [x]) < 1e-6
        assert grad_check(lambda v: tsum(bilinear_upsample(v, 7, 6)), [x]) < 1e-6

    def test_composite_chain_conv_bn_relu_pool(self):
        x = rand64((2, 2, 6, 6), 23, requires_grad=True)
        w = rand64((2, 2, 3, 3), 24, requires_grad=True)
        b = rand64((2,), 25, requires_grad=True)
        gamma = Tensor(np.ones(2), requires_grad=True)
        beta = Tensor(np.zeros(2), requires_grad=True)

        def f(xv, wv, bv, g, bta):
            h = conv2d(xv, wv, bv, stride=1, padding=1)
            h = batchnorm2d(h, g, bta, np.zeros(2), np.ones(2), training=True)
            h = relu(h)
            return tsum(maxpool2d(h))

        assert grad_check(f, [x, w, b, gamma, beta], eps=1e-4) < 1e-4
