import numpy as np
import pytest

from gaze_forge.blocks import (
    DECODER_AM,
    DECODER_SCSE,
    am_forward,
    am_input_grad,
    batch_norm,
    br_forward,
    br_input_grad,
    conv2d,
    conv2d_input_grad,
    deconv2d,
    decoder_forward,
    decoder_input_grad,
    finite_diff_gradcheck,
    gradcheck_suite,
    random_am_decoder_block,
    random_am_params,
    random_bn_params,
    random_br_params,
    random_conv_kernel,
    random_deconv_kernel,
    random_scse_decoder_block,
    random_scse_params,
    scse_forward,
    shape_selftest,
    zero_boundary_refine,
)


class TestConv2d:
    def test_identity_1x1_kernel(self):
        x = np.random.default_rng(0).normal(size=(2, 3, 5, 5))
        kernel = np.zeros((3, 3, 1, 1))
        for c in range(3):
            kernel[c, c, 0, 0] = 1.0
        np.testing.assert_array_equal(conv2d(x, kernel), x)

    def test_zero_kernel(self):
        x = np.ones((1, 2, 4, 4))
        assert not conv2d(x, np.zeros((3, 2, 3, 3)), padding=1).any()

    def test_hand_dot_product(self):
        x = np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 1, 2, 2)
        kernel = np.ones((1, 1, 2, 2))
        out = conv2d(x, kernel)
        assert out.shape == (1, 1, 1, 1)
        assert out[0, 0, 0, 0] == 10.0

    def test_output_shape_with_stride_and_padding(self):
        x = np.zeros((1, 1, 7, 9))
        out = conv2d(x, np.zeros((1, 1, 3, 3)), stride=2, padding=1)
        assert out.shape == (1, 1, 4, 5)  # floor((7+2-3)/2)+1, floor((9+2-3)/2)+1

    def test_kernel_larger_than_padded_input(self):
        with pytest.raises(ValueError, match="larger"):
            conv2d(np.zeros((1, 1, 2, 2)), np.zeros((1, 1, 5, 5)), padding=1)

    def test_channel_mismatch(self):
        with pytest.raises(ValueError, match="channels"):
            conv2d(np.zeros((1, 2, 4, 4)), np.zeros((1, 3, 3, 3)))


class TestDeconv2d:
    def test_delta_input_places_retained_kernel_window(self):
        kernel = np.arange(16, dtype=float).reshape(1, 1, 4, 4)
        x = np.ones((1, 1, 1, 1))
        out = deconv2d(x, kernel, stride=2, padding=1)
        assert out.shape == (1, 1, 2, 2)
        np.testing.assert_array_equal(out[0, 0], kernel[0, 0, 1:3, 1:3])

    def test_zero_input(self):
        kernel = np.ones((2, 3, 4, 4))
        assert not deconv2d(np.zeros((1, 2, 3, 3)), kernel).any()

    def test_doubles_spatial_size(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(2, 3, 5, 7))
        out = deconv2d(x, random_deconv_kernel(rng, 3, 4), stride=2, padding=1)
        assert out.shape == (2, 4, 10, 14)

    def test_adjoint_identity_random(self):
        rng = np.random.default_rng(2)
        for _ in range(10):
            x = rng.normal(size=(2, 3, 6, 6))
            kernel = random_conv_kernel(rng, 4, 3, 4)
            y = rng.normal(size=conv2d(x, kernel, 2, 1).shape)
            lhs = float((conv2d(x, kernel, 2, 1) * y).sum())
            rhs = float((x * deconv2d(y, kernel, 2, 1)).sum())
            assert abs(lhs - rhs) < 1e-10


class TestBatchNorm:
    def test_affine_with_supplied_statistics(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(2, 3, 4, 4))
        p = random_bn_params(rng, 3)
        out = batch_norm(x, p)
        expected = (x - p.mean[None, :, None, None]) * (
            p.scale / np.sqrt(p.var + 1e-5)
        )[None, :, None, None] + p.shift[None, :, None, None]
        np.testing.assert_allclose(out, expected, atol=1e-14)

    def test_nonpositive_variance_rejected(self):
        p = random_bn_params(np.random.default_rng(0), 2)
        bad = type(p)(mean=p.mean, var=np.array([1.0, 0.0]), scale=p.scale, shift=p.shift)
        with pytest.raises(ValueError, match="variance"):
            batch_norm(np.zeros((1, 2, 2, 2)), bad)


class TestAttentionGate:
    def test_zero_input_gives_zero(self):
        params = random_am_params(np.random.default_rng(4), 3)
        assert not am_forward(np.zeros((2, 3, 4, 4)), params).any()

    def test_zero_params_halve_input(self):
        x = np.random.default_rng(5).normal(size=(2, 3, 4, 4))
        params = random_am_params(np.random.default_rng(0), 3)
        zero = type(params)(weight=np.zeros((3, 3)), bias=np.zeros(3))
        np.testing.assert_allclose(am_forward(x, zero), 0.5 * x, atol=1e-15)

    def test_contraction(self):
        rng = np.random.default_rng(6)
        x = rng.normal(size=(2, 4, 5, 5))
        out = am_forward(x, random_am_params(rng, 4))
        assert np.all(np.abs(out) <= np.abs(x) + 1e-15)


class TestScse:
    def test_zero_input_gives_zero(self):
        params = random_scse_params(np.random.default_rng(7), 4)
        assert not scse_forward(np.zeros((1, 4, 3, 3)), params).any()

    def test_zero_weights_halve_input(self):
        x = np.random.default_rng(8).normal(size=(2, 4, 3, 3))
        zero = random_scse_params(np.random.default_rng(0), 4)
        zero = type(zero)(
            channel_reduce=np.zeros_like(zero.channel_reduce),
            channel_reduce_bias=np.zeros_like(zero.channel_reduce_bias),
            channel_expand=np.zeros_like(zero.channel_expand),
            channel_expand_bias=np.zeros_like(zero.channel_expand_bias),
            spatial_weight=np.zeros_like(zero.spatial_weight),
            spatial_bias=0.0,
        )
        np.testing.assert_allclose(scse_forward(x, zero), 0.5 * x, atol=1e-15)

    def test_contraction(self):
        rng = np.random.default_rng(9)
        x = rng.normal(size=(2, 4, 5, 5))
        out = scse_forward(x, random_scse_params(rng, 4))
        assert np.all(np.abs(out) <= np.abs(x) + 1e-15)

    def test_reduction_must_divide_channels(self):
        with pytest.raises(ValueError, match="divide"):
            random_scse_params(np.random.default_rng(0), 5, reduction=2)


class TestBoundaryRefine:
    def test_zero_branch_is_bit_identical(self):
        x = np.random.default_rng(10).normal(size=(2, 3, 6, 6))
        out = br_forward(x, zero_boundary_refine(3))
        np.testing.assert_array_equal(out, x)

    def test_zero_input_zero_bias(self):
        params = random_br_params(np.random.default_rng(11), 3)
        zero_bias = type(params)(
            conv1=params.conv1, bias1=np.zeros(3), conv2=params.conv2, bias2=np.zeros(3)
        )
        assert not br_forward(np.zeros((1, 3, 4, 4)), zero_bias).any()

    def test_residual_equals_independent_branch(self):
        rng = np.random.default_rng(12)
        x = rng.normal(size=(2, 3, 5, 5))
        params = random_br_params(rng, 3)
        out = br_forward(x, params)
        branch = conv2d(
            np.maximum(conv2d(x, params.conv1, 1, 1, params.bias1), 0.0),
            params.conv2, 1, 1, params.bias2,
        )
        np.testing.assert_allclose(out - x, branch, atol=1e-12)

    def test_preserves_shape(self):
        x = np.zeros((1, 2, 9, 7))
        assert br_forward(x, zero_boundary_refine(2)).shape == x.shape


class TestDecoder:
    def test_one_block_doubles(self):
        rng = np.random.default_rng(13)
        x = rng.normal(size=(1, 4, 8, 8))
        skip = rng.normal(size=(1, 2, 8, 8))
        out = decoder_forward([x, skip], [random_am_decoder_block(rng, 4, 2, 4)], DECODER_AM)
        assert out.shape == (1, 4, 16, 16)

    def test_three_blocks_8_to_64_both_kinds(self):
        rng = np.random.default_rng(14)
        feats = [rng.normal(size=(1, 4, 8, 8)), rng.normal(size=(1, 2, 8, 8)),
                 rng.normal(size=(1, 2, 16, 16)), rng.normal(size=(1, 2, 32, 32))]
        am = [random_am_decoder_block(rng, 4, 2, 4) for _ in range(3)]
        assert decoder_forward(feats, am, DECODER_AM).shape == (1, 4, 64, 64)
        scse = [random_scse_decoder_block(rng, 4, 2, 4) for _ in range(3)]
        assert decoder_forward(feats, scse, DECODER_SCSE).shape == (1, 4, 64, 64)

    def test_zero_weights_propagate_zero(self):
        rng = np.random.default_rng(15)
        block = random_am_decoder_block(rng, 3, 0, 3)
        zeroed = type(block)(
            conv_in=_zero_conv_bn(block.conv_in),
            up=_zero_conv_bn(block.up),
            conv_out=_zero_conv_bn(block.conv_out),
            gate=type(block.gate)(weight=np.zeros((3, 3)), bias=np.zeros(3)),
        )
        x = rng.normal(size=(1, 3, 4, 4))
        out = decoder_forward([x], [zeroed], DECODER_AM)
        assert not out.any()  # 0.5 gates applied to all-zero activations

    def test_incompatible_skip_lists_expected_dims(self):
        rng = np.random.default_rng(16)
        x = rng.normal(size=(1, 4, 8, 8))
        skip = rng.normal(size=(1, 2, 9, 8))
        with pytest.raises(ValueError, match="8, 8"):
            decoder_forward([x, skip], [random_am_decoder_block(rng, 4, 2, 4)], DECODER_AM)

    def test_unknown_kind(self):
        with pytest.raises(ValueError, match="kind"):
            decoder_forward([np.zeros((1, 1, 4, 4))], [], "resnet")


def _zero_conv_bn(p):
    return type(p)(
        kernel=np.zeros_like(p.kernel),
        bias=np.zeros_like(p.bias),
        bn=type(p.bn)(
            mean=np.zeros_like(p.bn.mean),
            var=np.ones_like(p.bn.var),
            scale=np.zeros_like(p.bn.scale),
            shift=np.zeros_like(p.bn.shift),
        ),
    )


class TestGradients:
    def test_conv2d_input_grad_matches_fd(self):
        rng = np.random.default_rng(17)
        x = rng.normal(size=(2, 3, 5, 5))
        kernel = random_conv_kernel(rng, 2, 3, 3)
        err = finite_diff_gradcheck(
            lambda v: conv2d(v, kernel, 1, 1),
            lambda v, g: conv2d_input_grad(g, kernel, 1, 1, v.shape[2:]),
            x,
        )
        assert err < 1e-4

    def test_am_input_grad_matches_fd(self):
        rng = np.random.default_rng(18)
        x = rng.normal(size=(2, 4, 4, 4))
        params = random_am_params(rng, 4)
        err = finite_diff_gradcheck(
            lambda v: am_forward(v, params),
            lambda v, g: am_input_grad(v, params, g),
            x,
        )
        assert err < 1e-4

    def test_br_input_grad_matches_fd(self):
        rng = np.random.default_rng(19)
        x = rng.normal(size=(1, 3, 5, 5))
        params = random_br_params(rng, 3)
        err = finite_diff_gradcheck(
            lambda v: br_forward(v, params),
            lambda v, g: br_input_grad(v, params, g),
            x,
        )
        assert err < 1e-4

    def test_decoder_input_grad_matches_fd_both_kinds(self):
        rng = np.random.default_rng(20)
        x = rng.normal(size=(1, 4, 4, 4))
        skip = rng.normal(size=(1, 2, 4, 4))
        for kind, blocks in (
            (DECODER_AM, [random_am_decoder_block(rng, 4, 2, 4)]),
            (DECODER_SCSE, [random_scse_decoder_block(rng, 4, 2, 4)]),
        ):
            err = finite_diff_gradcheck(
                lambda v: decoder_forward([v, skip], blocks, kind),
                lambda v, g: decoder_input_grad([v, skip], blocks, kind, g),
                x,
            )
            assert err < 1e-4

    def test_suite_passes_threshold(self):
        errors = gradcheck_suite(seed=123, instances=1)
        assert set(errors) == {
            "conv2d", "deconv2d", "am_forward", "scse_forward",
            "br_forward", "decoder_am", "decoder_scse",
        }
        assert all(err < 1e-4 for err in errors.values())

    def test_gradcheck_rejects_large_tensors(self):
        with pytest.raises(ValueError, match="too large"):
            finite_diff_gradcheck(lambda v: v, lambda v, g: g, np.zeros((5, 5, 8, 8)))


class TestFiniteness:
    def test_blocks_preserve_finiteness(self):
        rng = np.random.default_rng(21)
        x = rng.normal(size=(2, 4, 6, 6)) * 50
        assert np.all(np.isfinite(am_forward(x, random_am_params(rng, 4))))
        assert np.all(np.isfinite(scse_forward(x, random_scse_params(rng, 4))))
        assert np.all(np.isfinite(br_forward(x, random_br_params(rng, 4))))

    def test_selftest_all_pass(self):
        results = shape_selftest(seed=0)
        failures = [r.name for r in results if not r.passed]
        assert failures == []
