import math

import numpy as np
import pytest

from app.core.errors import InvalidParameterError, NumericalError
from app.networks.attention import AttentionProjections, attention, merge_heads, multi_head_attention, split_heads
from app.networks.generator import (
    ConfidenceGuidedGenerator,
    DecoderBundle,
    EglaParams,
    composite_loss,
    concat_confidence,
    egla_forward,
    fuse_outputs,
)
from app.networks.layers import (
    avg_pool2x2,
    conv1x1,
    conv2d,
    conv_transpose2x2,
    flatten_spatial,
    max_pool2x2,
    unflatten_spatial,
    upsample_bilinear,
)


def test_attention_weights_are_row_stochastic(rng):
    q, k, v = rng.standard_normal((2, 4, 8)), rng.standard_normal((2, 6, 8)), rng.standard_normal((2, 6, 3))
    out, weights = attention(q, k, v, return_weights=True)
    assert out.shape == (2, 4, 3)
    np.testing.assert_allclose(weights.sum(axis=2), 1.0, atol=1e-12)
    assert np.all(weights >= 0)


def test_attention_with_identical_keys_averages_values(rng):
    q = rng.standard_normal((1, 3, 4))
    k = np.ones((1, 5, 4))
    v = rng.standard_normal((1, 5, 2))
    out = attention(q, k, v)
    np.testing.assert_allclose(out, np.broadcast_to(v.mean(axis=1, keepdims=True), (1, 3, 2)), atol=1e-12)


def test_attention_reports_non_finite_row():
    q = np.zeros((1, 3, 2))
    q[0, 2, 0] = np.nan
    with pytest.raises(NumericalError) as info:
        attention(q, np.ones((1, 2, 2)), np.ones((1, 2, 2)))
    assert info.value.module == "attention"
    assert info.value.index == 2


def test_attention_shape_checks():
    with pytest.raises(InvalidParameterError):
        attention(np.zeros((1, 2, 3)), np.zeros((1, 2, 4)), np.zeros((1, 2, 4)))


def test_split_and_merge_heads_are_inverse(rng):
    x = rng.standard_normal((2, 5, 8))
    np.testing.assert_array_equal(merge_heads(split_heads(x, 4), 4), x)


def test_single_head_identity_projections_reduce_to_attention(rng):
    Q, K, V = (rng.standard_normal((2, 4, 6)) for _ in range(3))
    result = multi_head_attention(Q, K, V, 1, AttentionProjections.identity(6))
    np.testing.assert_allclose(result, attention(Q, K, V), atol=1e-12)


def test_multi_head_weights_shape(rng):
    Q, K = rng.standard_normal((2, 3, 8)), rng.standard_normal((2, 5, 8))
    out, weights = multi_head_attention(Q, K, K, 2, AttentionProjections.random(8, seed=1), return_weights=True)
    assert out.shape == (2, 3, 8)
    assert weights.shape == (2, 2, 3, 5)
    with pytest.raises(InvalidParameterError):
        multi_head_attention(Q, K, K, 3, AttentionProjections.random(8, seed=1))


def test_conv2d_identity_kernel(rng):
    x = rng.standard_normal((2, 3, 5, 5))
    kernel = np.zeros((3, 3, 3, 3))
    for c in range(3):
        kernel[c, c, 1, 1] = 1.0
    np.testing.assert_allclose(conv2d(x, kernel), x)


def test_conv2d_box_kernel_uses_zero_padding():
    x = np.ones((1, 1, 4, 4))
    out = conv2d(x, np.ones((1, 1, 3, 3)))
    assert out[0, 0, 0, 0] == 4.0
    assert out[0, 0, 1, 1] == 9.0
    assert out[0, 0, 0, 1] == 6.0


def test_pooling_and_upsampling_shapes():
    x = np.arange(16, dtype=float).reshape(1, 1, 4, 4)
    np.testing.assert_array_equal(max_pool2x2(x)[0, 0], [[5, 7], [13, 15]])
    np.testing.assert_array_equal(avg_pool2x2(x)[0, 0], [[2.5, 4.5], [10.5, 12.5]])
    assert upsample_bilinear(x).shape == (1, 1, 8, 8)
    np.testing.assert_allclose(upsample_bilinear(np.full((1, 2, 3, 3), 2.0)), 2.0)
    with pytest.raises(InvalidParameterError):
        max_pool2x2(np.zeros((1, 1, 3, 4)))


def test_conv_transpose_doubles_resolution():
    weight = np.ones((2, 1, 2, 2))
    out = conv_transpose2x2(np.ones((1, 2, 3, 3)), weight)
    assert out.shape == (1, 1, 6, 6)
    np.testing.assert_array_equal(out, 2.0)


def test_flatten_spatial_round_trip(rng):
    x = rng.standard_normal((2, 3, 4, 5))
    tokens = flatten_spatial(x)
    assert tokens.shape == (2, 20, 3)
    np.testing.assert_array_equal(unflatten_spatial(tokens, 4, 5), x)


def test_concat_confidence_appends_constant_channel(rng):
    f = rng.standard_normal((2, 3, 4, 4))
    out = concat_confidence(f, np.array([0.25, 0.75]))
    assert out.shape == (2, 4, 4, 4)
    np.testing.assert_array_equal(out[:, :3], f)
    np.testing.assert_array_equal(out[0, 3], 0.25)
    np.testing.assert_array_equal(out[1, 3], 0.75)
    with pytest.raises(InvalidParameterError):
        concat_confidence(f, 1.5)


def test_egla_preserves_intermediate_shape(rng):
    J = rng.standard_normal((2, 4, 3, 3))
    S = rng.standard_normal((2, 4, 6, 6))
    out = egla_forward(J, S, EglaParams.random(4, 4, heads=2, seed=0))
    assert out.shape == S.shape


def test_egla_with_zero_value_kernel_is_residual(rng):
    J = rng.standard_normal((1, 4, 2, 2))
    S = rng.standard_normal((1, 4, 4, 4))
    params = EglaParams.random(4, 4, heads=1, seed=3)
    params = EglaParams(params.conv_q, params.bias_q, params.conv_k, params.bias_k,
                        np.zeros_like(params.conv_v), params.bias_v, params.projections, params.heads)
    np.testing.assert_allclose(egla_forward(J, S, params), S, atol=1e-12)


def test_egla_rejects_mismatched_resolutions(rng):
    with pytest.raises(InvalidParameterError):
        egla_forward(np.zeros((1, 4, 3, 3)), np.zeros((1, 4, 4, 4)), EglaParams.random(4, 4, 1, 0))


def test_fuse_outputs_averages_then_projects():
    outputs = [np.full((1, 1, 2, 2), 1.0), np.full((1, 1, 2, 2), 3.0)]
    bundle = DecoderBundle(outputs=outputs, fusion_weight=np.array([[2.0]]), fusion_bias=np.array([0.5]))
    np.testing.assert_allclose(fuse_outputs(bundle), 4.5)


def test_fuse_outputs_requires_two_decoders():
    bundle = DecoderBundle(outputs=[np.zeros((1, 1, 2, 2))], fusion_weight=np.eye(1))
    with pytest.raises(InvalidParameterError):
        fuse_outputs(bundle)


def test_composite_loss_weights():
    assert composite_loss(1.0, 0.5, 0.2) == pytest.approx(1.0 + 10.0 * 0.5 + 5.0 * 0.2)
    with pytest.raises(InvalidParameterError):
        composite_loss(1.0, 1.0, 1.0, lambda_cyc=-1.0)


def test_generator_forward_shape_and_confidence_sensitivity(rng):
    generator = ConfidenceGuidedGenerator.create(in_channels=2, feature_channels=4, out_channels=1,
                                                 num_decoders=3, heads=2, seed=0)
    f = rng.standard_normal((2, 2, 4, 4))
    first = generator.forward(f, [0.7, 0.2, 0.1])
    second = generator.forward(f, [0.1, 0.2, 0.7])
    assert first.shape == (2, 1, 8, 8)
    assert not np.allclose(first, second)
    bundle = generator.bundle(f, [0.7, 0.2, 0.1])
    assert len(bundle.outputs) == 3
    assert bundle.global_feature.shape == (2, 4, 4, 4)


def test_generator_requires_one_confidence_per_decoder(rng):
    generator = ConfidenceGuidedGenerator.create(2, 4, 1, num_decoders=3, seed=0)
    with pytest.raises(InvalidParameterError):
        generator.forward(rng.standard_normal((1, 2, 4, 4)), [0.5, 0.5])


def _loop_attention(q, k, v):
    batch, n_q, d_k = q.shape
    n, d_v = v.shape[1], v.shape[2]
    out = np.zeros((batch, n_q, d_v))
    for b in range(batch):
        for i in range(n_q):
            logits = [sum(q[b, i, d] * k[b, j, d] for d in range(d_k)) / math.sqrt(d_k) for j in range(n)]
            top = max(logits)
            exps = [math.exp(value - top) for value in logits]
            total = sum(exps)
            for e in range(d_v):
                out[b, i, e] = sum(exps[j] / total * v[b, j, e] for j in range(n))
    return out


def _loop_multi_head(Q, K, V, heads, projections):
    q, k, v = Q @ projections.w_q, K @ projections.w_k, V @ projections.w_v
    d = Q.shape[-1] // heads
    per_head = [
        _loop_attention(q[:, :, h * d:(h + 1) * d], k[:, :, h * d:(h + 1) * d], v[:, :, h * d:(h + 1) * d])
        for h in range(heads)
    ]
    return np.concatenate(per_head, axis=2) @ projections.w_o


def _loop_conv3x3(x, weight, bias):
    batch, c_in, height, width = x.shape
    out = np.zeros((batch, weight.shape[0], height, width))
    for b in range(batch):
        for o in range(weight.shape[0]):
            for r in range(height):
                for c in range(width):
                    acc = bias[o]
                    for ch in range(c_in):
                        for i in range(3):
                            for j in range(3):
                                rr, cc = r + i - 1, c + j - 1
                                if 0 <= rr < height and 0 <= cc < width:
                                    acc += weight[o, ch, i, j] * x[b, ch, rr, cc]
                    out[b, o, r, c] = acc
    return out


def _loop_max_pool(x):
    batch, channels, height, width = x.shape
    out = np.zeros((batch, channels, height // 2, width // 2))
    for b in range(batch):
        for ch in range(channels):
            for r in range(height // 2):
                for c in range(width // 2):
                    out[b, ch, r, c] = max(x[b, ch, 2 * r + i, 2 * c + j] for i in range(2) for j in range(2))
    return out


def _source(index, size):
    position = max((index + 0.5) / 2 - 0.5, 0.0)
    lo = int(math.floor(position))
    return lo, min(lo + 1, size - 1), position - lo


def _loop_upsample(x):
    batch, channels, height, width = x.shape
    out = np.zeros((batch, channels, 2 * height, 2 * width))
    for b in range(batch):
        for ch in range(channels):
            for r in range(2 * height):
                r0, r1, fr = _source(r, height)
                for c in range(2 * width):
                    c0, c1, fc = _source(c, width)
                    top = (1 - fc) * x[b, ch, r0, c0] + fc * x[b, ch, r0, c1]
                    bottom = (1 - fc) * x[b, ch, r1, c0] + fc * x[b, ch, r1, c1]
                    out[b, ch, r, c] = (1 - fr) * top + fr * bottom
    return out


def _tokens(x):
    batch, channels, height, width = x.shape
    return np.array([[[x[b, ch, r, c] for ch in range(channels)]
                      for r in range(height) for c in range(width)] for b in range(batch)])


def _grid(tokens, height, width):
    batch, _, channels = tokens.shape
    out = np.zeros((batch, channels, height, width))
    for b in range(batch):
        for r in range(height):
            for c in range(width):
                out[b, :, r, c] = tokens[b, r * width + c]
    return out


def test_attention_matches_triple_loop_reference(rng):
    q, k, v = (rng.standard_normal((2, 3, 4)) for _ in range(3))
    np.testing.assert_allclose(attention(q, k, v), _loop_attention(q, k, v), rtol=0, atol=1e-10)


def test_multi_head_attention_matches_per_head_loop(rng):
    Q, K, V = rng.standard_normal((2, 3, 6)), rng.standard_normal((2, 5, 6)), rng.standard_normal((2, 5, 6))
    projections = AttentionProjections.random(6, seed=9)
    np.testing.assert_allclose(
        multi_head_attention(Q, K, V, 2, projections),
        _loop_multi_head(Q, K, V, 2, projections),
        rtol=0, atol=1e-10,
    )


def test_fuse_outputs_matches_scalar_loop(rng):
    outputs = [rng.standard_normal((2, 3, 4, 5)) for _ in range(3)]
    weight = rng.standard_normal((2, 3))
    bias = rng.standard_normal(2)
    expected = np.zeros((2, 2, 4, 5))
    for b in range(2):
        for o in range(2):
            for r in range(4):
                for c in range(5):
                    mean = [sum(out[b, ch, r, c] for out in outputs) / 3.0 for ch in range(3)]
                    expected[b, o, r, c] = sum(weight[o, ch] * mean[ch] for ch in range(3)) + bias[o]
    bundle = DecoderBundle(outputs=outputs, fusion_weight=weight, fusion_bias=bias)
    np.testing.assert_allclose(fuse_outputs(bundle), expected, rtol=0, atol=1e-10)


def test_egla_matches_compositional_reference(rng):
    J = rng.standard_normal((2, 4, 2, 3))
    S = rng.standard_normal((2, 4, 4, 6))
    params = EglaParams.random(4, 4, heads=2, seed=5)
    params = EglaParams(params.conv_q, rng.standard_normal(4), params.conv_k, rng.standard_normal(4),
                        params.conv_v, rng.standard_normal(4), params.projections, params.heads)

    Q = _tokens(_loop_conv3x3(_loop_max_pool(S), params.conv_q, params.bias_q))
    K = _tokens(_loop_conv3x3(J, params.conv_k, params.bias_k))
    V = _tokens(_loop_conv3x3(J, params.conv_v, params.bias_v))
    attended = _grid(_loop_multi_head(Q, K, V, 2, params.projections), 2, 3)
    expected = S + _loop_upsample(attended)

    np.testing.assert_allclose(egla_forward(J, S, params), expected, rtol=0, atol=1e-10)
