import math

import numpy as np
import numpy.testing as npt
import pytest

from mvir import autodiff as ad
from mvir.autodiff import Tensor
from mvir.errors import ConfigurationError, DimensionError
from mvir.fusion import CoAttentionLayer, co_attention, fuse, fusion_layer, scaled_dot_attention


def scalar_softmax(v):
    e = np.exp(v - v.max())
    return e / e.sum()


def attention_oracle(q, k, v):
    # row-by-row softmax-weighted sum over the key axis
    out = np.zeros((q.shape[0], v.shape[1]))
    for i in range(q.shape[0]):
        weights = scalar_softmax(q[i] @ k.T / math.sqrt(q.shape[1]))
        out[i] = sum(weights[j] * v[j] for j in range(k.shape[0]))
    return out


def make_layer(d, heads, rng, d_ff=None, requires_grad=False, scale=0.4):
    d_ff = d_ff or 2 * d
    t = lambda *shape: Tensor(rng.standard_normal(shape) * scale, requires_grad)
    return CoAttentionLayer(
        wq=t(d, d), wk=t(d, d), wv=t(d, d), wo=t(d, d),
        ffn_w1=t(d, d_ff), ffn_b1=Tensor(np.zeros(d_ff), requires_grad),
        ffn_w2=t(d_ff, d), ffn_b2=Tensor(np.zeros(d), requires_grad),
        attn_gain=Tensor(np.ones(d), requires_grad), attn_shift=Tensor(np.zeros(d), requires_grad),
        ffn_gain=Tensor(np.ones(d), requires_grad), ffn_shift=Tensor(np.zeros(d), requires_grad),
        heads=heads,
    )


def layer_params(layer):
    return [layer.wq, layer.wk, layer.wv, layer.wo,
            layer.ffn_w1, layer.ffn_b1, layer.ffn_w2, layer.ffn_b2,
            layer.attn_gain, layer.attn_shift, layer.ffn_gain, layer.ffn_shift]


class TestScaledDotAttention:
    def test_single_key_returns_value_row(self):
        rng = np.random.default_rng(0)
        q = Tensor(rng.standard_normal((3, 2)))
        k = Tensor(rng.standard_normal((1, 2)))
        v = Tensor(rng.standard_normal((1, 2)))
        out = scaled_dot_attention(q, k, v)
        npt.assert_allclose(out.data, np.tile(v.data, (3, 1)), atol=1e-15)

    def test_saturated_softmax_selects_value(self):
        k = Tensor(np.eye(3)[:, :2] * 1.0)  # 3 orthogonal-ish keys in 2-d
        k = Tensor(np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]]))
        v = Tensor(np.array([[1.0, 1.0], [2.0, 2.0], [3.0, 3.0]]))
        q = Tensor(np.array([[0.0, 1000.0]]))  # huge along key 1
        out = scaled_dot_attention(q, k, v)
        npt.assert_allclose(out.data, [[2.0, 2.0]], atol=1e-12)

    def test_against_loop_oracle(self):
        rng = np.random.default_rng(1)
        q, k, v = rng.standard_normal((2, 2)), rng.standard_normal((3, 2)), rng.standard_normal((3, 2))
        out = scaled_dot_attention(Tensor(q), Tensor(k), Tensor(v))
        assert np.max(np.abs(out.data - attention_oracle(q, k, v))) < 1e-12

    def test_attention_rows_sum_to_one(self):
        rng = np.random.default_rng(2)
        q, k = rng.standard_normal((4, 3)) * 5, rng.standard_normal((6, 3)) * 5
        logits = q @ k.T / math.sqrt(3)
        weights = ad.softmax_axis(Tensor(logits), 1).data
        npt.assert_allclose(weights.sum(axis=1), 1.0, atol=1e-9)

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            scaled_dot_attention(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 2))),
                                 Tensor(np.zeros((4, 2))))


class TestCoAttention:
    def test_uniform_attention_means_projected_values(self):
        # zero queries make every key equally weighted: each output row is
        # the mean of the projected value rows
        rng = np.random.default_rng(3)
        v = rng.standard_normal((3, 2))
        out = scaled_dot_attention(Tensor(np.zeros((2, 2))), Tensor(rng.standard_normal((3, 2)) * 0),
                                   Tensor(v))
        npt.assert_allclose(out.data, np.tile(v.mean(axis=0), (2, 1)), atol=1e-12)

    def test_dead_attention_leaves_layer_normed_queries(self):
        rng = np.random.default_rng(4)
        d = 4
        layer = make_layer(d, 2, rng)
        layer.wo = Tensor(np.zeros((d, d)))
        x_q = Tensor(rng.standard_normal((3, d)))
        text = Tensor(rng.standard_normal((5, d)))
        out = co_attention(x_q, text, layer)
        expect = ad.layer_norm(x_q, Tensor(np.ones(d)), Tensor(np.zeros(d)))
        npt.assert_allclose(out.data, expect.data, atol=1e-12)

    def test_two_heads_match_per_head_oracle(self):
        rng = np.random.default_rng(5)
        d, heads, n, m = 4, 2, 2, 3
        layer = make_layer(d, heads, rng)
        x_q = rng.standard_normal((n, d))
        text = rng.standard_normal((m, d))
        out = co_attention(Tensor(x_q), Tensor(text), layer)

        dh = d // heads
        head_outs = []
        for h in range(heads):
            lo, hi = h * dh, (h + 1) * dh
            head_outs.append(attention_oracle(
                x_q @ layer.wq.data[:, lo:hi],
                text @ layer.wk.data[:, lo:hi],
                text @ layer.wv.data[:, lo:hi]))
        attended = np.concatenate(head_outs, axis=1) @ layer.wo.data
        expect = ad.layer_norm(Tensor(attended + x_q),
                               layer.attn_gain, layer.attn_shift).data
        assert np.max(np.abs(out.data - expect)) < 1e-10

    def test_token_permutation_invariance(self):
        rng = np.random.default_rng(6)
        layer = make_layer(6, 3, rng)
        x_q = Tensor(rng.standard_normal((4, 6)))
        text = rng.standard_normal((5, 6))
        out = co_attention(x_q, Tensor(text), layer)
        perm = rng.permutation(5)
        out_permuted = co_attention(x_q, Tensor(text[perm]), layer)
        npt.assert_allclose(out_permuted.data, out.data, atol=1e-12)

    def test_indivisible_heads_rejected(self):
        rng = np.random.default_rng(7)
        with pytest.raises(ConfigurationError):
            make_layer(5, 2, rng)


class TestFusionLayer:
    def test_zero_ffn_passes_residual(self):
        rng = np.random.default_rng(8)
        d = 4
        layer = make_layer(d, 2, rng)
        layer.ffn_w2 = Tensor(np.zeros((2 * d, d)))
        x_q = Tensor(rng.standard_normal((3, d)))
        text = Tensor(rng.standard_normal((5, d)))
        attended = co_attention(x_q, text, layer)
        out = fusion_layer(x_q, text, layer)
        expect = ad.layer_norm(attended, layer.ffn_gain, layer.ffn_shift)
        npt.assert_allclose(out.data, expect.data, atol=1e-12)

    def test_reference_shapes(self):
        rng = np.random.default_rng(9)
        layer = make_layer(256, 4, rng, d_ff=1024, scale=0.05)
        out = fusion_layer(Tensor(rng.standard_normal((12, 256))),
                           Tensor(rng.standard_normal((160, 256))), layer)
        assert out.shape == (12, 256)

    def test_gradient_through_one_layer(self):
        rng = np.random.default_rng(10)
        d = 4
        layer = make_layer(d, 2, rng, requires_grad=True)
        x_q = Tensor(rng.standard_normal((2, d)))
        text = Tensor(rng.standard_normal((3, d)))
        target = Tensor(rng.standard_normal((2, d)))

        def f():
            out = fusion_layer(x_q, text, layer)
            diff = ad.add(out, ad.scale(target, -1.0))
            return ad.sum_all(ad.mul(diff, diff))
        assert ad.grad_check(f, layer_params(layer)) < 1e-5

    def test_training_dropout_is_seed_reproducible(self):
        rng = np.random.default_rng(11)
        d = 4
        layer = make_layer(d, 2, rng)
        x_q = Tensor(rng.standard_normal((3, d)))
        text = Tensor(rng.standard_normal((4, d)))
        a = fusion_layer(x_q, text, layer, 0.5, np.random.default_rng(42), training=True)
        b = fusion_layer(x_q, text, layer, 0.5, np.random.default_rng(42), training=True)
        npt.assert_array_equal(a.data, b.data)


class TestFuse:
    def test_single_layer_stack_equals_one_call(self):
        rng = np.random.default_rng(12)
        layer = make_layer(4, 2, rng)
        x = Tensor(rng.standard_normal((3, 4)))
        text = Tensor(rng.standard_normal((5, 4)))
        npt.assert_array_equal(fuse(x, text, [layer]).data,
                               fusion_layer(x, text, layer).data)

    def test_two_layers_equal_manual_composition(self):
        rng = np.random.default_rng(13)
        layers = [make_layer(4, 2, rng), make_layer(4, 2, rng)]
        x = Tensor(rng.standard_normal((3, 4)))
        text = Tensor(rng.standard_normal((5, 4)))
        manual = fusion_layer(fusion_layer(x, text, layers[0]), text, layers[1])
        npt.assert_array_equal(fuse(x, text, layers).data, manual.data)

    def test_default_depth_reference_shapes(self):
        rng = np.random.default_rng(14)
        layers = [make_layer(256, 4, rng, d_ff=1024, scale=0.05) for _ in range(3)]
        out = fuse(Tensor(rng.standard_normal((12, 256))),
                   Tensor(rng.standard_normal((160, 256))), layers)
        assert out.shape == (12, 256)

    def test_shape_preserved_at_any_depth(self):
        rng = np.random.default_rng(15)
        x = Tensor(rng.standard_normal((5, 6)))
        text = Tensor(rng.standard_normal((7, 6)))
        for depth in (1, 2, 4):
            layers = [make_layer(6, 2, rng) for _ in range(depth)]
            assert fuse(x, text, layers).shape == (5, 6)

    def test_empty_stack_rejected(self):
        with pytest.raises(ConfigurationError):
            fuse(Tensor(np.zeros((2, 2))), Tensor(np.zeros((2, 2))), [])

    def test_full_stack_gradient(self):
        rng = np.random.default_rng(16)
        d = 4
        layers = [make_layer(d, 2, rng, requires_grad=True) for _ in range(2)]
        x = Tensor(rng.standard_normal((2, d)))
        text = Tensor(rng.standard_normal((3, d)))
        target = Tensor(rng.standard_normal((2, d)))
        params = [p for layer in layers for p in layer_params(layer)]

        def f():
            out = fuse(x, text, layers)
            diff = ad.add(out, ad.scale(target, -1.0))
            return ad.sum_all(ad.mul(diff, diff))
        assert ad.grad_check(f, params) < 1e-4
