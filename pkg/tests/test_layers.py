"""
Tests for the parameter registry, dense layers, attention and guidance blocks.
"""

import math

import numpy as np
import pytest

from thermask.autodiff import Tensor
from thermask.errors import ShapeError
from thermask.gradcheck import grad_check
from thermask.layers import (Attention, Block, GuidedBlock, LayerNorm, Linear, Module, Parameter,
                             guided_attention, merge_heads, sincos_2d, split_heads)
from thermask.model import ddg_forward


def t(values):
    return Tensor(np.asarray(values, dtype=np.float64), dtype=np.float64)


class TestModule:

    def test_parameters_named_by_path(self, rng):
        class Pair(Module):
            def __init__(self):
                self.first = Linear(3, 2, rng, dtype=np.float64)
                self.stack = [LayerNorm(2, dtype=np.float64), Linear(2, 2, rng, bias=False, dtype=np.float64)]
                self.scale = Parameter(np.ones(1), dtype=np.float64)

        params = Pair().parameters()
        assert list(params) == ["first.weight", "first.bias", "stack.0.gain", "stack.0.bias",
                                "stack.1.weight", "scale"]
        assert all(p.name == name for name, p in params.items())

    def test_num_parameters(self, rng):
        assert Linear(5, 3, rng).num_parameters() == 18

    def test_zero_grad(self, rng):
        layer = Linear(2, 2, rng, dtype=np.float64)
        layer.weight.grad = np.ones((2, 2))
        layer.zero_grad()
        assert layer.weight.grad is None


class TestLinear:

    def test_forward(self, rng):
        layer = Linear(3, 2, rng, dtype=np.float64)
        x = rng.normal(size=(4, 3))
        expected = x @ layer.weight.data.T + layer.bias.data
        np.testing.assert_allclose(layer(t(x)).data, expected, atol=1e-12)

    def test_xavier_bound(self, rng):
        layer = Linear(20, 30, rng)
        assert np.abs(layer.weight.data).max() <= math.sqrt(6.0 / 50)
        assert layer.weight.shape == (30, 20)

    def test_wrong_input_width_raises(self, rng):
        with pytest.raises(ShapeError):
            Linear(3, 2, rng)(t(np.ones((1, 4))))

    def test_gradients(self, rng):
        layer = Linear(3, 2, rng, dtype=np.float64)
        x = t(rng.normal(size=(5, 3)))
        report = grad_check(lambda: (layer(x) ** 2).sum(), layer.parameters(), tol=1e-5)
        assert report.passed


class TestAttention:

    def test_heads_round_trip(self, rng):
        x = t(rng.normal(size=(5, 8)))
        np.testing.assert_array_equal(merge_heads(split_heads(x, 4)).data, x.data)

    def test_matches_term_by_term_oracle(self, rng):
        n, d = 4, 6
        q, ks, vs, kf, vf = (rng.normal(size=(n, d)) for _ in range(5))
        out, weights = guided_attention(t(q), t(ks), t(vs), t(kf), t(vf), heads=1)

        expected = np.zeros((n, d))
        for i in range(n):
            scores = [sum(q[i, c] * (ks[j, c] + kf[j, c]) for c in range(d)) / math.sqrt(d) for j in range(n)]
            top = max(scores)
            exps = [math.exp(s - top) for s in scores]
            total = sum(exps)
            for j in range(n):
                expected[i] += exps[j] / total * (vs[j] + vf[j])
        np.testing.assert_allclose(out.data, expected, rtol=0, atol=1e-10)
        np.testing.assert_allclose(weights.data.sum(axis=-1), 1.0, atol=1e-10)

    def test_without_frequency_is_plain_attention(self, rng):
        q, k, v = (rng.normal(size=(5, 8)) for _ in range(3))
        out, _ = guided_attention(t(q), t(k), t(v), heads=2)
        zeros = t(np.zeros((5, 8)))
        guided, _ = guided_attention(t(q), t(k), t(v), zeros, zeros, heads=2)
        np.testing.assert_array_equal(out.data, guided.data)

    def test_token_count_mismatch_raises(self, rng):
        x = t(rng.normal(size=(4, 4)))
        with pytest.raises(ShapeError):
            guided_attention(x, x, x, t(rng.normal(size=(3, 4))), t(rng.normal(size=(3, 4))))

    def test_heads_must_divide_dimension(self, rng):
        with pytest.raises(ShapeError):
            Attention(6, 4, rng)

    def test_block_gradients(self, rng):
        block = Block(4, 2, 2.0, rng, dtype=np.float64)
        x = t(rng.normal(size=(3, 4)))
        report = grad_check(lambda: (block(x) ** 2).mean(), block.parameters(), tol=1e-5)
        assert report.passed


class TestGuidedBlocks:

    def chain(self, rng, count=2, dim=8, heads=2):
        return [GuidedBlock(dim, heads, 2.0, rng, first=j == 0, dtype=np.float64) for j in range(count)]

    def test_zero_frequency_projections_give_self_attention(self, rng):
        (guided,) = self.chain(rng, count=1)
        for layer in (guided.k_freq, guided.v_freq):
            layer.weight.data = np.zeros_like(layer.weight.data)
            layer.bias.data = np.zeros_like(layer.bias.data)
        plain = Block(8, 2, 2.0, rng, dtype=np.float64)
        plain.norm1, plain.attn, plain.norm2, plain.mlp = guided.norm1, guided.attn, guided.norm2, guided.mlp

        spatial, freq = t(rng.normal(size=(6, 8))), t(rng.normal(size=(6, 8)))
        np.testing.assert_allclose(ddg_forward([guided], spatial, freq).data, plain(spatial).data,
                                   rtol=0, atol=1e-9)

    def test_later_blocks_attend_to_previous_plus_spatial(self, rng):
        first, second = self.chain(rng)
        spatial, freq = t(rng.normal(size=(5, 8))), t(rng.normal(size=(5, 8)))
        previous = first(spatial, freq=freq)
        out, weights = second.attend(spatial, previous=previous)

        s = second.norm1(spatial)
        kv = second.norm1(previous + spatial)
        reference, _ = guided_attention(second.attn.q(s), second.attn.k(kv), second.attn.v(kv), heads=2)
        np.testing.assert_allclose(out.data, reference.data, atol=1e-12)
        np.testing.assert_allclose(weights.data.sum(axis=-1), 1.0, atol=1e-10)
        np.testing.assert_allclose(ddg_forward([first, second], spatial, freq).data,
                                   second(spatial, previous=previous).data, atol=1e-12)

    def test_first_block_needs_frequency_tokens(self, rng):
        (first,) = self.chain(rng, count=1)
        with pytest.raises(ShapeError):
            first(t(rng.normal(size=(3, 8))))

    def test_mismatched_streams_raise(self, rng):
        with pytest.raises(ShapeError):
            ddg_forward(self.chain(rng), t(rng.normal(size=(4, 8))), t(rng.normal(size=(5, 8))))

    def test_chain_gradients(self, rng):
        blocks = self.chain(rng, dim=4, heads=1)
        spatial, freq = t(rng.normal(size=(3, 4))), t(rng.normal(size=(3, 4)))
        params = {}
        for j, block in enumerate(blocks):
            params.update({f"{j}.{name}": p for name, p in block.parameters().items()})
        report = grad_check(lambda: (ddg_forward(blocks, spatial, freq) ** 2).mean(), params, tol=1e-5)
        assert report.passed


class TestPositions:

    def test_shape_and_range(self):
        table = sincos_2d(16, 3, 5)
        assert table.shape == (15, 16)
        assert np.abs(table).max() <= 1.0

    def test_origin_row(self):
        table = sincos_2d(8, 2, 2)
        np.testing.assert_array_equal(table[0], [0, 0, 1, 1, 0, 0, 1, 1])

    def test_rows_are_distinct(self):
        table = sincos_2d(8, 4, 4)
        assert len({tuple(np.round(row, 12)) for row in table}) == 16

    def test_dimension_must_divide_by_four(self):
        with pytest.raises(ShapeError):
            sincos_2d(6, 2, 2)
