"""
Neural network building blocks on top of the autodiff tensors: a parameter
registry, Linear, LayerNorm, MLP, multi-head attention, transformer blocks and
the frequency-guided attention blocks.
"""

import math

import numpy as np

from .autodiff import Tensor, gelu, layer_norm, matmul, softmax
from .errors import ShapeError


class Parameter(Tensor):
    """A learnable leaf tensor."""

    def __init__(self, data, name=None, dtype=None):
        super().__init__(data, requires_grad=True, name=name, dtype=dtype)


class Module:
    """Base class: parameters and submodules are discovered from attributes in assignment order."""

    def named_parameters(self, prefix=""):
        """
        Yield (dotted name, Parameter) for every parameter below this module.
        """
        for attr, value in vars(self).items():
            name = f"{prefix}{attr}"
            if isinstance(value, Parameter):
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{name}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def parameters(self):
        """name -> Parameter, with each Parameter's name set to its dotted path."""
        params = {}
        for name, p in self.named_parameters():
            p.name = name
            params[name] = p
        return params

    def zero_grad(self):
        for _, p in self.named_parameters():
            p.zero_grad()

    def num_parameters(self):
        return sum(p.size for _, p in self.named_parameters())

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def xavier_uniform(rng, fan_in, fan_out, dtype=None):
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_out, fan_in)).astype(dtype or np.float64)


class Linear(Module):
    """y = x W^T + b, weight stored as [out_features, in_features]."""

    def __init__(self, in_features, out_features, rng, bias=True, dtype=None):
        self.in_features = in_features
        self.out_features = out_features
        self.weight = Parameter(xavier_uniform(rng, in_features, out_features), dtype=dtype)
        if bias:
            self.bias = Parameter(np.zeros(out_features), dtype=dtype)
        else:
            self.bias = None

    def forward(self, x):
        if x.shape[-1] != self.in_features:
            raise ShapeError(f"Linear({self.in_features}, {self.out_features}) got input of shape {x.shape}")
        y = matmul(x, self.weight.swap_last())
        return y + self.bias if self.bias is not None else y


class LayerNorm(Module):
    def __init__(self, dim, eps=1e-5, dtype=None):
        self.eps = eps
        self.gain = Parameter(np.ones(dim), dtype=dtype)
        self.bias = Parameter(np.zeros(dim), dtype=dtype)

    def forward(self, x):
        return layer_norm(x, self.gain, self.bias, self.eps)


class MLP(Module):
    def __init__(self, dim, ratio, rng, dtype=None):
        hidden = int(dim * ratio)
        self.fc1 = Linear(dim, hidden, rng, dtype=dtype)
        self.fc2 = Linear(hidden, dim, rng, dtype=dtype)

    def forward(self, x):
        return self.fc2(gelu(self.fc1(x)))


def split_heads(x, heads):
    """[n, d] -> [heads, n, d / heads]"""
    n, d = x.shape
    return x.reshape(n, heads, d // heads).transpose(1, 0, 2)


def merge_heads(x):
    """[heads, n, dk] -> [n, heads * dk]"""
    heads, n, dk = x.shape
    return x.transpose(1, 0, 2).reshape(n, heads * dk)


def guided_attention(q, k_spatial, v_spatial, k_freq=None, v_freq=None, heads=1):
    """
    softmax(Q (K_s + K_f)^T / sqrt(d_k)) (V_s + V_f), applied per head.

    With k_freq and v_freq omitted this is plain multi-head attention.

    Args:
        q (Tensor): [n, d] queries
        k_spatial (Tensor): [n, d]
        v_spatial (Tensor): [n, d]
        k_freq (Tensor, optional): [n, d] frequency keys
        v_freq (Tensor, optional): [n, d] frequency values
        heads (int): Number of heads; d_k = d / heads

    Returns:
        tuple: (output [n, d], attention weights [heads, n, n])
    """
    n, d = q.shape
    if d % heads:
        raise ShapeError(f"{heads} heads do not divide dimension {d}")
    for other in (k_spatial, v_spatial, k_freq, v_freq):
        if other is not None and other.shape != (n, d):
            raise ShapeError(f"attention inputs disagree: queries {q.shape}, got {other.shape}; "
                             f"spatial and frequency token counts must match")
    k = k_spatial + k_freq if k_freq is not None else k_spatial
    v = v_spatial + v_freq if v_freq is not None else v_spatial
    qh, kh, vh = split_heads(q, heads), split_heads(k, heads), split_heads(v, heads)
    scores = matmul(qh, kh.swap_last()) * (1.0 / math.sqrt(d // heads))
    weights = softmax(scores, axis=-1)
    return merge_heads(matmul(weights, vh)), weights


class Attention(Module):
    """Multi-head self-attention with separate Q, K, V projections."""

    def __init__(self, dim, heads, rng, dtype=None):
        if dim % heads:
            raise ShapeError(f"{heads} heads do not divide dimension {dim}")
        self.heads = heads
        self.q = Linear(dim, dim, rng, dtype=dtype)
        self.k = Linear(dim, dim, rng, dtype=dtype)
        self.v = Linear(dim, dim, rng, dtype=dtype)
        self.proj = Linear(dim, dim, rng, dtype=dtype)

    def forward(self, x):
        out, _ = guided_attention(self.q(x), self.k(x), self.v(x), heads=self.heads)
        return self.proj(out)


class Block(Module):
    """Pre-norm transformer block."""

    def __init__(self, dim, heads, mlp_ratio, rng, dtype=None):
        self.norm1 = LayerNorm(dim, dtype=dtype)
        self.attn = Attention(dim, heads, rng, dtype=dtype)
        self.norm2 = LayerNorm(dim, dtype=dtype)
        self.mlp = MLP(dim, mlp_ratio, rng, dtype=dtype)

    def forward(self, x):
        x = x + self.attn(self.norm1(x))
        return x + self.mlp(self.norm2(x))


class GuidedBlock(Module):
    """
    Dual-domain guidance block.

    The first block of a chain adds frequency keys and values to the spatial ones.
    Later blocks keep the spatial tokens as queries and use the previous output plus
    the spatial tokens as keys and values.
    """

    def __init__(self, dim, heads, mlp_ratio, rng, first, dtype=None):
        self.first = first
        self.heads = heads
        self.norm1 = LayerNorm(dim, dtype=dtype)
        self.attn = Attention(dim, heads, rng, dtype=dtype)
        if first:
            self.norm_freq = LayerNorm(dim, dtype=dtype)
            self.k_freq = Linear(dim, dim, rng, dtype=dtype)
            self.v_freq = Linear(dim, dim, rng, dtype=dtype)
        self.norm2 = LayerNorm(dim, dtype=dtype)
        self.mlp = MLP(dim, mlp_ratio, rng, dtype=dtype)

    def attend(self, spatial, previous=None, freq=None):
        """Attention output (before projection and residual) and weights."""
        s = self.norm1(spatial)
        q = self.attn.q(s)
        if self.first:
            f = self.norm_freq(freq)
            return guided_attention(q, self.attn.k(s), self.attn.v(s),
                                    self.k_freq(f), self.v_freq(f), heads=self.heads)
        kv = self.norm1(previous + spatial)
        return guided_attention(q, self.attn.k(kv), self.attn.v(kv), heads=self.heads)

    def forward(self, spatial, previous=None, freq=None):
        if self.first and freq is None:
            raise ShapeError("the first guidance block needs frequency tokens")
        out, _ = self.attend(spatial, previous, freq)
        x = (spatial if self.first else previous) + self.attn.proj(out)
        return x + self.mlp(self.norm2(x))


def sincos_1d(dim, positions):
    omega = np.arange(dim // 2, dtype=np.float64) / (dim / 2.0)
    omega = 1.0 / 10000 ** omega
    out = np.outer(np.asarray(positions, dtype=np.float64).reshape(-1), omega)
    return np.concatenate([np.sin(out), np.cos(out)], axis=1)


def sincos_2d(dim, rows, cols):
    """
    Fixed 2D sine-cosine position table in raster order.

    Returns:
        numpy.ndarray: [rows * cols, dim]
    """
    if dim % 4:
        raise ShapeError(f"2D sin-cos embedding needs a dimension divisible by 4, got {dim}")
    grid_r, grid_c = np.meshgrid(np.arange(rows), np.arange(cols), indexing="ij")
    return np.concatenate([sincos_1d(dim // 2, grid_r), sincos_1d(dim // 2, grid_c)], axis=1)
