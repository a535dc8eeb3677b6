"""Swin V2 style transformer layer over 1D token windows

The STL2 block attends within windows of a token sequence using scaled cosine
similarity, adds a positional bias generated by a small MLP from log-spaced
relative offsets, and normalizes each sublayer's output before the residual
sum (post-normalization).
"""

import functools
import logging
import math
from dataclasses import dataclass

import numpy as np

from errors import ShapeError
from network.layers import (
    LayerNormParams,
    LinearLayer,
    WindowSpec,
    layer_norm,
    linear,
    mlp,
    shift_mask,
    window_partition,
    window_reverse,
)
from tensor_core.tensor import (
    Tensor,
    clamp_min,
    gelu,
    l2_norm,
    matmul,
    permute,
    reshape,
    softmax,
)

logger = logging.getLogger(__name__)

TAU_MIN = 0.01
COSINE_EPS = 1e-12
BIAS_HIDDEN = 64


@dataclass
class CosineAttentionParams:
    """Projections, per-head log-temperature and the bias MLP of one attention layer"""

    qkv: LinearLayer
    proj: LinearLayer
    log_tau: Tensor
    bias_fc1: LinearLayer
    bias_fc2: LinearLayer
    heads: int
    tau_min: float = TAU_MIN

    @classmethod
    def create(cls, factory, name, dim, heads, bias_hidden=BIAS_HIDDEN, tau_min=TAU_MIN, zero_proj=False):
        return cls(
            qkv=LinearLayer.create(factory, f"{name}.qkv", dim, 3 * dim),
            proj=LinearLayer.create(factory, f"{name}.proj", dim, dim, zero=zero_proj),
            log_tau=factory.zeros(f"{name}.log_tau", (heads,)),
            bias_fc1=LinearLayer.create(factory, f"{name}.bias_mlp.fc1", 1, bias_hidden),
            bias_fc2=LinearLayer.create(factory, f"{name}.bias_mlp.fc2", bias_hidden, heads),
            heads=heads,
            tau_min=tau_min,
        )


@dataclass
class Stl2Params:
    """One STL2 block: window attention and MLP, each followed by a layer norm"""

    attn: CosineAttentionParams
    norm1: LayerNormParams
    fc1: LinearLayer
    fc2: LinearLayer
    norm2: LayerNormParams

    @classmethod
    def create(cls, factory, name, dim, heads, mlp_ratio=2.0, bias_hidden=BIAS_HIDDEN, tau_min=TAU_MIN):
        hidden = max(1, int(round(dim * mlp_ratio)))
        return cls(
            attn=CosineAttentionParams.create(factory, f"{name}.attn", dim, heads, bias_hidden, tau_min),
            norm1=LayerNormParams.create(factory, f"{name}.norm1", dim),
            fc1=LinearLayer.create(factory, f"{name}.mlp.fc1", dim, hidden),
            fc2=LinearLayer.create(factory, f"{name}.mlp.fc2", hidden, dim),
            norm2=LayerNormParams.create(factory, f"{name}.norm2", dim),
        )


@functools.lru_cache(maxsize=64)
def relative_coordinate_table(window):
    """
    Log-spaced relative offsets for every ordered token pair of a window

    Entry ``i*w + j`` holds sign(i-j)·log2(1+|i-j|) / log2(w), so values lie in
    [-1, 1]. Shape is ``[w*w, 1]``.
    """
    offsets = np.arange(window)[:, None] - np.arange(window)[None, :]
    table = np.sign(offsets) * np.log2(1.0 + np.abs(offsets))
    if window > 1:
        table = table / np.log2(float(window))
    table = table.reshape(window * window, 1)
    table.setflags(write=False)
    return table


def positional_bias(table, fc1: LinearLayer, fc2: LinearLayer, heads):
    """Bias ``[heads, w, w]`` produced by the MLP from a relative coordinate table"""
    window = int(round(math.sqrt(table.shape[0])))
    values = linear(gelu(linear(Tensor(table), fc1)), fc2)
    return permute(reshape(values, (window, window, heads)), (2, 0, 1))


def effective_tau(log_tau, tau_min=TAU_MIN):
    """Temperature exp(log_tau), floored at ``tau_min``"""
    return clamp_min(log_tau.exp(), tau_min)


def _normalize_rows(x):
    return x / clamp_min(l2_norm(x, axis=-1, keepdims=True), COSINE_EPS)


def cosine_attention(q, k, v, tau, bias=None, mask=None):
    """
    Scaled cosine attention per head

    Args:
        q, k, v: ``[N, heads, T, hd]`` with N = batch * windows
        tau: ``[heads]`` effective temperatures
        bias: Optional ``[heads, T, T]`` positional bias
        mask: Optional constant ``[nw, T, T]`` additive mask; N must be a
            multiple of nw

    Returns:
        (out ``[N, heads, T, hd]``, attention weights ``[N, heads, T, T]``)
    """
    if q.shape != k.shape or q.shape[:-1] != v.shape[:-1] or q.ndim != 4:
        raise ShapeError(f"cosine_attention: incompatible q/k/v shapes {q.shape}, {k.shape}, {v.shape}")
    n, heads, tokens, _ = q.shape
    cos = matmul(_normalize_rows(q), permute(_normalize_rows(k), (0, 1, 3, 2)))
    logits = cos / reshape(tau, (1, heads, 1, 1))
    if bias is not None:
        logits = logits + reshape(bias, (1, heads, tokens, tokens))
    if mask is not None:
        n_windows = mask.shape[0]
        if n % n_windows:
            raise ShapeError(f"cosine_attention: {n} windows is not a multiple of mask windows {n_windows}")
        masked = reshape(logits, (n // n_windows, n_windows, heads, tokens, tokens))
        masked = masked + Tensor(mask.reshape(1, n_windows, 1, tokens, tokens))
        logits = reshape(masked, (n, heads, tokens, tokens))
    weights = softmax(logits, axis=-1)
    return matmul(weights, v), weights


def _merge_heads(x):
    n, heads, tokens, hd = x.shape
    return reshape(permute(x, (0, 2, 1, 3)), (n, tokens, heads * hd))


def window_attention(windows, params: CosineAttentionParams, mask=None):
    """
    Multi-head cosine attention inside each window

    Args:
        windows: ``[N, T, d]``
        params: Attention parameters
        mask: Optional ``[nw, T, T]`` shift mask

    Returns:
        (projected output ``[N, T, d]``, attention weights ``[N, heads, T, T]``)
    """
    n, tokens, dim = windows.shape
    heads = params.heads
    if dim % heads:
        raise ShapeError(f"embed dim {dim} not divisible by {heads} heads")
    qkv = linear(windows, params.qkv)
    qkv = permute(reshape(qkv, (n, tokens, 3, heads, dim // heads)), (2, 0, 3, 1, 4))
    q = reshape(qkv[0:1], (n, heads, tokens, dim // heads))
    k = reshape(qkv[1:2], (n, heads, tokens, dim // heads))
    v = reshape(qkv[2:3], (n, heads, tokens, dim // heads))
    bias = positional_bias(relative_coordinate_table(tokens), params.bias_fc1, params.bias_fc2, heads)
    tau = effective_tau(params.log_tau, params.tau_min)
    out, weights = cosine_attention(q, k, v, tau, bias=bias, mask=mask)
    return linear(_merge_heads(out), params.proj), weights


def stl2_block(x, params: Stl2Params, spec: WindowSpec, return_weights=False):
    """
    One STL2 layer on ``[B, L, d]``

    x + LN(attention(x)), then + LN(MLP(.)); the shape is preserved.
    """
    if x.ndim != 3:
        raise ShapeError(f"stl2_block expects [B, L, d], got {x.shape}")
    windows, layout = window_partition(x, spec)
    fitted = layout.spec
    mask = None
    if fitted.shift:
        mask = shift_mask(layout.padded_length, fitted.window, fitted.shift)
    attended, weights = window_attention(windows, params.attn, mask)
    x = x + layer_norm(window_reverse(attended, layout), params.norm1)
    x = x + layer_norm(mlp(x, params.fc1, params.fc2), params.norm2)
    if return_weights:
        return x, weights, layout
    return x


def dense_attention_map(x, params: Stl2Params, spec: WindowSpec):
    """
    Expand the windowed attention weights of an STL2 block into ``[B, heads, L, L]``

    Entry ``[b, h, i, j]`` is how much token i attends to token j; pairs in
    different windows get zero. Weight falling on padding tokens is dropped.
    """
    _, weights, layout = stl2_block(x, params, spec, return_weights=True)
    batch, length = x.shape[0], x.shape[1]
    w = layout.spec.window
    shift = layout.spec.shift
    n_windows = layout.n_windows
    heads = weights.shape[1]
    dense = np.zeros((batch, heads, length, length))
    per_batch = weights.data.reshape(batch, n_windows, heads, w, w)
    for widx in range(n_windows):
        positions = (widx * w + np.arange(w) + shift) % layout.padded_length
        valid = positions < length
        rows = positions[valid]
        block = per_batch[:, widx][:, :, valid][:, :, :, valid]
        dense[:, :, rows[:, None], rows[None, :]] = block
    return dense


# Global-token transformer used by the ViT ablation


@dataclass
class VitBlockParams:
    """Pre-norm transformer block with dot-product attention over all tokens"""

    norm1: LayerNormParams
    qkv: LinearLayer
    proj: LinearLayer
    norm2: LayerNormParams
    fc1: LinearLayer
    fc2: LinearLayer
    heads: int

    @classmethod
    def create(cls, factory, name, dim, heads, mlp_ratio=2.0):
        hidden = max(1, int(round(dim * mlp_ratio)))
        return cls(
            norm1=LayerNormParams.create(factory, f"{name}.norm1", dim),
            qkv=LinearLayer.create(factory, f"{name}.attn.qkv", dim, 3 * dim),
            proj=LinearLayer.create(factory, f"{name}.attn.proj", dim, dim),
            norm2=LayerNormParams.create(factory, f"{name}.norm2", dim),
            fc1=LinearLayer.create(factory, f"{name}.mlp.fc1", dim, hidden),
            fc2=LinearLayer.create(factory, f"{name}.mlp.fc2", hidden, dim),
            heads=heads,
        )


def global_attention(x, params: VitBlockParams):
    """Scaled dot-product attention across every token; returns (out, weights)"""
    batch, tokens, dim = x.shape
    heads = params.heads
    hd = dim // heads
    qkv = permute(reshape(linear(x, params.qkv), (batch, tokens, 3, heads, hd)), (2, 0, 3, 1, 4))
    q = reshape(qkv[0:1], (batch, heads, tokens, hd))
    k = reshape(qkv[1:2], (batch, heads, tokens, hd))
    v = reshape(qkv[2:3], (batch, heads, tokens, hd))
    logits = matmul(q, permute(k, (0, 1, 3, 2))) * (1.0 / math.sqrt(hd))
    weights = softmax(logits, axis=-1)
    return linear(_merge_heads(matmul(weights, v)), params.proj), weights


def vit_block(x, params: VitBlockParams, return_weights=False):
    """x + attention(LN(x)), then + MLP(LN(.))"""
    attended, weights = global_attention(layer_norm(x, params.norm1), params)
    x = x + attended
    x = x + mlp(layer_norm(x, params.norm2), params.fc1, params.fc2)
    if return_weights:
        return x, weights
    return x


@functools.lru_cache(maxsize=16)
def sinusoidal_positions(tokens, dim):
    """Fixed sine/cosine position codes ``[tokens, dim]``"""
    positions = np.arange(tokens)[:, None]
    rates = np.exp(-math.log(10000.0) * (2 * (np.arange(dim) // 2)) / dim)[None, :]
    angles = positions * rates
    codes = np.where(np.arange(dim)[None, :] % 2 == 0, np.sin(angles), np.cos(angles))
    codes.setflags(write=False)
    return codes
