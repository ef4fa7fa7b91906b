"""Neural building blocks.

All modules take [B, C, H, W] tensors. Residual-style blocks zero-initialize
their final projection so they start as exact identities; remaining weights
keep PyTorch's default Kaiming-uniform fan-in init.
"""

from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError, ShapeError


def zero_init(layer: nn.Module) -> nn.Module:
    nn.init.zeros_(layer.weight)
    if layer.bias is not None:
        nn.init.zeros_(layer.bias)
    return layer


def pixel_unshuffle_nchw(x: torch.Tensor, k: int) -> torch.Tensor:
    """Space-to-depth for [B, C, H, W]; same sub-pixel ordering as the
    data-layer operator (row-major block offsets as the major channel axis)."""
    b, c, h, w = x.shape
    if k < 1 or h % k or w % k:
        raise ShapeError(f"k={k} must divide H={h} and W={w}")
    y = x.reshape(b, c, h // k, k, w // k, k)
    y = y.permute(0, 3, 5, 1, 2, 4)  # [B, k, k, C, H/k, W/k]
    return y.reshape(b, c * k * k, h // k, w // k)


def pixel_shuffle_nchw(x: torch.Tensor, k: int) -> torch.Tensor:
    """Inverse of :func:`pixel_unshuffle_nchw`."""
    b, c, h, w = x.shape
    if k < 1 or c % (k * k):
        raise ShapeError(f"k*k={k * k} must divide C={c}")
    c_out = c // (k * k)
    y = x.reshape(b, k, k, c_out, h, w)
    y = y.permute(0, 3, 4, 1, 5, 2)  # [B, C', H, k, W, k]
    return y.reshape(b, c_out, h * k, w * k)


def upsample_nearest(x: torch.Tensor, k: int) -> torch.Tensor:
    return F.interpolate(x, scale_factor=k, mode="nearest")


def frequency_split(x: torch.Tensor, k: int) -> tuple[torch.Tensor, torch.Tensor]:
    """Average-pooled low-frequency part plus the full-resolution residual.

    The nearest upsample makes the reconstruction identity
    upsample(low) + high == x hold to float rounding.
    """
    _, _, h, w = x.shape
    if k < 1 or h % k or w % k:
        raise ShapeError(f"pool kernel k={k} must divide H={h} and W={w}")
    low = F.avg_pool2d(x, k)
    high = x - upsample_nearest(low, k)
    return low, high


def simple_gate(x: torch.Tensor) -> torch.Tensor:
    """Split channels in half and multiply the halves elementwise."""
    if x.shape[1] % 2:
        raise ShapeError(f"simple_gate needs an even channel count, got {x.shape[1]}")
    a, b = x.chunk(2, dim=1)
    return a * b


class LayerNorm2d(nn.Module):
    """Channel-wise layer norm at every spatial position, with affine params."""

    def __init__(self, channels: int, eps: float = 1e-6):
        super().__init__()
        self.weight = nn.Parameter(torch.ones(channels))
        self.bias = nn.Parameter(torch.zeros(channels))
        self.eps = eps

    def forward(self, x):
        mu = x.mean(dim=1, keepdim=True)
        var = x.var(dim=1, keepdim=True, unbiased=False)
        x = (x - mu) / torch.sqrt(var + self.eps)
        return x * self.weight[None, :, None, None] + self.bias[None, :, None, None]


class ResidualBlock(nn.Module):
    """conv3x3 -> ReLU -> conv3x3 (zero-init) with identity skip."""

    def __init__(self, channels: int):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1)
        self.conv2 = zero_init(nn.Conv2d(channels, channels, 3, padding=1))

    def forward(self, x):
        return x + self.conv2(F.relu(self.conv1(x)))


class ChannelAttention(nn.Module):
    """Squeeze-excitation gating: global pool -> bottleneck -> sigmoid scale."""

    def __init__(self, channels: int, reduction: int = 4):
        super().__init__()
        hidden = max(channels // reduction, 1)
        self.fc1 = nn.Conv2d(channels, hidden, 1)
        self.fc2 = nn.Conv2d(hidden, channels, 1)

    def forward(self, x):
        g = x.mean(dim=(2, 3), keepdim=True)
        g = torch.sigmoid(self.fc2(F.relu(self.fc1(g))))
        return x * g


class TransposedAttention(nn.Module):
    """Channel-wise multi-head self-attention over an L2-normalized spatial
    contraction; the attention matrix is (C/heads) x (C/heads) per head, so
    cost stays independent of building a spatial-by-spatial map."""

    def __init__(self, channels: int, heads: int):
        super().__init__()
        if channels % heads:
            raise ConfigError(f"channels={channels} not divisible by heads={heads}")
        self.heads = heads
        self.norm = LayerNorm2d(channels)
        self.temperature = nn.Parameter(torch.ones(heads, 1, 1))
        self.qkv = nn.Conv2d(channels, channels * 3, 1)
        self.qkv_dw = nn.Conv2d(channels * 3, channels * 3, 3, padding=1, groups=channels * 3)
        self.project_out = zero_init(nn.Conv2d(channels, channels, 1))

    def attention_map(self, x):
        b, c, h, w = x.shape
        q, k, v = self.qkv_dw(self.qkv(self.norm(x))).chunk(3, dim=1)
        q = q.reshape(b, self.heads, c // self.heads, h * w)
        k = k.reshape(b, self.heads, c // self.heads, h * w)
        v = v.reshape(b, self.heads, c // self.heads, h * w)
        q = F.normalize(q, dim=-1)
        k = F.normalize(k, dim=-1)
        attn = torch.softmax((q @ k.transpose(-2, -1)) * self.temperature, dim=-1)
        return attn, v

    def forward(self, x):
        b, c, h, w = x.shape
        attn, v = self.attention_map(x)
        out = (attn @ v).reshape(b, c, h, w)
        return x + self.project_out(out)


class GatedFFN(nn.Module):
    """Pointwise expansion, channel-split gate, pointwise projection back.

    The hidden width floor(expansion * channels) is rounded down to the
    nearest even integer so the gate can split it.
    """

    def __init__(self, channels: int, expansion: float = 2.66):
        super().__init__()
        hidden = int(expansion * channels)
        hidden -= hidden % 2
        self.norm = LayerNorm2d(channels)
        self.expand = nn.Conv2d(channels, hidden, 1)
        self.project_out = zero_init(nn.Conv2d(hidden // 2, channels, 1))

    def forward(self, x):
        return x + self.project_out(simple_gate(self.expand(self.norm(x))))


class CrossAttention(nn.Module):
    """Single-head fusion of a compact prior into an intermediate feature.

    Queries come from the feature, keys/values from the prior; the attention
    matrix has shape [prior channels x feature channels] and its entries are
    normalized over the prior-channel axis, so every output channel is a
    convex mixture of the value channels. A trainable temperature divides the
    logits. The output projection is zero-initialized, making the block an
    identity on the feature at init.
    """

    def __init__(self, channels: int, prior_channels: int):
        super().__init__()
        self.q = nn.Conv2d(channels, channels, 1)
        self.q_dw = nn.Conv2d(channels, channels, 3, padding=1, groups=channels)
        self.k = nn.Conv2d(prior_channels, prior_channels, 1)
        self.k_dw = nn.Conv2d(prior_channels, prior_channels, 3, padding=1, groups=prior_channels)
        self.v = nn.Conv2d(prior_channels, prior_channels, 1)
        self.v_dw = nn.Conv2d(prior_channels, prior_channels, 3, padding=1, groups=prior_channels)
        self.temperature = nn.Parameter(torch.ones(()))
        self.project_out = zero_init(nn.Conv2d(channels, channels, 1))

    def attention_map(self, x, z):
        b, c, h, w = x.shape
        n = z.shape[1]
        q = self.q_dw(self.q(x)).reshape(b, c, h * w).transpose(1, 2)  # [B, HW, C]
        k = self.k_dw(self.k(z)).reshape(b, n, h * w)  # [B, N, HW]
        v = self.v_dw(self.v(z)).reshape(b, n, h * w).transpose(1, 2)  # [B, HW, N]
        attn = torch.softmax((k @ q) / self.temperature, dim=1)  # [B, N, C]
        return attn, v

    def forward(self, x, z):
        if x.shape[2:] != z.shape[2:]:
            raise ShapeError(
                f"feature {tuple(x.shape[2:])} and prior {tuple(z.shape[2:])} spatial dims differ"
            )
        b, c, h, w = x.shape
        attn, v = self.attention_map(x, z)
        out = (v @ attn).transpose(1, 2).reshape(b, c, h, w)
        return x + self.project_out(out)


class FeatureRefinement(nn.Module):
    """Split features into pooled low-frequency and residual high-frequency
    parts, refine them with attention and convolution respectively, then fuse."""

    def __init__(self, channels: int, heads: int, pool: int = 2, expansion: float = 2.66):
        super().__init__()
        self.pool = pool
        self.entry = ResidualBlock(channels)
        self.high_branch = ResidualBlock(channels)
        self.low_attn = TransposedAttention(channels, heads)
        self.low_ffn = GatedFFN(channels, expansion)
        self.fuse = nn.Conv2d(channels * 2, channels, 1)
        self.channel_attn = ChannelAttention(channels)

    def forward(self, x):
        x = self.entry(x)
        low, high = frequency_split(x, self.pool)
        low = self.low_ffn(self.low_attn(low))
        high = self.high_branch(high)
        fused = self.fuse(torch.cat([high, upsample_nearest(low, self.pool)], dim=1))
        return self.channel_attn(fused)


class PriorIntegration(nn.Module):
    """Feature refinement with the low branch cross-attending to the compact
    prior instead of self-attending; the pool factor matches the prior's
    quarter resolution."""

    def __init__(self, channels: int, prior_channels: int, pool: int = 4, expansion: float = 2.66):
        super().__init__()
        self.pool = pool
        self.entry = ResidualBlock(channels)
        self.high_branch = ResidualBlock(channels)
        self.low_cross = CrossAttention(channels, prior_channels)
        self.low_ffn = GatedFFN(channels, expansion)
        self.fuse = nn.Conv2d(channels * 2, channels, 1)
        self.channel_attn = ChannelAttention(channels)

    def forward(self, x, z):
        if z.shape[2] * self.pool != x.shape[2] or z.shape[3] * self.pool != x.shape[3]:
            raise ShapeError(
                f"prior {tuple(z.shape[2:])} must be the feature {tuple(x.shape[2:])} "
                f"divided by {self.pool}"
            )
        x = self.entry(x)
        low, high = frequency_split(x, self.pool)
        low = self.low_ffn(self.low_cross(low, z))
        high = self.high_branch(high)
        fused = self.fuse(torch.cat([high, upsample_nearest(low, self.pool)], dim=1))
        return self.channel_attn(fused)


def sinusoidal_encoding(t: torch.Tensor, dim: int) -> torch.Tensor:
    """Standard sin/cos positional encoding of integer steps; the slowest
    frequency keeps encodings distinct over any practical step range."""
    half = dim // 2
    freqs = torch.exp(
        -math.log(10000.0) * torch.arange(half, dtype=torch.float64) / max(half - 1, 1)
    ).to(t.dtype)
    args = t[:, None].to(freqs.dtype) * freqs[None, :]
    enc = torch.cat([torch.sin(args), torch.cos(args)], dim=-1)
    if dim % 2:
        enc = torch.cat([enc, torch.zeros_like(enc[:, :1])], dim=-1)
    return enc


class TimeEmbedding(nn.Module):
    """Sinusoidal step encoding -> 2-layer MLP -> zero-initialized per-target
    heads emitting channel-wise (scale, shift) pairs."""

    def __init__(self, dim: int, target_channels: list[int]):
        super().__init__()
        self.dim = dim
        self.mlp = nn.Sequential(nn.Linear(dim, dim), nn.SiLU(), nn.Linear(dim, dim))
        self.heads = nn.ModuleList([zero_init(nn.Linear(dim, 2 * c)) for c in target_channels])

    def forward(self, t, batch: int = 1, dtype=torch.float32):
        if not torch.is_tensor(t):
            t = torch.full((batch,), float(t), dtype=dtype)
        feat = self.mlp(sinusoidal_encoding(t, self.dim).to(dtype))
        out = []
        for head in self.heads:
            gamma, beta = head(feat).chunk(2, dim=-1)
            out.append((gamma, beta))
        return out


def modulate(x: torch.Tensor, gamma: torch.Tensor, beta: torch.Tensor) -> torch.Tensor:
    return x * (1.0 + gamma[:, :, None, None]) + beta[:, :, None, None]


class NAFBlock(nn.Module):
    """Activation-free block: a simplified-channel-attention sublayer and a
    gated feed-forward sublayer, each normalized, time-modulated, and gated
    with a channel-split product. Final projections are zero-initialized, so
    with zero time modulation the block is an identity."""

    def __init__(self, channels: int, dw_expansion: int = 2, ffn_expansion: int = 2):
        super().__init__()
        dw = channels * dw_expansion
        ff = channels * ffn_expansion
        self.norm1 = LayerNorm2d(channels)
        self.conv_in = nn.Conv2d(channels, dw, 1)
        self.conv_dw = nn.Conv2d(dw, dw, 3, padding=1, groups=dw)
        self.sca = nn.Conv2d(dw // 2, dw // 2, 1)
        self.conv_out = zero_init(nn.Conv2d(dw // 2, channels, 1))
        self.norm2 = LayerNorm2d(channels)
        self.ffn_in = nn.Conv2d(channels, ff, 1)
        self.ffn_out = zero_init(nn.Conv2d(ff // 2, channels, 1))

    def forward(self, x, mods):
        (g1, b1), (g2, b2) = mods
        h = modulate(self.norm1(x), g1, b1)
        h = simple_gate(self.conv_dw(self.conv_in(h)))
        h = h * self.sca(h.mean(dim=(2, 3), keepdim=True))
        x = x + self.conv_out(h)
        h = modulate(self.norm2(x), g2, b2)
        h = simple_gate(self.ffn_in(h))
        return x + self.ffn_out(h)


class AlignmentModule(nn.Module):
    """Implicit alignment by spatial attention against the reference frame.

    One shared conv embeds each frame; each non-reference embedding is
    concatenated with the reference's, passed through a shared two-conv
    sigmoid gate, and scaled by it; the three results merge into one feature
    map. Sharing the gate makes identical frames produce identical maps.
    """

    def __init__(self, in_channels: int, channels: int):
        super().__init__()
        self.frame_conv = nn.Conv2d(in_channels, channels, 3, padding=1)
        self.att1 = nn.Conv2d(channels * 2, channels * 2, 3, padding=1)
        self.att2 = nn.Conv2d(channels * 2, channels, 3, padding=1)
        self.merge = nn.Conv2d(channels * 3, channels, 3, padding=1)

    def attention_map(self, feat, ref_feat):
        return torch.sigmoid(self.att2(F.relu(self.att1(torch.cat([feat, ref_feat], dim=1)))))

    def forward(self, x0, x1, x2):
        if x0.shape != x1.shape or x1.shape != x2.shape:
            raise ShapeError("alignment expects three equally shaped frame tensors")
        f0 = F.relu(self.frame_conv(x0))
        f1 = F.relu(self.frame_conv(x1))
        f2 = F.relu(self.frame_conv(x2))
        a0 = self.attention_map(f0, f1)
        a2 = self.attention_map(f2, f1)
        return self.merge(torch.cat([f0 * a0, f1, f2 * a2], dim=1))
