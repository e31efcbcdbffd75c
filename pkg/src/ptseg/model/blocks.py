"""Encoder building blocks: conv embedding, fusion/attention blocks, patch merging."""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..config import EMBED_STRIDE
from .attention import (
    WindowFusionAttention,
    compute_shift_mask,
    window_partition,
    window_reverse,
)


class Mlp(nn.Module):
    def __init__(self, dim: int, hidden: int):
        super().__init__()
        self.fc1 = nn.Linear(dim, hidden)
        self.act = nn.GELU()
        self.fc2 = nn.Linear(hidden, dim)
        for layer in (self.fc1, self.fc2):
            nn.init.trunc_normal_(layer.weight, std=0.02)
            nn.init.zeros_(layer.bias)

    def forward(self, x):
        return self.fc2(self.act(self.fc1(x)))


class WindowFusionBlock(nn.Module):
    """Pre-norm transformer block whose attention draws queries from one
    feature map and keys/values from another, inside (optionally shifted)
    local windows. Inputs and output are (B, C, D, H, W); the query stream
    carries the residual path.
    """

    def __init__(self, dim, num_heads, window, shift, mlp_ratio=4.0, qkv_bias=True):
        super().__init__()
        self.dim = dim
        self.window = tuple(window)
        self.shift = tuple(shift)
        self.norm1 = nn.LayerNorm(dim)
        self.attn = WindowFusionAttention(dim, num_heads, self.window, qkv_bias=qkv_bias)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = Mlp(dim, int(dim * mlp_ratio))
        self._mask_cache = {}

    def _shift_mask(self, padded, device):
        key = tuple(padded)
        mask = self._mask_cache.get(key)
        if mask is None:
            mask = compute_shift_mask(padded, self.window, self.shift, device=device)
            self._mask_cache[key] = mask
        return mask.to(device)

    def _windowed_attention(self, x_q, x_s):
        """Both inputs (B, D, H, W, C), already normalized."""
        _, d, h, w, _ = x_q.shape
        pad = [(-s) % win for s, win in zip((d, h, w), self.window)]
        if any(pad):
            spec = (0, 0, 0, pad[2], 0, pad[1], 0, pad[0])
            x_q = F.pad(x_q, spec)
            x_s = F.pad(x_s, spec)
        padded = x_q.shape[1:4]

        shifted = any(s > 0 for s in self.shift)
        if shifted:
            rolls = tuple(-s for s in self.shift)
            x_q = torch.roll(x_q, shifts=rolls, dims=(1, 2, 3))
            x_s = torch.roll(x_s, shifts=rolls, dims=(1, 2, 3))
            mask = self._shift_mask(padded, x_q.device)
        else:
            mask = None

        out = self.attn(window_partition(x_q, self.window), window_partition(x_s, self.window), mask=mask)
        out = window_reverse(out, self.window, padded)
        if shifted:
            out = torch.roll(out, shifts=self.shift, dims=(1, 2, 3))
        if any(pad):
            out = out[:, :d, :h, :w, :]
        return out

    def forward(self, x_query, x_source):
        x_q = x_query.permute(0, 2, 3, 4, 1)  # -> channels last
        x_s = x_source.permute(0, 2, 3, 4, 1)
        x = x_q + self._windowed_attention(self.norm1(x_q), self.norm1(x_s))
        x = x + self.mlp(self.norm2(x))
        return x.permute(0, 4, 1, 2, 3).contiguous()


class ShiftWindowBlock(WindowFusionBlock):
    """Self-attention refinement over shifted windows, closing the seams the
    aligned fusion windows leave open."""

    def forward(self, x):
        return super().forward(x, x)


class MultimodalFusionBlock(nn.Module):
    """Fuses one primary modality stream with the other modality streams.

    With three modalities the primary stream queries each of the next two
    streams (cyclic order) through dedicated fusion blocks and a third block
    fuses the two partial results. With two modalities a single fusion block
    is kept (primary queries the other stream); with one modality the block
    degenerates to plain windowed self-attention.
    """

    def __init__(self, dim, num_heads, window, n_modalities=3, mlp_ratio=4.0, qkv_bias=True):
        super().__init__()
        if n_modalities not in (1, 2, 3):
            raise ValueError(f"n_modalities must be 1, 2 or 3, got {n_modalities}")
        self.n_modalities = n_modalities
        no_shift = (0, 0, 0)

        def block():
            return WindowFusionBlock(dim, num_heads, window, no_shift, mlp_ratio, qkv_bias)

        self.fuse_a = block()
        if n_modalities == 3:
            self.fuse_b = block()
            self.fuse_out = block()

    def forward(self, streams, primary: int):
        if len(streams) != self.n_modalities:
            raise ValueError(
                f"expected {self.n_modalities} streams, got {len(streams)}"
            )
        m = self.n_modalities
        x = streams[primary]
        if m == 1:
            return self.fuse_a(x, x)
        if m == 2:
            return self.fuse_a(x, streams[(primary + 1) % 2])
        a = self.fuse_a(x, streams[(primary + 1) % 3])
        b = self.fuse_b(x, streams[(primary + 2) % 3])
        return self.fuse_out(a, b)


class PatchMerging(nn.Module):
    """Downsample by the given factors and double the channel count.

    Activation and normalization run on the incoming tokens, then a strided
    convolution (right-padded to divisibility) performs the merge.
    """

    def __init__(self, dim: int, factors):
        super().__init__()
        self.factors = tuple(factors)
        self.act = nn.GELU()
        self.norm = nn.LayerNorm(dim)
        self.reduce = nn.Conv3d(dim, 2 * dim, kernel_size=self.factors, stride=self.factors)

    def forward(self, x):
        x = self.act(x)
        x = x.permute(0, 2, 3, 4, 1)
        x = self.norm(x)
        x = x.permute(0, 4, 1, 2, 3)
        pad = [(-s) % f for s, f in zip(x.shape[2:], self.factors)]
        if any(pad):
            x = F.pad(x, (0, pad[2], 0, pad[1], 0, pad[0]))
        return self.reduce(x)


def _repack_gradient(grad):
    return grad.contiguous()


class RepackedInstanceNorm3d(nn.InstanceNorm3d):
    """Instance norm whose backward always receives a contiguous gradient.

    The native CPU instance-norm backward silently mis-reads a non-contiguous
    ``grad_output`` when the batch holds a single instance, returning wrong
    gradients for the input and the affine parameters. Any downstream permute
    (for example the channels-last transpose in front of a layer norm) produces
    exactly such a gradient, so the raw module cannot be trusted inside this
    network. A hook repacks the gradient into contiguous memory before it
    reaches the kernel; forward values are untouched.
    """

    def forward(self, x):
        y = super().forward(x)
        if y.requires_grad:
            y.register_hook(_repack_gradient)
        return y


def _conv_unit(in_ch: int, out_ch: int, stride) -> list:
    return [
        nn.Conv3d(in_ch, out_ch, kernel_size=3, stride=stride, padding=1),
        nn.GELU(),
        RepackedInstanceNorm3d(out_ch, affine=True),
    ]


class EmbeddingStack(nn.Module):
    """Convolutional patch embedding for a single modality.

    Two residual-free conv blocks reduce (D, H, W) by (2, 4, 4) overall and
    lift one input channel to twice the base width.
    """

    def __init__(self, base_channels: int, in_channels: int = 1):
        super().__init__()
        c = base_channels
        layers = []
        layers += _conv_unit(in_channels, c, (2, 2, 2))
        layers += _conv_unit(c, c, (1, 1, 1))
        layers += _conv_unit(c, 2 * c, (1, 2, 2))
        layers += _conv_unit(2 * c, 2 * c, (1, 1, 1))
        self.body = nn.Sequential(*layers)
        self.out_channels = 2 * c

    def forward(self, x):
        for ax, (size, stride) in enumerate(zip(x.shape[2:], EMBED_STRIDE)):
            if size % stride != 0:
                raise ValueError(
                    f"input size {tuple(x.shape[2:])} is not divisible by the "
                    f"embedding stride {EMBED_STRIDE}"
                )
        return self.body(x)
