"""Windowed cross-modal attention: partitioning, shift masks, relative position bias."""

from __future__ import annotations

import torch
import torch.nn as nn


def window_partition(x: torch.Tensor, window) -> torch.Tensor:
    """(B, D, H, W, C) -> (B * n_windows, window_volume, C). Dims must divide."""
    b, d, h, w, c = x.shape
    wd, wh, ww = window
    x = x.view(b, d // wd, wd, h // wh, wh, w // ww, ww, c)
    x = x.permute(0, 1, 3, 5, 2, 4, 6, 7).contiguous()
    return x.view(-1, wd * wh * ww, c)


def window_reverse(windows: torch.Tensor, window, resolution) -> torch.Tensor:
    """Inverse of :func:`window_partition` for the same (padded) resolution."""
    d, h, w = resolution
    wd, wh, ww = window
    b = windows.shape[0] // (d // wd * (h // wh) * (w // ww))
    x = windows.view(b, d // wd, h // wh, w // ww, wd, wh, ww, -1)
    x = x.permute(0, 1, 4, 2, 5, 3, 6, 7).contiguous()
    return x.view(b, d, h, w, -1)


def _axis_slices(size: int, window: int, shift: int):
    if shift == 0:
        return (slice(0, size),)
    return (slice(0, -window), slice(-window, -shift), slice(-shift, None))


def compute_shift_mask(resolution, window, shift, device=None) -> torch.Tensor:
    """Additive attention mask (n_windows, N, N) for cyclic-shifted windows.

    Forbidden pairs (tokens wrapped together from opposite volume edges) get
    ``-inf`` so their softmax weight is exactly zero; allowed pairs get 0.
    """
    d, h, w = resolution
    region = torch.zeros((1, d, h, w, 1), device=device)
    count = 0
    for ds in _axis_slices(d, window[0], shift[0]):
        for hs in _axis_slices(h, window[1], shift[1]):
            for ws in _axis_slices(w, window[2], shift[2]):
                region[:, ds, hs, ws, :] = count
                count += 1
    region_windows = window_partition(region, window).squeeze(-1)  # (nW, N)
    diff = region_windows.unsqueeze(1) - region_windows.unsqueeze(2)
    mask = torch.zeros_like(diff)
    mask.masked_fill_(diff != 0, float("-inf"))
    return mask


def relative_position_index(window) -> torch.Tensor:
    """Flat lookup index into the (2wd-1)(2wh-1)(2ww-1) bias table for each token pair."""
    wd, wh, ww = window
    coords = torch.stack(
        torch.meshgrid(
            torch.arange(wd), torch.arange(wh), torch.arange(ww), indexing="ij"
        )
    )  # (3, wd, wh, ww)
    flat = torch.flatten(coords, 1)  # (3, N)
    relative = flat[:, :, None] - flat[:, None, :]  # (3, N, N)
    relative = relative.permute(1, 2, 0).contiguous()
    relative[:, :, 0] += wd - 1
    relative[:, :, 1] += wh - 1
    relative[:, :, 2] += ww - 1
    relative[:, :, 0] *= (2 * wh - 1) * (2 * ww - 1)
    relative[:, :, 1] *= 2 * ww - 1
    return relative.sum(-1)  # (N, N)


class WindowFusionAttention(nn.Module):
    """Multi-head attention where queries come from one stream and keys/values
    from another, restricted to local 3D windows, with a learned relative
    position bias. Passing the same stream twice reduces it to standard
    windowed self-attention."""

    def __init__(self, dim: int, num_heads: int, window, qkv_bias: bool = True):
        super().__init__()
        if dim % num_heads != 0:
            raise ValueError(f"dim {dim} is not divisible by num_heads {num_heads}")
        self.dim = dim
        self.num_heads = num_heads
        self.window = tuple(window)
        self.scale = (dim // num_heads) ** -0.5

        table_size = (2 * self.window[0] - 1) * (2 * self.window[1] - 1) * (2 * self.window[2] - 1)
        # zero-initialized: blocks start bias-free and learn spatial preferences
        self.relative_position_bias_table = nn.Parameter(torch.zeros(table_size, num_heads))
        self.register_buffer("relative_index", relative_position_index(self.window), persistent=False)

        self.q = nn.Linear(dim, dim, bias=qkv_bias)
        self.k = nn.Linear(dim, dim, bias=qkv_bias)
        self.v = nn.Linear(dim, dim, bias=qkv_bias)
        self.proj = nn.Linear(dim, dim)
        for layer in (self.q, self.k, self.v, self.proj):
            nn.init.trunc_normal_(layer.weight, std=0.02)
            if layer.bias is not None:
                nn.init.zeros_(layer.bias)

    def forward(
        self,
        x_query: torch.Tensor,
        x_source: torch.Tensor,
        mask: torch.Tensor = None,
        return_attn: bool = False,
    ):
        """x_query, x_source: (B_windows, N, C) with N == window volume."""
        bw, n, c = x_query.shape
        heads = self.num_heads
        q = self.q(x_query).reshape(bw, n, heads, c // heads).permute(0, 2, 1, 3)
        k = self.k(x_source).reshape(bw, n, heads, c // heads).permute(0, 2, 1, 3)
        v = self.v(x_source).reshape(bw, n, heads, c // heads).permute(0, 2, 1, 3)

        attn = (q * self.scale) @ k.transpose(-2, -1)  # (bw, heads, N, N)
        bias = self.relative_position_bias_table[self.relative_index.view(-1)]
        bias = bias.view(n, n, heads).permute(2, 0, 1)
        attn = attn + bias.unsqueeze(0)
        if mask is not None:
            nw = mask.shape[0]
            attn = attn.view(bw // nw, nw, heads, n, n) + mask.unsqueeze(1).unsqueeze(0)
            attn = attn.view(bw, heads, n, n)
        attn = torch.softmax(attn, dim=-1)

        out = (attn @ v).transpose(1, 2).reshape(bw, n, c)
        out = self.proj(out)
        if return_attn:
            return out, attn
        return out
