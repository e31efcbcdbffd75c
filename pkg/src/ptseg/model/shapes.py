"""Closed-form shape arithmetic for the encoder/decoder; the network is built from this plan."""

from __future__ import annotations

from dataclasses import dataclass

from ..config import EMBED_STRIDE, ModelConfig


def ceil_div(a: int, b: int) -> int:
    return -(-a // b)


def effective_window(window, resolution) -> tuple:
    """Shrink the window to the feature map wherever it would overhang."""
    return tuple(min(w, r) for w, r in zip(window, resolution))


def effective_shift(window_eff, resolution) -> tuple:
    """Half-window cyclic shift, disabled on axes the window spans entirely."""
    return tuple(w // 2 if w < r else 0 for w, r in zip(window_eff, resolution))


def effective_merge(factors, resolution) -> tuple:
    """Clamp each merge factor to 1 on axes smaller than the factor."""
    return tuple(f if r >= f else 1 for f, r in zip(factors, resolution))


def padded_resolution(resolution, window) -> tuple:
    return tuple(ceil_div(r, w) * w for r, w in zip(resolution, window))


def merged_resolution(resolution, factors_eff) -> tuple:
    return tuple(ceil_div(r, f) for r, f in zip(resolution, factors_eff))


@dataclass
class StagePlan:
    index: int
    channels: int
    resolution: tuple  # where MFB/SWB operate (= skip resolution)
    window: tuple
    shift: tuple
    heads: int
    merge_factors: tuple  # effective, possibly clamped
    out_channels: int
    out_resolution: tuple


@dataclass
class DecoderPlan:
    index: int  # matches the encoder stage it mirrors
    in_channels: int  # m-fold stack entering calibration
    up_factors: tuple
    calibrated_channels: int  # in_channels / m, at the skip resolution
    skip_channels: int  # m * stage channels
    fused_channels: int  # fuse block output
    resolution: tuple  # skip resolution, where this level's output lives


@dataclass
class ShapePlan:
    patch_size: tuple
    embed_channels: int
    embed_resolution: tuple
    stages: list
    bottleneck_channels: int
    bottleneck_resolution: tuple
    decoder: list  # deepest level first
    logits_channels: int


def embed_output_shape(config: ModelConfig) -> tuple:
    """(channels, D', H', W') emitted by the convolutional embedding."""
    for ax in range(3):
        if config.patch_size[ax] % EMBED_STRIDE[ax] != 0:
            raise ValueError(
                f"input size {config.patch_size} is not divisible by the embedding stride {EMBED_STRIDE}"
            )
    resolution = tuple(p // s for p, s in zip(config.patch_size, EMBED_STRIDE))
    return (2 * config.base_channels,) + resolution


def plan_shapes(config: ModelConfig) -> ShapePlan:
    """Resolve every per-stage resolution, window, shift and merge factor up front."""
    embed = embed_output_shape(config)
    resolution = embed[1:]
    stages = []
    for s in range(config.n_stages):
        if resolution[0] * resolution[1] * resolution[2] <= 1:
            raise ValueError(
                f"stage {s} would operate on a single voxel for patch_size "
                f"{config.patch_size}; use a larger patch or fewer stages"
            )
        channels = config.stage_channels(s)
        window = effective_window(config.window_size, resolution)
        shift = effective_shift(window, resolution)
        factors = effective_merge(config.merge_schedule[s], resolution)
        out_resolution = merged_resolution(resolution, factors)
        stages.append(
            StagePlan(
                index=s,
                channels=channels,
                resolution=resolution,
                window=window,
                shift=shift,
                heads=config.heads_per_stage[s],
                merge_factors=factors,
                out_channels=2 * channels,
                out_resolution=out_resolution,
            )
        )
        resolution = out_resolution

    m = config.n_modalities
    decoder = []
    in_channels = m * stages[-1].out_channels
    for stage in reversed(stages):
        calibrated = in_channels // m
        skip_channels = m * stage.channels
        fused = m * (stage.channels // 2)  # == m * ch[l-1]; keeps the next stack m-divisible
        decoder.append(
            DecoderPlan(
                index=stage.index,
                in_channels=in_channels,
                up_factors=stage.merge_factors,
                calibrated_channels=calibrated,
                skip_channels=skip_channels,
                fused_channels=fused,
                resolution=stage.resolution,
            )
        )
        in_channels = fused

    return ShapePlan(
        patch_size=config.patch_size,
        embed_channels=embed[0],
        embed_resolution=embed[1:],
        stages=stages,
        bottleneck_channels=stages[-1].out_channels,
        bottleneck_resolution=stages[-1].out_resolution,
        decoder=decoder,
        logits_channels=config.n_classes,
    )
