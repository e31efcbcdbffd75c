"""The full segmentation network: per-modality transformer encoders joined by
window fusion, and a shared convolutional decoder over stacked skip features."""

from __future__ import annotations

import torch
import torch.nn as nn

from ..config import ModelConfig
from .blocks import EmbeddingStack, MultimodalFusionBlock, PatchMerging, ShiftWindowBlock
from .decoder import CalibrationBlock, ExpandHead, ModResidualBlock
from .shapes import plan_shapes


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters() if p.requires_grad)


class PTNet(nn.Module):
    """Multi-stream encoder/decoder for voxelwise classification.

    Each modality runs its own embedding and transformer tower; at every
    stage a fusion block lets each tower attend into the others before a
    shifted-window refinement and patch merging. The decoder consumes the
    stacked bottlenecks, repeatedly upsampling, thinning to single-tower
    width, and fusing with the stacked skip features of that level.
    """

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.plan = plan_shapes(config)
        m = config.n_modalities

        self.embeds = nn.ModuleList(
            EmbeddingStack(config.base_channels) for _ in range(m)
        )

        self.fusion = nn.ModuleList()
        self.refine = nn.ModuleList()
        self.merge = nn.ModuleList()
        for stage in self.plan.stages:
            self.fusion.append(
                nn.ModuleList(
                    MultimodalFusionBlock(
                        stage.channels,
                        stage.heads,
                        stage.window,
                        n_modalities=m,
                        mlp_ratio=config.mlp_ratio,
                        qkv_bias=config.qkv_bias,
                    )
                    for _ in range(m)
                )
            )
            self.refine.append(
                nn.ModuleList(
                    ShiftWindowBlock(
                        stage.channels,
                        stage.heads,
                        stage.window,
                        stage.shift,
                        mlp_ratio=config.mlp_ratio,
                        qkv_bias=config.qkv_bias,
                    )
                    for _ in range(m)
                )
            )
            self.merge.append(
                nn.ModuleList(
                    PatchMerging(stage.channels, stage.merge_factors) for _ in range(m)
                )
            )

        self.calibrate = nn.ModuleList()
        self.fuse = nn.ModuleList()
        for level in self.plan.decoder:
            self.calibrate.append(
                CalibrationBlock(level.in_channels, level.up_factors, m)
            )
            self.fuse.append(
                ModResidualBlock(
                    level.calibrated_channels + level.skip_channels,
                    level.fused_channels,
                )
            )

        self.expand = ExpandHead(
            self.plan.decoder[-1].fused_channels, config.base_channels, config.n_classes
        )

        self.apply(_init_convolutions)

    def encode(self, x: torch.Tensor):
        """Per-modality encoder pass.

        Returns ``(bottlenecks, skips)``: one bottleneck feature map per
        modality and, per stage, the per-modality maps taken after the
        shifted-window refinement and before merging.
        """
        if x.ndim != 5:
            raise ValueError(f"expected a 5D (B, M, D, H, W) tensor, got shape {tuple(x.shape)}")
        m = self.config.n_modalities
        if x.shape[1] != m:
            raise ValueError(f"expected {m} modality channels, got {x.shape[1]}")

        streams = [self.embeds[i](x[:, i : i + 1]) for i in range(m)]
        skips = []
        for s in range(len(self.plan.stages)):
            fused = [self.fusion[s][i](streams, i) for i in range(m)]
            refined = [self.refine[s][i](fused[i]) for i in range(m)]
            skips.append(refined)
            streams = [self.merge[s][i](refined[i]) for i in range(m)]
        return streams, skips

    def decode(self, bottlenecks, skips) -> torch.Tensor:
        y = torch.cat(bottlenecks, dim=1)
        for idx, level in enumerate(self.plan.decoder):
            y = self.calibrate[idx](y)
            d, h, w = level.resolution
            y = y[:, :, :d, :h, :w]
            y = torch.cat([y] + skips[level.index], dim=1)
            y = self.fuse[idx](y)
        return self.expand(y)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """(B, n_modalities, D, H, W) intensities -> (B, n_classes, D, H, W) logits."""
        bottlenecks, skips = self.encode(x)
        return self.decode(bottlenecks, skips)


def _init_convolutions(module: nn.Module) -> None:
    if isinstance(module, (nn.Conv3d, nn.ConvTranspose3d)):
        nn.init.kaiming_normal_(module.weight, a=0.01, nonlinearity="leaky_relu")
        if module.bias is not None:
            nn.init.zeros_(module.bias)
