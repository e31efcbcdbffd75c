"""Convolutional decoder: channel-attention residual blocks, upsampling
calibration of stacked multimodal features, and the final expansion head."""

from __future__ import annotations

import torch
import torch.nn as nn

from .blocks import RepackedInstanceNorm3d, _conv_unit


class SqueezeExcitation(nn.Module):
    """Channel gating from globally pooled statistics (bottleneck ratio 4)."""

    def __init__(self, channels: int, reduction: int = 4):
        super().__init__()
        squeezed = max(channels // reduction, 1)
        self.pool = nn.AdaptiveAvgPool3d(1)
        self.fc1 = nn.Conv3d(channels, squeezed, kernel_size=1)
        self.act = nn.LeakyReLU(inplace=True)
        self.fc2 = nn.Conv3d(squeezed, channels, kernel_size=1)

    def forward(self, x):
        gate = torch.sigmoid(self.fc2(self.act(self.fc1(self.pool(x)))))
        return x * gate


class ModResidualBlock(nn.Module):
    """Residual block with channel recalibration applied after the skip sum.

    Two 3x3x3 convolutions with instance norm form the main path; a 1x1x1
    projection aligns the shortcut when the channel count changes.
    """

    def __init__(self, in_channels: int, out_channels: int):
        super().__init__()
        self.conv1 = nn.Conv3d(in_channels, out_channels, kernel_size=3, padding=1)
        self.norm1 = RepackedInstanceNorm3d(out_channels, affine=True)
        self.conv2 = nn.Conv3d(out_channels, out_channels, kernel_size=3, padding=1)
        self.norm2 = RepackedInstanceNorm3d(out_channels, affine=True)
        self.act = nn.LeakyReLU(inplace=True)
        if in_channels != out_channels:
            self.shortcut = nn.Conv3d(in_channels, out_channels, kernel_size=1)
        else:
            self.shortcut = nn.Identity()
        self.se = SqueezeExcitation(out_channels)

    def forward(self, x):
        y = self.act(self.norm1(self.conv1(x)))
        y = self.norm2(self.conv2(y))
        y = self.act(y + self.shortcut(x))
        return self.se(y)


class CalibrationBlock(nn.Module):
    """Upsample a stacked multimodal feature map and thin it to one
    modality's width.

    A transposed convolution (kernel = stride = the encoder's merge factors
    at this level) restores resolution without changing channels, then a
    residual block divides the channel count by the modality count.
    """

    def __init__(self, in_channels: int, up_factors, n_modalities: int):
        super().__init__()
        if in_channels % n_modalities != 0:
            raise ValueError(
                f"calibration input channels ({in_channels}) are not divisible "
                f"by the modality count ({n_modalities})"
            )
        self.up_factors = tuple(up_factors)
        self.up = nn.ConvTranspose3d(
            in_channels, in_channels, kernel_size=self.up_factors, stride=self.up_factors
        )
        self.thin = ModResidualBlock(in_channels, in_channels // n_modalities)

    def forward(self, x):
        return self.thin(self.up(x))


class ExpandHead(nn.Module):
    """Mirror of the convolutional embedding: two transposed convolutions
    restore the input resolution, then a 1x1x1 projection emits class logits."""

    def __init__(self, in_channels: int, base_channels: int, n_classes: int):
        super().__init__()
        c = base_channels
        self.up1 = nn.ConvTranspose3d(in_channels, c, kernel_size=(1, 2, 2), stride=(1, 2, 2))
        self.block1 = nn.Sequential(*_conv_unit(c, c, (1, 1, 1)))
        self.up2 = nn.ConvTranspose3d(c, c, kernel_size=(2, 2, 2), stride=(2, 2, 2))
        self.block2 = nn.Sequential(*_conv_unit(c, c, (1, 1, 1)))
        self.head = nn.Conv3d(c, n_classes, kernel_size=1)

    def forward(self, x):
        x = self.block1(self.up1(x))
        x = self.block2(self.up2(x))
        return self.head(x)
