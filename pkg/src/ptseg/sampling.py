"""Patch extraction for training: foreground-guaranteed batches with zero-padded borders."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .phantom import MultimodalVolume
from .validation import check_positive_triple


@dataclass
class Patch:
    """One training patch cropped from a source volume.

    ``origin`` may be negative or extend past the volume; ``pad`` records the
    zero padding applied per axis as (before, after) pairs.
    """

    intensities: np.ndarray  # (modalities, pd, ph, pw) float32
    mask: np.ndarray  # (pd, ph, pw) uint8
    origin: tuple
    pad: tuple
    contains_foreground: bool
    spacing: tuple
    case_id: str = ""


def extract_patch(volume: MultimodalVolume, origin, patch_size) -> Patch:
    """Crop ``patch_size`` voxels starting at ``origin``, zero-padding beyond the volume."""
    patch_size = check_positive_triple(patch_size, "patch_size")
    origin = tuple(int(v) for v in origin)
    shape = volume.shape
    src, dst, pad = [], [], []
    for ax in range(3):
        start, size = origin[ax], patch_size[ax]
        lo = max(start, 0)
        hi = min(start + size, shape[ax])
        if lo >= hi:
            raise ValueError(f"patch at origin {origin} misses the volume entirely on axis {ax}")
        src.append(slice(lo, hi))
        dst.append(slice(lo - start, hi - start))
        pad.append((lo - start, start + size - hi))
    intensities = np.zeros((volume.n_modalities,) + patch_size, dtype=np.float32)
    mask = np.zeros(patch_size, dtype=np.uint8)
    intensities[(slice(None),) + tuple(dst)] = volume.intensities[(slice(None),) + tuple(src)]
    mask[tuple(dst)] = volume.mask[tuple(src)]
    return Patch(
        intensities=intensities,
        mask=mask,
        origin=origin,
        pad=tuple(pad),
        contains_foreground=bool(mask.any()),
        spacing=volume.spacing,
        case_id=volume.case_id,
    )


def sample_batch(
    volumes: Sequence[MultimodalVolume],
    patch_size,
    batch_size: int,
    rng: np.random.Generator,
) -> list:
    """Sample ``batch_size`` patches; at least ceil(batch_size/2) contain foreground.

    Foreground-guaranteed patches are centered near a uniformly chosen tumor
    voxel with a per-axis jitter of up to a quarter patch, which keeps that
    voxel inside the crop.
    """
    if not volumes:
        raise ValueError("sample_batch needs at least one volume")
    patch_size = check_positive_triple(patch_size, "patch_size")
    if batch_size < 1:
        raise ValueError("batch_size must be positive")

    fg_pool = [v for v in volumes if v.mask.any()]
    n_guaranteed = math.ceil(batch_size / 2)
    if not fg_pool:
        raise ValueError("no volume contains foreground; cannot honor the foreground guarantee")

    patches = []
    for i in range(batch_size):
        if i < n_guaranteed:
            volume = fg_pool[int(rng.integers(len(fg_pool)))]
            fg_voxels = np.argwhere(volume.mask)
            voxel = fg_voxels[int(rng.integers(len(fg_voxels)))]
            jitter = np.array(
                [int(rng.integers(-(p // 4), p // 4 + 1)) for p in patch_size]
            )
            center = voxel + jitter
        else:
            volume = volumes[int(rng.integers(len(volumes)))]
            center = np.array([int(rng.integers(0, d)) for d in volume.shape])
        origin = tuple(int(center[ax]) - patch_size[ax] // 2 for ax in range(3))
        patch = extract_patch(volume, origin, patch_size)
        if i < n_guaranteed and not patch.contains_foreground:
            raise AssertionError("foreground-guaranteed patch lost its tumor voxel")
        patches.append(patch)
    return patches
