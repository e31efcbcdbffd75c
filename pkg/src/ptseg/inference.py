"""Sliding-window inference: overlapping tiles, Gaussian importance weighting,
weighted probability accumulation, and thresholding."""

from __future__ import annotations

import numpy as np
import torch

from .validation import check_positive_triple


def gaussian_importance(patch_size) -> np.ndarray:
    """Separable Gaussian tile weight, sigma = size/8 per axis, peak scaled to 1.

    Strictly positive everywhere, so accumulated weights can never be zero on
    a covered voxel.
    """
    patch_size = check_positive_triple(patch_size, "patch_size")
    axes = []
    for n in patch_size:
        sigma = n / 8.0
        coords = np.arange(n, dtype=np.float64)
        axes.append(np.exp(-0.5 * ((coords - (n - 1) / 2.0) / sigma) ** 2))
    weight = axes[0][:, None, None] * axes[1][None, :, None] * axes[2][None, None, :]
    return weight / weight.max()


def tile_origins(volume_shape, patch_size, overlap: float = 0.5) -> list:
    """Origins of overlapping tiles covering every voxel; the last tile per
    axis is clamped flush to the border."""
    if not 0.0 <= overlap < 1.0:
        raise ValueError(f"overlap must be in [0, 1), got {overlap}")
    per_axis = []
    for size, patch in zip(volume_shape, patch_size):
        if size <= patch:
            per_axis.append([0])
            continue
        step = max(1, int(round(patch * (1.0 - overlap))))
        positions = []
        pos = 0
        while True:
            clamped = min(pos, size - patch)
            if not positions or clamped != positions[-1]:
                positions.append(clamped)
            if pos >= size - patch:
                break
            pos += step
        per_axis.append(positions)
    return [(d, h, w) for d in per_axis[0] for h in per_axis[1] for w in per_axis[2]]


def sliding_window_infer(
    model,
    intensities: np.ndarray,
    patch_size,
    overlap: float = 0.5,
    tile_batch: int = 4,
) -> np.ndarray:
    """Tile a (modalities, D, H, W) array and blend per-tile softmax maps.

    Returns a (n_classes, D, H, W) float32 probability map that sums to 1
    over classes at every voxel.
    """
    patch_size = check_positive_triple(patch_size, "patch_size")
    if intensities.ndim != 4:
        raise ValueError(f"expected (modalities, D, H, W) input, got shape {intensities.shape}")
    m_expected = model.config.n_modalities
    if intensities.shape[0] != m_expected:
        raise ValueError(
            f"model expects {m_expected} modalities, volume has {intensities.shape[0]}"
        )

    shape = intensities.shape[1:]
    padded = tuple(max(s, p) for s, p in zip(shape, patch_size))
    if padded != shape:
        pad = [(0, padded[ax] - shape[ax]) for ax in range(3)]
        intensities = np.pad(intensities, [(0, 0)] + pad)

    origins = tile_origins(padded, patch_size, overlap)
    weight = gaussian_importance(patch_size)
    n_classes = model.config.n_classes
    accum = np.zeros((n_classes,) + padded, dtype=np.float64)
    wsum = np.zeros(padded, dtype=np.float64)

    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            for start in range(0, len(origins), max(1, tile_batch)):
                chunk = origins[start : start + max(1, tile_batch)]
                tiles = np.stack(
                    [
                        intensities[
                            :,
                            o[0] : o[0] + patch_size[0],
                            o[1] : o[1] + patch_size[1],
                            o[2] : o[2] + patch_size[2],
                        ]
                        for o in chunk
                    ]
                )
                logits = model(torch.from_numpy(np.ascontiguousarray(tiles)))
                probs = torch.softmax(logits, dim=1).double().numpy()
                for i, o in enumerate(chunk):
                    sl = (
                        slice(o[0], o[0] + patch_size[0]),
                        slice(o[1], o[1] + patch_size[1]),
                        slice(o[2], o[2] + patch_size[2]),
                    )
                    accum[(slice(None),) + sl] += probs[i] * weight
                    wsum[sl] += weight
    finally:
        model.train(was_training)

    probs = accum / wsum
    return probs[:, : shape[0], : shape[1], : shape[2]].astype(np.float32)


def predict_mask(probs: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    """Binary foreground mask from a (n_classes, D, H, W) probability map."""
    if probs.ndim != 4 or probs.shape[0] < 2:
        raise ValueError(f"expected (n_classes>=2, D, H, W) probabilities, got {probs.shape}")
    return (probs[1] > threshold).astype(np.uint8)
