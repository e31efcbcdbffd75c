"""Small argument and array validators shared across the package."""

from __future__ import annotations

from typing import Sequence

import numpy as np


def as_triple(value, name: str, kind=int) -> tuple:
    """Coerce ``value`` to a 3-tuple of ``kind``, raising ValueError otherwise."""
    if isinstance(value, (int, float)):
        value = (value, value, value)
    seq = tuple(kind(v) for v in value)
    if len(seq) != 3:
        raise ValueError(f"{name} must have exactly 3 entries, got {value!r}")
    return seq


def check_positive_triple(value, name: str, kind=int) -> tuple:
    triple = as_triple(value, name, kind)
    if any(v <= 0 for v in triple):
        raise ValueError(f"{name} entries must be positive, got {triple}")
    return triple


def check_spacing(spacing) -> tuple:
    return check_positive_triple(spacing, "spacing", float)


def check_binary_mask(mask: np.ndarray, name: str = "mask") -> np.ndarray:
    mask = np.asarray(mask)
    if mask.ndim != 3:
        raise ValueError(f"{name} must be a 3D array, got shape {mask.shape}")
    values = np.unique(mask)
    if not np.isin(values, (0, 1)).all():
        raise ValueError(f"{name} must contain only 0 and 1, found {values[:8]}")
    return mask.astype(np.uint8, copy=False)


def check_intensities(intensities: np.ndarray, mask_shape: Sequence[int]) -> np.ndarray:
    arr = np.asarray(intensities, dtype=np.float32)
    if arr.ndim != 4:
        raise ValueError(f"intensities must be (modalities, D, H, W), got shape {arr.shape}")
    if arr.shape[0] < 1:
        raise ValueError("at least one modality is required")
    if tuple(arr.shape[1:]) != tuple(mask_shape):
        raise ValueError(
            f"intensity shape {arr.shape[1:]} does not match mask shape {tuple(mask_shape)}"
        )
    if not np.isfinite(arr).all():
        raise ValueError("intensities must be finite")
    return arr
