"""Synthetic multimodal phantom volumes with a tumor, a gland, and tumor-mimicking distractors.

All randomness flows through a counter-based Philox generator keyed by the spec
seed, so regeneration is byte-identical for a given ``PhantomSpec``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .validation import check_binary_mask, check_intensities, check_positive_triple, check_spacing

RNG_NAME = "philox4x64"

#: per-structure, per-modality (mean, sigma) intensity profiles. The vessel
#: matches the tumor in modality 0 and the muscle matches it in modality 1;
#: both sit far from the tumor in the remaining modalities.
DEFAULT_PROFILES = {
    "background": ((0.10, 0.02), (0.10, 0.02), (0.10, 0.02)),
    "gland": ((0.40, 0.02), (0.45, 0.02), (0.35, 0.02)),
    "tumor": ((0.75, 0.02), (0.80, 0.02), (0.85, 0.02)),
    "vessel": ((0.75, 0.02), (0.35, 0.02), (0.45, 0.02)),
    "muscle": ((0.30, 0.02), (0.80, 0.02), (0.45, 0.02)),
}

#: which modality each distractor type is intensity-matched to
MATCHED_MODALITY = {"vessel": 0, "muscle": 1}


def make_rng(seed) -> np.random.Generator:
    """Named portable counter-based generator used everywhere in this package."""
    return np.random.Generator(np.random.Philox(key=seed))


@dataclass
class MultimodalVolume:
    """A co-registered multimodal volume: (modalities, D, H, W) intensities plus a binary mask."""

    intensities: np.ndarray
    spacing: tuple
    mask: np.ndarray
    case_id: str = ""
    modality_names: tuple = ()

    def __post_init__(self):
        self.mask = check_binary_mask(self.mask)
        self.intensities = check_intensities(self.intensities, self.mask.shape)
        self.spacing = check_spacing(self.spacing)
        if not self.modality_names:
            self.modality_names = tuple(f"mod_{k}" for k in range(self.n_modalities))
        if len(self.modality_names) != self.n_modalities:
            raise ValueError("one modality name per intensity channel is required")

    @property
    def n_modalities(self) -> int:
        return self.intensities.shape[0]

    @property
    def shape(self) -> tuple:
        return self.mask.shape

    def voxel_volume_cc(self) -> float:
        return float(np.prod(self.spacing)) / 1000.0

    def mask_volume_cc(self) -> float:
        return float(self.mask.sum()) * self.voxel_volume_cc()


@dataclass
class PhantomSpec:
    """Recipe for one synthetic case."""

    shape: tuple = (16, 64, 64)
    spacing: tuple = (4.0, 0.4, 0.4)
    tumor_volume_cc: tuple = (2.0, 6.0)
    n_distractors: int = 2
    n_modalities: int = 3
    noise_sigma: float = 0.01
    seed: int = 0
    intensity_profiles: dict = field(default_factory=lambda: DEFAULT_PROFILES)

    def __post_init__(self):
        self.shape = check_positive_triple(self.shape, "shape")
        self.spacing = check_spacing(self.spacing)
        lo, hi = (float(v) for v in self.tumor_volume_cc)
        if not 0 < lo <= hi:
            raise ValueError(f"tumor_volume_cc must satisfy 0 < lo <= hi, got {(lo, hi)}")
        self.tumor_volume_cc = (lo, hi)
        if self.n_distractors < 0:
            raise ValueError("n_distractors must be non-negative")
        if self.n_modalities < 1 or self.n_modalities > len(DEFAULT_PROFILES["tumor"]):
            raise ValueError(f"n_modalities must be in [1, 3], got {self.n_modalities}")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")


def _ellipsoid(shape, center, semi_axes) -> np.ndarray:
    grids = np.ogrid[: shape[0], : shape[1], : shape[2]]
    acc = np.zeros(shape, dtype=np.float64)
    for g, c, a in zip(grids, center, semi_axes):
        acc = acc + ((g - c) / max(a, 1e-9)) ** 2
    return acc <= 1.0


def _tube(shape, axis, center, radii) -> np.ndarray:
    """Cylinder spanning the full extent of ``axis``; ``radii`` are for the two cross axes."""
    cross = [ax for ax in range(3) if ax != axis]
    grids = np.ogrid[: shape[0], : shape[1], : shape[2]]
    acc = np.zeros(shape, dtype=np.float64)
    for ax, c, r in zip(cross, center, radii):
        acc = acc + ((grids[ax] - c) / max(r, 1e-9)) ** 2
    return acc <= 1.0


def _band(shape, axis, start, thickness) -> np.ndarray:
    mask = np.zeros(shape, dtype=bool)
    index = [slice(None)] * 3
    index[axis] = slice(start, start + thickness)
    mask[tuple(index)] = True
    return mask


def _fit_tumor(spec: PhantomSpec, rng: np.random.Generator):
    """Choose an ellipsoid whose voxelized volume lands inside the requested CC range."""
    lo, hi = spec.tumor_volume_cc
    voxel_cc = float(np.prod(spec.spacing)) / 1000.0
    target_cc = float(rng.uniform(lo, hi))
    radius_mm = (3.0 * target_cc * 1000.0 / (4.0 * math.pi)) ** (1.0 / 3.0)
    semi = np.array([radius_mm / s for s in spec.spacing], dtype=np.float64)
    jitter = rng.uniform(0.85, 1.15, size=3)
    jitter /= jitter.prod() ** (1.0 / 3.0)  # volume-preserving shape jitter
    semi *= jitter

    # margin >= 1 voxel on every face
    max_semi = np.array([(d - 3) / 2.0 for d in spec.shape], dtype=np.float64)
    if (max_semi <= 0).any():
        raise ValueError(f"volume shape {spec.shape} is too small to host a tumor")
    scale_hi = min(float(np.min(max_semi / semi)), 1.6)
    analytic_max = (4.0 / 3.0) * math.pi * float(np.prod(semi)) * scale_hi**3 * voxel_cc
    if analytic_max < lo:
        raise ValueError(
            f"tumor_volume_cc {spec.tumor_volume_cc} is unrealizable inside shape "
            f"{spec.shape} at spacing {spec.spacing}"
        )

    # fixed number of draws regardless of feasibility, for reproducibility
    fractions = rng.uniform(0.0, 1.0, size=3)
    center = []
    for ax in range(3):
        reach = semi[ax] * scale_hi
        c_lo, c_hi = reach + 1.2, spec.shape[ax] - 2.2 - reach
        center.append(c_lo + fractions[ax] * (c_hi - c_lo) if c_lo < c_hi else spec.shape[ax] / 2.0)

    scale_lo = 0.2
    scale = min(1.0, scale_hi)
    for _ in range(60):
        mask = _ellipsoid(spec.shape, center, semi * scale)
        cc = float(mask.sum()) * voxel_cc
        if lo <= cc <= hi:
            return mask
        if cc < lo:
            scale_lo = scale
        else:
            scale_hi = scale
        scale = (scale_lo + scale_hi) / 2.0
    raise ValueError("could not voxelize a tumor inside the requested volume range")


def _draw_intensity(rng: np.random.Generator, mean: float, sigma: float) -> float:
    return float(np.clip(rng.normal(mean, sigma), 0.02, 0.98))


def generate_phantom(spec: PhantomSpec, case_id: str = "", return_parts: bool = False):
    """Generate one deterministic multimodal phantom case.

    The tumor is painted last, so every mask voxel carries the tumor intensity
    in every modality before noise. Each distractor copies the tumor's drawn
    intensity (within one profile sigma) in its matched modality and uses its
    own far profile elsewhere.
    """
    rng = make_rng(spec.seed)
    m = spec.n_modalities
    profiles = spec.intensity_profiles

    tumor_mask = _fit_tumor(spec, rng)

    # draw order is fixed: structure intensities, gland geometry, distractors, noise
    background = [_draw_intensity(rng, *profiles["background"][k]) for k in range(m)]
    gland = [_draw_intensity(rng, *profiles["gland"][k]) for k in range(m)]
    tumor = [_draw_intensity(rng, *profiles["tumor"][k]) for k in range(m)]

    tumor_idx = np.argwhere(tumor_mask)
    tumor_center = tumor_idx.mean(axis=0)
    tumor_extent = tumor_idx.max(axis=0) - tumor_idx.min(axis=0) + 1

    gland_offset = rng.uniform(-2.0, 2.0, size=3)
    gland_semi = tumor_extent / 2.0 * rng.uniform(1.6, 2.0)
    gland_mask = _ellipsoid(spec.shape, tumor_center + gland_offset, gland_semi)

    distractors = []
    for i in range(spec.n_distractors):
        kind = "vessel" if i % 2 == 0 else "muscle"
        for _attempt in range(10):
            if kind == "vessel":
                axis = int(rng.integers(0, 3))
                cross = [ax for ax in range(3) if ax != axis]
                radius_mm = float(rng.uniform(1.0, 2.5))
                radii = [max(1.0, radius_mm / spec.spacing[ax]) for ax in cross]
                fractions = rng.uniform(0.0, 1.0, size=2)
                center = []
                for j in range(2):
                    c_lo, c_hi = radii[j], spec.shape[cross[j]] - 1 - radii[j]
                    center.append(
                        c_lo + fractions[j] * (c_hi - c_lo) if c_lo < c_hi else spec.shape[cross[j]] / 2.0
                    )
                mask = _tube(spec.shape, axis, center, radii)
            else:
                axis = int(rng.integers(0, 3))
                thickness_mm = float(rng.uniform(2.0, 5.0))
                thickness = max(1, int(round(thickness_mm / spec.spacing[axis])))
                thickness = min(thickness, max(1, spec.shape[axis] // 4))
                start = int(rng.integers(0, max(1, spec.shape[axis] - thickness)))
                mask = _band(spec.shape, axis, start, thickness)
            if not (mask & tumor_mask).any():
                break
        matched = MATCHED_MODALITY[kind] if MATCHED_MODALITY[kind] < m else 0
        values = []
        for k in range(m):
            if k == matched:
                sigma = profiles["tumor"][k][1]
                values.append(float(np.clip(tumor[k] + rng.uniform(-sigma, sigma) * 0.99, 0.0, 1.0)))
            else:
                values.append(_draw_intensity(rng, *profiles[kind][k]))
        distractors.append((kind, mask, values))

    intensities = np.empty((m,) + spec.shape, dtype=np.float32)
    for k in range(m):
        channel = np.full(spec.shape, background[k], dtype=np.float32)
        channel[gland_mask] = gland[k]
        for _kind, mask, values in distractors:
            channel[mask] = values[k]
        channel[tumor_mask] = tumor[k]
        intensities[k] = channel

    if spec.noise_sigma > 0:
        for k in range(m):  # per-modality noise, fixed order
            noise = rng.normal(0.0, spec.noise_sigma, size=spec.shape)
            intensities[k] = (intensities[k] + noise).astype(np.float32)
    np.clip(intensities, 0.0, 1.0, out=intensities)

    volume = MultimodalVolume(
        intensities=intensities,
        spacing=spec.spacing,
        mask=tumor_mask.astype(np.uint8),
        case_id=case_id or f"case_{spec.seed:06d}",
    )
    if return_parts:
        parts = {
            "tumor": tumor_mask,
            "gland": gland_mask & ~tumor_mask,
            "tumor_values": np.array(tumor),
            "distractors": distractors,
        }
        return volume, parts
    return volume


def generate_cases(
    count: int,
    base_seed: int,
    template: Optional[PhantomSpec] = None,
) -> list:
    """Generate ``count`` cases with per-case seeds ``base_seed + index``."""
    template = template or PhantomSpec()
    cases = []
    for i in range(count):
        spec = replace(template, seed=base_seed + i)
        cases.append(generate_phantom(spec, case_id=f"case_{i:04d}"))
    return cases


def normalize_volume(volume: MultimodalVolume) -> MultimodalVolume:
    """Per-modality z-score over the whole volume; constant channels become zeros."""
    out = np.empty_like(volume.intensities, dtype=np.float32)
    for k in range(volume.n_modalities):
        channel = volume.intensities[k].astype(np.float64)
        mean = channel.mean()
        std = channel.std()
        if std == 0.0:
            out[k] = 0.0
        else:
            out[k] = ((channel - mean) / std).astype(np.float32)
    return MultimodalVolume(
        intensities=out,
        spacing=volume.spacing,
        mask=volume.mask.copy(),
        case_id=volume.case_id,
        modality_names=volume.modality_names,
    )
