"""On-disk case format: ``<case_id>/meta.json`` + raw little-endian arrays.

Intensities are C-order float32 (``mod_<k>.raw``, one file per modality) and the
mask is uint8 (``mask.raw``). The format is fully described by ``meta.json`` and
round-trips byte-identically.
"""

from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Optional

import numpy as np

from .phantom import MultimodalVolume, RNG_NAME

FORMAT_VERSION = 1
INTENSITY_DTYPE = "f32le"
MASK_DTYPE = "u8"

_REQUIRED_KEYS = ("format_version", "shape", "spacing", "modalities", "intensity_dtype", "mask_dtype")


class CaseFormatError(ValueError):
    """Raised for malformed or inconsistent case directories."""


def _meta_dict(volume: MultimodalVolume) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "case_id": volume.case_id,
        "shape": list(volume.shape),
        "spacing": list(volume.spacing),
        "modalities": list(volume.modality_names),
        "intensity_dtype": INTENSITY_DTYPE,
        "mask_dtype": MASK_DTYPE,
        "rng": RNG_NAME,
    }


def save_volume(volume: MultimodalVolume, case_dir) -> Path:
    """Write one case directory; returns its path."""
    case_dir = Path(case_dir)
    case_dir.mkdir(parents=True, exist_ok=True)
    with open(case_dir / "meta.json", "w", encoding="utf-8") as fh:
        json.dump(_meta_dict(volume), fh, indent=2, sort_keys=True)
        fh.write("\n")
    for k in range(volume.n_modalities):
        data = np.ascontiguousarray(volume.intensities[k], dtype="<f4")
        (case_dir / f"mod_{k}.raw").write_bytes(data.tobytes())
    (case_dir / "mask.raw").write_bytes(
        np.ascontiguousarray(volume.mask, dtype=np.uint8).tobytes()
    )
    return case_dir


def _read_meta(case_dir: Path) -> dict:
    meta_path = case_dir / "meta.json"
    if not meta_path.is_file():
        raise CaseFormatError(f"{case_dir} has no meta.json")
    try:
        with open(meta_path, "r", encoding="utf-8") as fh:
            meta = json.load(fh)
    except json.JSONDecodeError as exc:
        raise CaseFormatError(f"{meta_path} is not valid JSON: {exc}") from exc
    for key in _REQUIRED_KEYS:
        if key not in meta:
            raise CaseFormatError(f"{meta_path} is missing required key {key!r}")
    if meta["format_version"] != FORMAT_VERSION:
        raise CaseFormatError(
            f"unsupported format_version {meta['format_version']!r} in {meta_path}"
        )
    if meta["intensity_dtype"] != INTENSITY_DTYPE or meta["mask_dtype"] != MASK_DTYPE:
        raise CaseFormatError(f"unsupported dtypes in {meta_path}")
    shape = tuple(int(v) for v in meta["shape"])
    if len(shape) != 3 or any(v <= 0 for v in shape):
        raise CaseFormatError(f"bad shape {meta['shape']!r} in {meta_path}")
    spacing = tuple(float(v) for v in meta["spacing"])
    if len(spacing) != 3 or any(v <= 0 for v in spacing):
        raise CaseFormatError(f"bad spacing {meta['spacing']!r} in {meta_path}")
    meta["shape"] = shape
    meta["spacing"] = spacing
    return meta


def _read_raw(path: Path, dtype, shape) -> np.ndarray:
    if not path.is_file():
        raise CaseFormatError(f"missing raw file {path}")
    data = path.read_bytes()
    expected = int(np.prod(shape)) * np.dtype(dtype).itemsize
    if len(data) != expected:
        raise CaseFormatError(
            f"{path} holds {len(data)} bytes, expected {expected} for shape {shape}"
        )
    return np.frombuffer(data, dtype=dtype).reshape(shape).copy()


def load_volume(case_dir) -> MultimodalVolume:
    """Load one case directory written by :func:`save_volume`."""
    case_dir = Path(case_dir)
    meta = _read_meta(case_dir)
    names = [str(n) for n in meta["modalities"]]
    if not names:
        raise CaseFormatError(f"{case_dir} declares no modalities")
    shape = meta["shape"]
    intensities = np.stack(
        [_read_raw(case_dir / f"mod_{k}.raw", "<f4", shape) for k in range(len(names))]
    )
    mask = _read_raw(case_dir / "mask.raw", np.uint8, shape)
    return MultimodalVolume(
        intensities=intensities,
        spacing=meta["spacing"],
        mask=mask,
        case_id=str(meta.get("case_id", case_dir.name)),
        modality_names=tuple(names),
    )


def save_mask_case(mask: np.ndarray, spacing, case_dir, case_id: str = "") -> Path:
    """Write a mask-only case (predictions); readable by :func:`load_mask_case`."""
    case_dir = Path(case_dir)
    case_dir.mkdir(parents=True, exist_ok=True)
    mask = np.ascontiguousarray(mask, dtype=np.uint8)
    meta = {
        "format_version": FORMAT_VERSION,
        "case_id": case_id or case_dir.name,
        "shape": list(mask.shape),
        "spacing": [float(s) for s in spacing],
        "modalities": [],
        "intensity_dtype": INTENSITY_DTYPE,
        "mask_dtype": MASK_DTYPE,
    }
    with open(case_dir / "meta.json", "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    (case_dir / "mask.raw").write_bytes(mask.tobytes())
    return case_dir


def load_mask_case(case_dir) -> tuple:
    """Read (mask, spacing) from any case directory carrying mask.raw + meta.json."""
    case_dir = Path(case_dir)
    meta = _read_meta(case_dir)
    mask = _read_raw(case_dir / "mask.raw", np.uint8, meta["shape"])
    return mask, meta["spacing"]


def list_cases(root) -> list:
    """Sorted case directories (those containing meta.json) under ``root``."""
    root = Path(root)
    if not root.is_dir():
        raise CaseFormatError(f"{root} is not a directory")
    return sorted(p for p in root.iterdir() if p.is_dir() and (p / "meta.json").is_file())


def load_dataset(root) -> list:
    cases = list_cases(root)
    if not cases:
        raise CaseFormatError(f"no case directories found under {root}")
    return [load_volume(p) for p in cases]
