"""Overlap and surface-distance metrics with volume-group aggregation.

Surfaces are extracted by 6-connectivity erosion; distances are Euclidean in
millimeters. Conventions for empty masks: two empty masks score perfect overlap
and zero distance, one empty mask scores zero overlap and the physical diagonal
of the volume.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .validation import check_spacing

METRIC_NAMES = ("precision", "recall", "dice", "hd95", "asd")
DEFAULT_GROUP_THRESHOLDS = (4.0, 10.0)

#: faces-only neighborhood used for surface extraction
_STRUCTURE_6 = ndimage.generate_binary_structure(3, 1)


def confusion_counts(pred: np.ndarray, gt: np.ndarray) -> tuple:
    """(TP, FP, FN, TN) voxel counts for two binary masks of equal shape."""
    pred = np.asarray(pred, dtype=bool)
    gt = np.asarray(gt, dtype=bool)
    if pred.shape != gt.shape:
        raise ValueError(f"mask shapes differ: {pred.shape} vs {gt.shape}")
    tp = int(np.count_nonzero(pred & gt))
    fp = int(np.count_nonzero(pred & ~gt))
    fn = int(np.count_nonzero(~pred & gt))
    tn = pred.size - tp - fp - fn
    return tp, fp, fn, tn


def overlap_metrics(pred: np.ndarray, gt: np.ndarray) -> dict:
    """Precision, recall and Dice with the empty-mask conventions applied."""
    tp, fp, fn, _ = confusion_counts(pred, gt)
    if tp + fp + fn == 0:  # both empty
        return {"precision": 1.0, "recall": 1.0, "dice": 1.0}
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    dice = 2.0 * tp / (2.0 * tp + fp + fn)
    return {"precision": precision, "recall": recall, "dice": dice}


def surface_mask(mask: np.ndarray) -> np.ndarray:
    """Voxels of ``mask`` with at least one of six face neighbors outside it."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        return np.zeros_like(mask)
    eroded = ndimage.binary_erosion(mask, structure=_STRUCTURE_6, border_value=0)
    return mask & ~eroded


def _physical_diagonal(shape, spacing) -> float:
    return math.sqrt(sum((n * s) ** 2 for n, s in zip(shape, spacing)))


def surface_distances(pred: np.ndarray, gt: np.ndarray, spacing) -> tuple:
    """(HD95, ASD) in millimeters.

    HD95 pools both directed surface-distance sets and takes the linearly
    interpolated 95th percentile; ASD is the asymmetric mean distance from the
    prediction surface to the ground-truth surface.
    """
    spacing = check_spacing(spacing)
    pred = np.asarray(pred, dtype=bool)
    gt = np.asarray(gt, dtype=bool)
    if pred.shape != gt.shape:
        raise ValueError(f"mask shapes differ: {pred.shape} vs {gt.shape}")
    pred_any, gt_any = pred.any(), gt.any()
    if not pred_any and not gt_any:
        return 0.0, 0.0
    if pred_any != gt_any:
        diag = _physical_diagonal(pred.shape, spacing)
        return diag, diag

    scale = np.asarray(spacing, dtype=np.float64)
    p_coords = np.argwhere(surface_mask(pred)) * scale
    g_coords = np.argwhere(surface_mask(gt)) * scale
    d_pg = cKDTree(g_coords).query(p_coords, k=1)[0]
    d_gp = cKDTree(p_coords).query(g_coords, k=1)[0]
    hd95 = float(np.percentile(np.concatenate([d_pg, d_gp]), 95))
    asd = float(d_pg.mean())
    return hd95, asd


def volume_cc(mask: np.ndarray, spacing) -> float:
    spacing = check_spacing(spacing)
    return float(np.count_nonzero(mask)) * float(np.prod(spacing)) / 1000.0


def volume_group(volume_in_cc: float, thresholds=DEFAULT_GROUP_THRESHOLDS) -> str:
    """'A' above the upper threshold, 'B' on the closed interval, 'C' below."""
    lo, hi = (float(t) for t in thresholds)
    if not 0 < lo <= hi:
        raise ValueError(f"thresholds must satisfy 0 < lo <= hi, got {thresholds}")
    if volume_in_cc > hi:
        return "A"
    if volume_in_cc >= lo:
        return "B"
    return "C"


@dataclass
class CaseMetrics:
    case_id: str
    precision: float
    recall: float
    dice: float
    hd95: float
    asd: float
    volume_cc: float
    group: str


def evaluate_case(
    case_id: str,
    pred: np.ndarray,
    gt: np.ndarray,
    spacing,
    thresholds=DEFAULT_GROUP_THRESHOLDS,
) -> CaseMetrics:
    overlap = overlap_metrics(pred, gt)
    hd95, asd = surface_distances(pred, gt, spacing)
    v_cc = volume_cc(gt, spacing)
    return CaseMetrics(
        case_id=case_id,
        precision=overlap["precision"],
        recall=overlap["recall"],
        dice=overlap["dice"],
        hd95=hd95,
        asd=asd,
        volume_cc=v_cc,
        group=volume_group(v_cc, thresholds),
    )


@dataclass
class MetricsReport:
    cases: list
    groups: dict  # group -> {"n": int, "<metric>_mean": float, "<metric>_std": float}
    overall: dict


def _aggregate(cases: Sequence[CaseMetrics]) -> dict:
    stats = {"n": len(cases)}
    for name in METRIC_NAMES:
        values = np.array([getattr(c, name) for c in cases], dtype=np.float64)
        stats[f"{name}_mean"] = float(values.mean())
        stats[f"{name}_std"] = float(values.std())  # population std
    return stats


def emit_report(
    cases: Sequence[CaseMetrics],
    csv_path: Optional[str] = None,
    json_path: Optional[str] = None,
) -> MetricsReport:
    """Aggregate per-case metrics into per-group and overall mean +- std tables."""
    if not cases:
        raise ValueError("emit_report needs at least one case")
    cases = sorted(cases, key=lambda c: c.case_id)
    groups = {}
    for g in sorted({c.group for c in cases}):
        groups[g] = _aggregate([c for c in cases if c.group == g])
    report = MetricsReport(cases=list(cases), groups=groups, overall=_aggregate(cases))

    if csv_path:
        fields = ["case_id", "volume_cc", "group", *METRIC_NAMES]
        with open(csv_path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(fields)
            for c in cases:
                writer.writerow([getattr(c, f) for f in fields])
    if json_path:
        payload = {
            "cases": [dataclasses.asdict(c) for c in cases],
            "groups": report.groups,
            "overall": report.overall,
        }
        with open(json_path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return report


def load_report(json_path) -> dict:
    with open(json_path, "r", encoding="utf-8") as fh:
        return json.load(fh)
