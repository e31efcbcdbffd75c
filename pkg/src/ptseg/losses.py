"""Segmentation losses: an activation-center distance term, soft Dice, cross-entropy,
and the ratio-balanced compound loss with its per-epoch weight update."""

from __future__ import annotations

from dataclasses import dataclass, replace

import torch
import torch.nn.functional as F

from .config import LOSS_VARIANTS


def activation_center(activation: torch.Tensor, epsilon: float = 1e-8) -> torch.Tensor:
    """Per-axis regularized intensity centroid of a non-negative 3D map.

    Accepts ``(D, H, W)`` or ``(B, D, H, W)`` and returns ``(3,)`` or ``(B, 3)``
    voxel coordinates. Weights are ``1 + activation/epsilon`` (the epsilon-
    regularized centroid up to an overall scale, which cancels); an all-zero
    map therefore reduces to exact integer arithmetic and yields the exact
    grid midpoint ``(n - 1) / 2`` per axis.
    """
    if activation.dim() == 3:
        return activation_center(activation.unsqueeze(0), epsilon).squeeze(0)
    if activation.dim() != 4:
        raise ValueError(f"expected a 3D or batched 4D map, got shape {tuple(activation.shape)}")
    weights = activation / epsilon + 1.0
    total = weights.sum(dim=(1, 2, 3))
    centers = []
    for ax in range(3):
        coords = torch.arange(activation.shape[ax + 1], dtype=activation.dtype, device=activation.device)
        other = tuple(d for d in (1, 2, 3) if d != ax + 1)
        marginal = weights.sum(dim=other)  # (B, n_ax)
        centers.append((marginal * coords).sum(dim=1) / total)
    return torch.stack(centers, dim=1)


def anatomy_aware_loss(
    pred: torch.Tensor,
    target: torch.Tensor,
    spacing,
    beta: float = 1.5,
    epsilon: float = 1e-8,
) -> torch.Tensor:
    """Distance between prediction and target activation centers.

    Per axis: ``|gap_in_voxels| ** beta * spacing_mm``, summed over the three
    axes; batched inputs are averaged. ``spacing`` is a triple or a ``(B, 3)``
    array for per-sample voxel sizes.
    """
    if pred.shape != target.shape:
        raise ValueError(f"pred {tuple(pred.shape)} and target {tuple(target.shape)} differ")
    batched = pred.dim() == 4
    c_pred = activation_center(pred, epsilon)
    c_target = activation_center(target, epsilon)
    spacing_t = torch.as_tensor(spacing, dtype=pred.dtype, device=pred.device)
    gaps = (c_target - c_pred).abs() ** beta * spacing_t
    per_sample = gaps.sum(dim=-1)
    return per_sample.mean() if batched else per_sample


def dice_loss(pred: torch.Tensor, target: torch.Tensor, smooth: float = 1e-5) -> torch.Tensor:
    """Soft Dice loss on foreground probability maps; batched inputs are averaged."""
    if pred.shape != target.shape:
        raise ValueError(f"pred {tuple(pred.shape)} and target {tuple(target.shape)} differ")
    dims = tuple(range(1, pred.dim())) if pred.dim() == 4 else tuple(range(pred.dim()))
    inter = (pred * target).sum(dim=dims)
    denom = pred.sum(dim=dims) + target.sum(dim=dims)
    dice = (2.0 * inter + smooth) / (denom + smooth)
    return (1.0 - dice).mean()


def ce_loss(logits: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Voxel-mean cross-entropy; ``logits`` is (B, n_classes, D, H, W), target integer classes."""
    return F.cross_entropy(logits, target.long())


@dataclass
class LossState:
    """Compound-loss bookkeeping: current Dice weight plus epoch accumulators."""

    beta: float = 1.5
    epsilon: float = 1e-8
    lam: float = 1.0
    lambda_floor: float = 1e-8
    dist_sum: float = 0.0
    dice_sum: float = 0.0
    n_batches: int = 0

    def accumulate(self, dist_value: float, dice_value: float) -> None:
        self.dist_sum += float(dist_value)
        self.dice_sum += float(dice_value)
        self.n_batches += 1

    @property
    def dist_mean(self) -> float:
        return self.dist_sum / self.n_batches if self.n_batches else 0.0

    @property
    def dice_mean(self) -> float:
        return self.dice_sum / self.n_batches if self.n_batches else 0.0


def update_lambda(state: LossState) -> LossState:
    """Next-epoch Dice weight: ratio of this epoch's distance mean to Dice mean."""
    if state.n_batches == 0:
        return replace(state)
    lam = state.dist_mean / max(state.dice_mean, state.lambda_floor)
    return replace(state, lam=lam, dist_sum=0.0, dice_sum=0.0, n_batches=0)


def compound_loss(
    logits: torch.Tensor,
    target: torch.Tensor,
    spacing,
    state: LossState,
    variant: str = "dice+ama",
):
    """Total training loss for one batch plus its float components.

    Returns ``(total, parts)`` where ``parts`` carries ``dice``, ``dist`` and
    ``ce`` as plain floats (zero when a term is not part of ``variant``).
    """
    if variant not in LOSS_VARIANTS:
        raise ValueError(f"unknown loss variant {variant!r}; expected one of {LOSS_VARIANTS}")
    target_f = target.to(logits.dtype)
    probs_fg = torch.softmax(logits, dim=1)[:, 1]
    parts = {"dice": 0.0, "dist": 0.0, "ce": 0.0}

    if variant == "ce":
        total = ce_loss(logits, target)
        parts["ce"] = float(total.detach())
        return total, parts

    dice = dice_loss(probs_fg, target_f)
    parts["dice"] = float(dice.detach())
    if variant == "dice":
        return dice, parts
    if variant == "dice+ce":
        ce = ce_loss(logits, target)
        parts["ce"] = float(ce.detach())
        return dice + ce, parts

    dist = anatomy_aware_loss(probs_fg, target_f, spacing, state.beta, state.epsilon)
    parts["dist"] = float(dist.detach())
    return dist + state.lam * dice, parts
