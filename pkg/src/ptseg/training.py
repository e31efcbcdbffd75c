"""Training loop: per-step keyed sampling, ratio-balanced loss weighting,
polynomial learning-rate decay, per-epoch validation, logging, checkpoints."""

from __future__ import annotations

import dataclasses
import json
import sys
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import torch

from .checkpoint import save_checkpoint
from .config import TrainConfig
from .inference import predict_mask, sliding_window_infer
from .losses import LossState, anatomy_aware_loss, compound_loss, update_lambda
from .metrics import overlap_metrics
from .model import PTNet, count_parameters
from .phantom import make_rng, normalize_volume
from .sampling import sample_batch
from .storage import load_dataset

TRAINLOG_HEADER = "epoch,lr,lambda,loss_total,loss_dice,loss_dist,val_dice"


class TrainingAborted(RuntimeError):
    """Raised when a step produces a non-finite loss; names the batch seed."""


def lr_schedule(epoch: int, epochs: int, lr0: float) -> float:
    """Polynomial decay, exponent 0.9; ``epoch`` is 0-based."""
    if not 0 <= epoch < epochs:
        raise ValueError(f"epoch {epoch} out of range for {epochs} epochs")
    return lr0 * (1.0 - epoch / epochs) ** 0.9


def kfold_split(case_ids, k: int, seed: int) -> list:
    """Deterministic k-fold partition: Philox shuffle, then round-robin.

    Returns ``k`` (train_ids, val_ids) pairs; validation sets are disjoint,
    cover every case, and differ in size by at most one.
    """
    ids = sorted(case_ids)
    if k < 2:
        raise ValueError("k must be at least 2")
    if len(ids) < k:
        raise ValueError(f"need at least {k} cases for {k} folds, got {len(ids)}")
    order = make_rng(seed).permutation(len(ids))
    shuffled = [ids[i] for i in order]
    folds = []
    for fold in range(k):
        val = set(shuffled[fold::k])
        folds.append(
            (sorted(i for i in ids if i not in val), sorted(val))
        )
    return folds


@dataclass
class TrainResult:
    out_dir: str
    train_cases: list
    val_cases: list
    best_val_dice: float
    best_epoch: int
    final_lambda: float
    n_parameters: int
    log_rows: list
    val_log: list


def _float_cell(value: float) -> str:
    return repr(float(value))


def _validate(model, val_volumes, config: TrainConfig):
    """Mean binary Dice and mean center-distance loss over the validation split."""
    dices, dists = [], []
    patch = config.model.patch_size
    for normalized, original in val_volumes:
        probs = sliding_window_infer(model, normalized.intensities, patch, config.overlap)
        pred = predict_mask(probs, config.threshold)
        dices.append(overlap_metrics(pred, original.mask)["dice"])
        dist = anatomy_aware_loss(
            torch.from_numpy(probs[1]).double(),
            torch.from_numpy(original.mask.astype(np.float64)),
            original.spacing,
            beta=config.beta,
            epsilon=config.epsilon,
        )
        dists.append(float(dist))
    return float(np.mean(dices)), float(np.mean(dists))


def train(config: TrainConfig, volumes=None, log_stream=None) -> TrainResult:
    """Run the full training loop and write artifacts under ``config.out_dir``.

    ``volumes`` bypasses disk loading (useful for tests); otherwise cases are
    read from ``config.data_dir``. Artifacts: ``train_log.csv`` (fixed header,
    byte-deterministic), ``val_log.json``, ``split.json``, ``config.json``,
    ``best.ckpt`` and ``last.ckpt``.
    """
    if log_stream is None:
        log_stream = sys.stderr
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    torch.manual_seed(config.seed)
    torch.set_num_threads(config.num_threads)

    if volumes is None:
        if not config.data_dir:
            raise ValueError("no training data: config.data_dir is empty and no volumes given")
        volumes = load_dataset(config.data_dir)
    volumes = sorted(volumes, key=lambda v: v.case_id)
    if len(set(v.case_id for v in volumes)) != len(volumes):
        raise ValueError("duplicate case ids in the training pool")

    folds = kfold_split([v.case_id for v in volumes], config.folds, config.seed)
    train_ids, val_ids = folds[config.fold]
    by_id = {v.case_id: v for v in volumes}
    train_volumes = [normalize_volume(by_id[i]) for i in train_ids]
    val_volumes = [(normalize_volume(by_id[i]), by_id[i]) for i in val_ids]

    model = PTNet(config.model)
    optimizer = torch.optim.SGD(
        model.parameters(),
        lr=config.lr0,
        momentum=config.momentum,
        nesterov=config.nesterov,
    )
    state = LossState(
        beta=config.beta,
        epsilon=config.epsilon,
        lam=config.lambda0,
        lambda_floor=config.lambda_floor,
    )

    config.to_json(out_dir / "config.json")
    with open(out_dir / "split.json", "w", encoding="utf-8") as fh:
        json.dump(
            {"folds": config.folds, "fold": config.fold, "train": train_ids, "val": val_ids},
            fh,
            indent=2,
            sort_keys=True,
        )
        fh.write("\n")

    log_rows = []
    val_log = []
    best_val = -1.0
    best_epoch = -1
    patch = config.model.patch_size

    for epoch in range(config.epochs):
        lr = lr_schedule(epoch, config.epochs, config.lr0)
        for group in optimizer.param_groups:
            group["lr"] = lr

        model.train()
        total_sum = 0.0
        for step in range(config.steps_per_epoch):
            counter = epoch * config.steps_per_epoch + step
            rng = make_rng([config.seed, counter])
            batch = sample_batch(train_volumes, patch, config.batch_size, rng)
            x = torch.from_numpy(np.stack([p.intensities for p in batch]))
            y = torch.from_numpy(np.stack([p.mask for p in batch]).astype(np.int64))
            spacing = torch.tensor([p.spacing for p in batch], dtype=x.dtype)

            logits = model(x)
            total, parts = compound_loss(logits, y, spacing, state, config.loss)
            if not torch.isfinite(total):
                raise TrainingAborted(
                    f"non-finite loss at epoch {epoch} step {step}; "
                    f"offending batch seed [{config.seed}, {counter}]"
                )
            optimizer.zero_grad()
            total.backward()
            optimizer.step()

            state.accumulate(parts["dist"], parts["dice"])
            total_sum += float(total.detach())

        loss_total = total_sum / config.steps_per_epoch
        loss_dice = state.dice_mean
        loss_dist = state.dist_mean

        val_dice, val_dist = _validate(model, val_volumes, config)
        log_rows.append(
            {
                "epoch": epoch,
                "lr": lr,
                "lambda": state.lam,
                "loss_total": loss_total,
                "loss_dice": loss_dice,
                "loss_dist": loss_dist,
                "val_dice": val_dice,
            }
        )
        val_log.append({"epoch": epoch, "val_dice": val_dice, "val_dist": val_dist})
        print(
            f"epoch {epoch}: lr={lr:.5f} lambda={state.lam:.4f} "
            f"loss={loss_total:.4f} val_dice={val_dice:.4f}",
            file=log_stream,
        )

        train_meta = {
            "epoch": epoch,
            "lambda": state.lam,
            "lr": lr,
            "val_dice": val_dice,
            "loss": config.loss,
            "momentum": config.momentum,
            "nesterov": config.nesterov,
            "seed": config.seed,
        }
        if val_dice > best_val:
            best_val = val_dice
            best_epoch = epoch
            save_checkpoint(out_dir / "best.ckpt", model, train_meta, optimizer)
        save_checkpoint(out_dir / "last.ckpt", model, train_meta, optimizer)

        if config.loss == "dice+ama":
            state = update_lambda(state)
        else:
            state = replace(state, dist_sum=0.0, dice_sum=0.0, n_batches=0)

    _write_train_log(out_dir / "train_log.csv", log_rows)
    with open(out_dir / "val_log.json", "w", encoding="utf-8") as fh:
        json.dump(val_log, fh, indent=2, sort_keys=True)
        fh.write("\n")

    return TrainResult(
        out_dir=str(out_dir),
        train_cases=train_ids,
        val_cases=val_ids,
        best_val_dice=best_val,
        best_epoch=best_epoch,
        final_lambda=state.lam,
        n_parameters=count_parameters(model),
        log_rows=log_rows,
        val_log=val_log,
    )


def _write_train_log(path, rows) -> None:
    lines = [TRAINLOG_HEADER]
    for row in rows:
        lines.append(
            ",".join(
                [str(row["epoch"])]
                + [
                    _float_cell(row[key])
                    for key in ("lr", "lambda", "loss_total", "loss_dice", "loss_dist", "val_dice")
                ]
            )
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_train_log(path) -> list:
    """Parse ``train_log.csv`` back into a list of row dicts (exact floats)."""
    text = Path(path).read_text(encoding="utf-8").strip().splitlines()
    if not text or text[0] != TRAINLOG_HEADER:
        raise ValueError(f"unexpected training-log header in {path}")
    rows = []
    for line in text[1:]:
        cells = line.split(",")
        keys = TRAINLOG_HEADER.split(",")
        row = {"epoch": int(cells[0])}
        for key, cell in zip(keys[1:], cells[1:]):
            row[key] = float(cell)
        rows.append(row)
    return rows
