"""Estimator-style facade: fit on labeled volumes, predict masks for new ones."""

from __future__ import annotations

import tempfile

import numpy as np
from sklearn.base import BaseEstimator

from .checkpoint import load_model
from .config import ModelConfig, TrainConfig
from .inference import predict_mask, sliding_window_infer
from .metrics import overlap_metrics
from .phantom import MultimodalVolume, normalize_volume
from .training import train


def _check_volumes(X) -> list:
    if isinstance(X, MultimodalVolume):
        return [X]
    volumes = list(X)
    if not volumes:
        raise ValueError("X must contain at least one volume")
    for v in volumes:
        if not isinstance(v, MultimodalVolume):
            raise TypeError(
                f"X must hold MultimodalVolume objects, got {type(v).__name__}"
            )
    return volumes


class PTNetSegmenter(BaseEstimator):
    """Scikit-learn style wrapper around the training and inference pipeline.

    ``fit`` trains on a list of labeled volumes (masks travel inside the
    volume objects, so ``y`` is unused); ``predict`` returns one binary mask
    per input volume.
    """

    def __init__(
        self,
        patch_size=(8, 32, 32),
        base_channels=6,
        n_stages=3,
        n_modalities=3,
        heads_per_stage=(4, 8, 16),
        window_size=(2, 4, 4),
        loss="dice+ama",
        beta=1.5,
        epsilon=1e-8,
        lambda0=1.0,
        epochs=10,
        steps_per_epoch=25,
        batch_size=2,
        lr0=0.01,
        momentum=0.95,
        folds=5,
        fold=0,
        seed=42,
        overlap=0.5,
        threshold=0.5,
        out_dir=None,
    ):
        self.patch_size = patch_size
        self.base_channels = base_channels
        self.n_stages = n_stages
        self.n_modalities = n_modalities
        self.heads_per_stage = heads_per_stage
        self.window_size = window_size
        self.loss = loss
        self.beta = beta
        self.epsilon = epsilon
        self.lambda0 = lambda0
        self.epochs = epochs
        self.steps_per_epoch = steps_per_epoch
        self.batch_size = batch_size
        self.lr0 = lr0
        self.momentum = momentum
        self.folds = folds
        self.fold = fold
        self.seed = seed
        self.overlap = overlap
        self.threshold = threshold
        self.out_dir = out_dir

    def _train_config(self, out_dir: str) -> TrainConfig:
        model = ModelConfig(
            patch_size=tuple(self.patch_size),
            n_modalities=self.n_modalities,
            base_channels=self.base_channels,
            n_stages=self.n_stages,
            heads_per_stage=tuple(self.heads_per_stage),
            window_size=tuple(self.window_size),
        )
        return TrainConfig(
            data_dir="",
            out_dir=out_dir,
            model=model,
            loss=self.loss,
            beta=self.beta,
            epsilon=self.epsilon,
            lambda0=self.lambda0,
            epochs=self.epochs,
            steps_per_epoch=self.steps_per_epoch,
            batch_size=self.batch_size,
            lr0=self.lr0,
            momentum=self.momentum,
            folds=self.folds,
            fold=self.fold,
            seed=self.seed,
            overlap=self.overlap,
            threshold=self.threshold,
        )

    def fit(self, X, y=None):
        volumes = _check_volumes(X)
        out_dir = self.out_dir or tempfile.mkdtemp(prefix="ptseg_fit_")
        config = self._train_config(out_dir)
        self.result_ = train(config, volumes=volumes)
        self.model_, self.checkpoint_ = load_model(f"{out_dir}/best.ckpt")
        self.out_dir_ = out_dir
        return self

    def _require_fitted(self):
        if not hasattr(self, "model_"):
            raise RuntimeError("this estimator is not fitted yet; call fit first")

    def predict_proba(self, X) -> list:
        """Per-volume (n_classes, D, H, W) probability maps."""
        self._require_fitted()
        maps = []
        for volume in _check_volumes(X):
            normalized = normalize_volume(volume)
            maps.append(
                sliding_window_infer(
                    self.model_, normalized.intensities, tuple(self.patch_size), self.overlap
                )
            )
        return maps

    def predict(self, X) -> list:
        """Per-volume binary uint8 masks."""
        return [predict_mask(p, self.threshold) for p in self.predict_proba(X)]

    def score(self, X, y=None) -> float:
        """Mean Dice of predictions against the masks carried by ``X``."""
        volumes = _check_volumes(X)
        preds = self.predict(volumes)
        dices = [
            overlap_metrics(pred, volume.mask)["dice"]
            for pred, volume in zip(preds, volumes)
        ]
        return float(np.mean(dices))
