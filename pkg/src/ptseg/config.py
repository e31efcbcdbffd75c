"""Model and training configuration objects with JSON round-tripping."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from typing import Optional

from .validation import check_positive_triple

#: factors used by stages 1-2 / stages 3+ when no explicit schedule is given
_EARLY_MERGE = (1, 2, 2)
_LATE_MERGE = (2, 2, 2)

#: cumulative spatial reduction of the convolutional embedding, (depth, height, width)
EMBED_STRIDE = (2, 4, 4)

LOSS_VARIANTS = ("ce", "dice", "dice+ce", "dice+ama")


def default_merge_schedule(n_stages: int) -> tuple:
    """Per-stage merge factors: in-plane halving first, full halving from stage 3."""
    return tuple(_EARLY_MERGE if s < 2 else _LATE_MERGE for s in range(n_stages))


@dataclass
class ModelConfig:
    """Architecture hyperparameters.

    ``patch_size`` is the (depth, height, width) the network is built for;
    every dimension must be divisible by the embedding stride (2, 4, 4).
    """

    patch_size: tuple = (8, 320, 320)
    n_modalities: int = 3
    base_channels: int = 24
    n_stages: int = 4
    heads_per_stage: tuple = (4, 8, 16, 32)
    window_size: tuple = (2, 4, 4)
    merge_schedule: Optional[tuple] = None
    mlp_ratio: float = 4.0
    n_classes: int = 2
    qkv_bias: bool = True

    def __post_init__(self):
        self.patch_size = check_positive_triple(self.patch_size, "patch_size")
        self.window_size = check_positive_triple(self.window_size, "window_size")
        if self.n_modalities not in (1, 2, 3):
            raise ValueError(f"n_modalities must be 1, 2 or 3, got {self.n_modalities}")
        if self.n_stages < 1:
            raise ValueError("n_stages must be at least 1")
        if self.base_channels < 1:
            raise ValueError("base_channels must be at least 1")
        if self.n_classes < 2:
            raise ValueError("n_classes must be at least 2")
        self.heads_per_stage = tuple(int(h) for h in self.heads_per_stage)
        if len(self.heads_per_stage) < self.n_stages:
            raise ValueError(
                f"heads_per_stage provides {len(self.heads_per_stage)} entries "
                f"for {self.n_stages} stages"
            )
        if self.merge_schedule is None:
            self.merge_schedule = default_merge_schedule(self.n_stages)
        else:
            self.merge_schedule = tuple(
                check_positive_triple(f, "merge_schedule entry") for f in self.merge_schedule
            )
            if len(self.merge_schedule) != self.n_stages:
                raise ValueError("merge_schedule must have one factor triple per stage")
            for f in self.merge_schedule:
                if f not in (_EARLY_MERGE, _LATE_MERGE):
                    raise ValueError(f"merge factors must be (1,2,2) or (2,2,2), got {f}")
        for ax in range(3):
            if self.patch_size[ax] % EMBED_STRIDE[ax] != 0:
                raise ValueError(
                    f"patch_size {self.patch_size} is not divisible by the "
                    f"embedding stride {EMBED_STRIDE}"
                )
        for s in range(self.n_stages):
            channels = self.stage_channels(s)
            if channels % self.heads_per_stage[s] != 0:
                raise ValueError(
                    f"stage {s} channels ({channels}) are not divisible by "
                    f"{self.heads_per_stage[s]} heads"
                )

    def stage_channels(self, stage: int) -> int:
        """Operating channel count of 0-based ``stage`` (embedding emits 2C)."""
        return 2 * self.base_channels * (2 ** stage)

    @property
    def bottleneck_channels(self) -> int:
        return 2 * self.stage_channels(self.n_stages - 1)


@dataclass
class TrainConfig:
    """Everything the training harness needs; serializable to/from JSON."""

    data_dir: str = ""
    out_dir: str = ""
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: str = "dice+ama"
    beta: float = 1.5
    epsilon: float = 1e-8
    lambda0: float = 1.0
    lambda_floor: float = 1e-8
    epochs: int = 200
    steps_per_epoch: int = 250
    batch_size: int = 2
    lr0: float = 0.01
    momentum: float = 0.95
    nesterov: bool = True
    folds: int = 5
    fold: int = 0
    seed: int = 42
    overlap: float = 0.5
    threshold: float = 0.5
    num_threads: int = 1

    def __post_init__(self):
        if isinstance(self.model, dict):
            self.model = ModelConfig(**self.model)
        if self.loss not in LOSS_VARIANTS:
            raise ValueError(f"loss must be one of {LOSS_VARIANTS}, got {self.loss!r}")
        if self.epochs < 1 or self.steps_per_epoch < 1 or self.batch_size < 1:
            raise ValueError("epochs, steps_per_epoch and batch_size must be positive")
        if not 0.0 <= self.overlap < 1.0:
            raise ValueError(f"overlap must be in [0, 1), got {self.overlap}")
        if self.folds < 2:
            raise ValueError("folds must be at least 2")
        if not 0 <= self.fold < self.folds:
            raise ValueError(f"fold index {self.fold} out of range for {self.folds} folds")
        if self.beta <= 0 or self.epsilon <= 0:
            raise ValueError("beta and epsilon must be positive")
        if self.lr0 <= 0:
            raise ValueError("lr0 must be positive")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        data = dict(data)
        model = data.pop("model", {})
        if isinstance(model, ModelConfig):
            model = dataclasses.asdict(model)
        return cls(model=ModelConfig(**model), **data)

    def to_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))
