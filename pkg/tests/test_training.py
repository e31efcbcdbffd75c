"""Training-loop tests: schedule math, fold hygiene, the ratio-based loss
weighting chain across epochs, log format, artifacts, and failure handling.

The multi-epoch checks run a miniature end-to-end training on small generated
volumes so that every logged column can be replayed against closed-form rules.
"""

import itertools
import json
import math
import re
from pathlib import Path

import pytest
import torch

from ptseg.config import ModelConfig, TrainConfig
from ptseg.phantom import PhantomSpec, generate_cases
from ptseg.training import (
    TRAINLOG_HEADER,
    TrainingAborted,
    kfold_split,
    lr_schedule,
    read_train_log,
    train,
)


class TestLearningRateSchedule:
    def test_first_epoch_uses_the_base_rate(self):
        assert lr_schedule(0, 200, 0.01) == 0.01

    def test_known_value_near_the_end(self):
        # 0.01 * (1 - 199/200) ** 0.9
        assert lr_schedule(199, 200, 0.01) == pytest.approx(8.4933e-05, rel=1e-4)

    def test_strictly_decreasing(self):
        values = [lr_schedule(e, 50, 0.3) for e in range(50)]
        assert all(a > b for a, b in zip(values, values[1:]))
        assert values[-1] > 0.0

    def test_out_of_range_epochs_rejected(self):
        with pytest.raises(ValueError):
            lr_schedule(200, 200, 0.01)
        with pytest.raises(ValueError):
            lr_schedule(-1, 200, 0.01)


class TestKFold:
    IDS = [f"case_{i:04d}" for i in range(11)]

    def test_validation_sets_partition_the_pool(self):
        folds = kfold_split(self.IDS, 3, seed=9)
        assert len(folds) == 3
        all_val = list(itertools.chain.from_iterable(val for _, val in folds))
        assert sorted(all_val) == sorted(self.IDS)
        assert len(set(all_val)) == len(self.IDS)

    def test_train_is_the_exact_complement(self):
        for train_ids, val_ids in kfold_split(self.IDS, 4, seed=1):
            assert not set(train_ids) & set(val_ids)
            assert sorted(train_ids + val_ids) == sorted(self.IDS)
            assert train_ids == sorted(train_ids)
            assert val_ids == sorted(val_ids)

    def test_fold_sizes_differ_by_at_most_one(self):
        sizes = [len(val) for _, val in kfold_split(self.IDS, 4, seed=3)]
        assert max(sizes) - min(sizes) <= 1
        assert sum(sizes) == len(self.IDS)

    def test_same_seed_same_split_and_input_order_irrelevant(self):
        a = kfold_split(self.IDS, 5, seed=7)
        b = kfold_split(list(reversed(self.IDS)), 5, seed=7)
        assert a == b

    def test_different_seed_changes_the_split(self):
        a = kfold_split(self.IDS, 5, seed=7)
        b = kfold_split(self.IDS, 5, seed=8)
        assert a != b

    def test_degenerate_requests_rejected(self):
        with pytest.raises(ValueError):
            kfold_split(self.IDS, 1, seed=0)
        with pytest.raises(ValueError):
            kfold_split(self.IDS[:3], 4, seed=0)


class TestTrainLogFormat:
    def test_header_is_pinned(self):
        assert TRAINLOG_HEADER == "epoch,lr,lambda,loss_total,loss_dice,loss_dist,val_dice"

    def test_read_rejects_a_foreign_header(self, tmp_path):
        path = tmp_path / "train_log.csv"
        path.write_text("epoch,lr\n0,0.1\n", encoding="utf-8")
        with pytest.raises(ValueError):
            read_train_log(path)


def _mini_train_config(tmp_path, name, **overrides) -> TrainConfig:
    model = ModelConfig(
        patch_size=(4, 8, 8),
        n_modalities=3,
        base_channels=2,
        n_stages=1,
        heads_per_stage=(2,),
        window_size=(2, 2, 2),
    )
    base = dict(
        model=model,
        data_dir="",
        out_dir=str(tmp_path / name),
        loss="dice+ama",
        epochs=3,
        steps_per_epoch=2,
        batch_size=2,
        lr0=0.01,
        folds=3,
        fold=0,
        seed=11,
        num_threads=1,
    )
    base.update(overrides)
    return TrainConfig(**base)


@pytest.fixture(scope="module")
def small_pool():
    template = PhantomSpec(
        shape=(8, 32, 32), spacing=(4.0, 0.8, 0.8), tumor_volume_cc=(0.5, 1.5)
    )
    return generate_cases(6, base_seed=77, template=template)


@pytest.fixture(scope="module")
def run(small_pool, tmp_path_factory):
    tmp_path = tmp_path_factory.mktemp("train")
    config = _mini_train_config(tmp_path, "run")
    result = train(config, volumes=small_pool, log_stream=open("/dev/null", "w"))
    return config, result


class TestTrainingLoop:
    def test_artifacts_written(self, run):
        config, result = run
        out = Path(config.out_dir)
        for name in (
            "train_log.csv",
            "val_log.json",
            "split.json",
            "config.json",
            "best.ckpt",
            "last.ckpt",
        ):
            assert (out / name).exists(), name

    def test_logged_lr_column_follows_polynomial_decay_exactly(self, run):
        config, result = run
        rows = read_train_log(Path(config.out_dir) / "train_log.csv")
        assert [r["epoch"] for r in rows] == list(range(config.epochs))
        for row in rows:
            assert row["lr"] == lr_schedule(row["epoch"], config.epochs, config.lr0)

    def test_lambda_chain_is_the_per_epoch_loss_ratio(self, run):
        config, result = run
        rows = read_train_log(Path(config.out_dir) / "train_log.csv")
        assert rows[0]["lambda"] == config.lambda0
        for prev, nxt in zip(rows, rows[1:]):
            expected = prev["loss_dist"] / max(prev["loss_dice"], config.lambda_floor)
            assert nxt["lambda"] == pytest.approx(expected, abs=1e-6)

    def test_result_matches_the_log(self, run):
        config, result = run
        rows = read_train_log(Path(config.out_dir) / "train_log.csv")
        val_dices = [r["val_dice"] for r in rows]
        assert result.best_val_dice == max(val_dices)
        assert result.best_epoch == val_dices.index(max(val_dices))
        for mem, disk in zip(result.log_rows, rows):
            assert mem == disk

    def test_split_has_no_leakage_and_is_recorded(self, run):
        config, result = run
        with open(Path(config.out_dir) / "split.json", encoding="utf-8") as fh:
            split = json.load(fh)
        assert split["train"] == result.train_cases
        assert split["val"] == result.val_cases
        assert not set(split["train"]) & set(split["val"])
        assert len(split["train"]) + len(split["val"]) == 6

    def test_val_log_records_both_validation_series(self, run):
        config, result = run
        with open(Path(config.out_dir) / "val_log.json", encoding="utf-8") as fh:
            val_log = json.load(fh)
        assert [v["epoch"] for v in val_log] == list(range(config.epochs))
        for entry in val_log:
            assert math.isfinite(entry["val_dice"])
            assert math.isfinite(entry["val_dist"])

    def test_rerun_is_byte_identical(self, run, small_pool, tmp_path_factory):
        config, result = run
        other = _mini_train_config(tmp_path_factory.mktemp("train2"), "rerun")
        train(other, volumes=small_pool, log_stream=open("/dev/null", "w"))
        a = (Path(config.out_dir) / "train_log.csv").read_bytes()
        b = (Path(other.out_dir) / "train_log.csv").read_bytes()
        assert a == b
        assert (Path(config.out_dir) / "best.ckpt").read_bytes() == (
            Path(other.out_dir) / "best.ckpt"
        ).read_bytes()


class TestLossVariants:
    def test_dice_only_keeps_lambda_fixed(self, small_pool, tmp_path):
        config = _mini_train_config(tmp_path, "dice", loss="dice", epochs=2)
        train(config, volumes=small_pool, log_stream=open("/dev/null", "w"))
        rows = read_train_log(Path(config.out_dir) / "train_log.csv")
        assert [r["lambda"] for r in rows] == [config.lambda0] * 2


class TestAbort:
    def test_non_finite_loss_names_the_batch_seed(self, small_pool, tmp_path, monkeypatch):
        def poisoned_loss(logits, target, spacing, state, variant):
            return logits.sum() * torch.nan, {"dice": 0.0, "dist": 0.0, "ce": 0.0}

        monkeypatch.setattr("ptseg.training.compound_loss", poisoned_loss)
        config = _mini_train_config(tmp_path, "abort", seed=11)
        with pytest.raises(TrainingAborted, match=re.escape("[11, 0]")):
            train(config, volumes=small_pool, log_stream=open("/dev/null", "w"))

    def test_duplicate_case_ids_rejected(self, small_pool, tmp_path):
        config = _mini_train_config(tmp_path, "dup")
        pool = list(small_pool) + [small_pool[0]]
        with pytest.raises(ValueError, match="duplicate"):
            train(config, volumes=pool, log_stream=open("/dev/null", "w"))

    def test_missing_data_dir_rejected(self, tmp_path):
        config = _mini_train_config(tmp_path, "nodata", data_dir="")
        with pytest.raises(ValueError, match="no training data"):
            train(config, log_stream=open("/dev/null", "w"))
