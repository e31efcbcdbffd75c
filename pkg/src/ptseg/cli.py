"""Command-line entry point: generate, train, infer, evaluate, gradcheck.

Exit codes: 0 on success, 1 on runtime failure, 2 on usage errors. Flags
override values loaded from ``--config``.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .checkpoint import load_model
from .config import LOSS_VARIANTS, ModelConfig, TrainConfig
from .gradcheck import run_gradcheck
from .inference import predict_mask, sliding_window_infer
from .metrics import evaluate_case, emit_report
from .phantom import PhantomSpec, generate_cases, normalize_volume
from .storage import (
    CaseFormatError,
    list_cases,
    load_mask_case,
    load_volume,
    save_mask_case,
    save_volume,
)
from .training import TrainingAborted, train


def _triple(text: str, cast=int):
    parts = [cast(v) for v in text.split(",")]
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"expected three comma-separated values, got {text!r}")
    return tuple(parts)


def _pair(text: str, cast=float):
    parts = [cast(v) for v in text.split(",")]
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(f"expected two comma-separated values, got {text!r}")
    return tuple(parts)


def _int_triple(text: str):
    return _triple(text, int)


def _float_triple(text: str):
    return _triple(text, float)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ptseg", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="write synthetic multimodal cases")
    gen.add_argument("--out", required=True, help="output dataset directory")
    gen.add_argument("--count", type=int, default=40, help="number of cases")
    gen.add_argument("--seed", type=int, default=0, help="base seed; case i uses seed+i")
    gen.add_argument("--size", type=_int_triple, default=(16, 64, 64), metavar="D,H,W")
    gen.add_argument("--spacing", type=_float_triple, default=(4.0, 0.4, 0.4), metavar="a,b,c")
    gen.add_argument("--tumor-cc", type=_pair, default=(2.0, 6.0), metavar="lo,hi")
    gen.add_argument("--distractors", type=int, default=2)
    gen.add_argument("--modalities", type=int, choices=(1, 2, 3), default=3)
    gen.add_argument("--noise", type=float, default=0.01)

    tr = sub.add_parser("train", help="train a model")
    tr.add_argument("--data", help="dataset directory of case subdirectories")
    tr.add_argument("--out", help="output directory for logs and checkpoints")
    tr.add_argument("--config", help="JSON file with TrainConfig keys; flags override it")
    tr.add_argument("--loss", choices=LOSS_VARIANTS)
    tr.add_argument("--beta", type=float)
    tr.add_argument("--epsilon", type=float)
    tr.add_argument("--epochs", type=int)
    tr.add_argument("--steps", type=int, help="mini-batches per epoch")
    tr.add_argument("--batch", type=int)
    tr.add_argument("--lr0", type=float)
    tr.add_argument("--folds", type=int)
    tr.add_argument("--fold", type=int)
    tr.add_argument("--seed", type=int)
    tr.add_argument("--patch", type=_int_triple, metavar="D,H,W")
    tr.add_argument("--modalities", type=int, choices=(1, 2, 3))
    tr.add_argument("--window", type=_int_triple, metavar="d,h,w")
    tr.add_argument("--base-channels", type=int)
    tr.add_argument("--stages", type=int)
    tr.add_argument("--heads", help="comma-separated heads per stage")

    inf = sub.add_parser("infer", help="predict masks for a dataset")
    inf.add_argument("--model", required=True, help="checkpoint file")
    inf.add_argument("--data", required=True, help="dataset directory")
    inf.add_argument("--out", required=True, help="directory for predicted-mask cases")
    inf.add_argument("--overlap", type=float, default=0.5)
    inf.add_argument("--threshold", type=float, default=0.5)

    ev = sub.add_parser("evaluate", help="score predictions against ground truth")
    ev.add_argument("--pred", required=True, help="directory of predicted-mask cases")
    ev.add_argument("--gt", required=True, help="directory of ground-truth cases")
    ev.add_argument(
        "--spacing-from-meta",
        action="store_true",
        default=True,
        help="use voxel spacing recorded in each ground-truth meta.json (default)",
    )
    ev.add_argument("--groups", type=_pair, default=(4.0, 10.0), metavar="lo,hi")
    ev.add_argument("--report", help="comma-separated output paths: out.csv,out.json")

    gc = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    gc.add_argument("--seed", type=int, default=1)
    gc.add_argument("--maps", type=int, default=50)
    gc.add_argument("--params", type=int, default=20)

    return parser


def _cmd_generate(args) -> int:
    spec = PhantomSpec(
        shape=args.size,
        spacing=args.spacing,
        tumor_volume_cc=args.tumor_cc,
        n_distractors=args.distractors,
        n_modalities=args.modalities,
        noise_sigma=args.noise,
    )
    out = Path(args.out)
    volumes = generate_cases(args.count, args.seed, template=spec)
    for volume in volumes:
        save_volume(volume, out / volume.case_id)
    print(f"wrote {len(volumes)} cases under {out}")
    return 0


def _load_train_config(args, parser) -> TrainConfig:
    base = {}
    if args.config:
        with open(args.config, "r", encoding="utf-8") as fh:
            base = json.load(fh)
    model_dict = dict(base.get("model", {}))

    flag_to_model = {
        "patch": "patch_size",
        "modalities": "n_modalities",
        "window": "window_size",
        "base_channels": "base_channels",
        "stages": "n_stages",
    }
    for flag, key in flag_to_model.items():
        value = getattr(args, flag)
        if value is not None:
            model_dict[key] = value
    if args.heads is not None:
        model_dict["heads_per_stage"] = tuple(int(v) for v in args.heads.split(","))

    flag_to_train = {
        "data": "data_dir",
        "out": "out_dir",
        "loss": "loss",
        "beta": "beta",
        "epsilon": "epsilon",
        "epochs": "epochs",
        "steps": "steps_per_epoch",
        "batch": "batch_size",
        "lr0": "lr0",
        "folds": "folds",
        "fold": "fold",
        "seed": "seed",
    }
    train_dict = {k: v for k, v in base.items() if k != "model"}
    for flag, key in flag_to_train.items():
        value = getattr(args, flag)
        if value is not None:
            train_dict[key] = value

    if not train_dict.get("data_dir"):
        parser.error("train requires --data (or data_dir in --config)")
    if not train_dict.get("out_dir"):
        parser.error("train requires --out (or out_dir in --config)")
    try:
        return TrainConfig(model=ModelConfig(**model_dict), **train_dict)
    except (TypeError, ValueError) as exc:
        parser.error(str(exc))


def _cmd_train(args, parser) -> int:
    config = _load_train_config(args, parser)
    result = train(config)
    print(
        f"finished: best val dice {result.best_val_dice:.4f} at epoch {result.best_epoch}; "
        f"artifacts in {result.out_dir}"
    )
    return 0


def _cmd_infer(args) -> int:
    model, _ = load_model(args.model)
    out = Path(args.out)
    cases = list_cases(args.data)
    if not cases:
        raise CaseFormatError(f"no cases found under {args.data}")
    patch = model.config.patch_size
    for case_dir in cases:
        volume = load_volume(case_dir)
        normalized = normalize_volume(volume)
        probs = sliding_window_infer(model, normalized.intensities, patch, args.overlap)
        mask = predict_mask(probs, args.threshold)
        save_mask_case(mask, volume.spacing, out / volume.case_id, case_id=volume.case_id)
    print(f"wrote {len(cases)} predictions under {out}")
    return 0


def _cmd_evaluate(args) -> int:
    gt_dirs = {p.name: p for p in list_cases(args.gt)}
    pred_dirs = {p.name: p for p in list_cases(args.pred)}
    if not gt_dirs:
        raise CaseFormatError(f"no ground-truth cases under {args.gt}")
    missing = sorted(set(gt_dirs) - set(pred_dirs))
    if missing:
        raise CaseFormatError(f"predictions missing for cases: {missing[:5]}")

    cases = []
    for name in sorted(gt_dirs):
        gt_volume = load_volume(gt_dirs[name])
        pred_mask, _ = load_mask_case(pred_dirs[name])
        spacing = gt_volume.spacing  # --spacing-from-meta: always from ground truth
        cases.append(
            evaluate_case(name, pred_mask, gt_volume.mask, spacing, thresholds=args.groups)
        )

    csv_path = json_path = None
    if args.report:
        paths = args.report.split(",")
        if len(paths) != 2:
            raise ValueError("--report expects two comma-separated paths: out.csv,out.json")
        csv_path, json_path = paths
    report = emit_report(cases, csv_path=csv_path, json_path=json_path)
    overall = report.overall
    print(
        "cases={n} dice={dice:.4f} precision={precision:.4f} recall={recall:.4f} "
        "hd95={hd95:.3f}mm asd={asd:.3f}mm".format(
            n=len(cases),
            dice=overall["dice_mean"],
            precision=overall["precision_mean"],
            recall=overall["recall_mean"],
            hd95=overall["hd95_mean"],
            asd=overall["asd_mean"],
        )
    )
    return 0


def _cmd_gradcheck(args) -> int:
    reports = run_gradcheck(seed=args.seed, n_maps=args.maps, n_params=args.params)
    failed = False
    for report in reports:
        status = "ok" if report.passed else "FAIL"
        print(
            f"{report.name}: {report.n_checks} checks, max rel err {report.max_rel_err:.3e} "
            f"(tolerance {report.tolerance:.0e}) {status}"
        )
        failed = failed or not report.passed
    return 1 if failed else 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "generate":
            return _cmd_generate(args)
        if args.command == "train":
            return _cmd_train(args, parser)
        if args.command == "infer":
            return _cmd_infer(args)
        if args.command == "evaluate":
            return _cmd_evaluate(args)
        if args.command == "gradcheck":
            return _cmd_gradcheck(args)
        parser.error(f"unknown command {args.command!r}")
    except (OSError, ValueError, TrainingAborted) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 2


def run() -> None:
    sys.exit(main())


if __name__ == "__main__":
    run()
