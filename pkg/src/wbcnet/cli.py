"""Command-line interface: train, eval, predict, and augment subcommands.

Exit codes: 0 success, 1 usage error, 2 data error (missing/undecodable
inputs, incompatible checkpoints), 3 numeric failure.
"""

from __future__ import annotations

import argparse
import shutil
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import (augment_rotations, dataset_from_manifest,
                   list_class_directories, list_images, load_dataset,
                   split_dataset, write_manifest)
from .errors import (ArchitectureError, DecodeError, FormatError,
                     InsufficientDataError, NumericError)
from .image_io import load_image, resize_bilinear, rotate, save_image
from .metrics import confusion, render_confusion_csv, render_report, report
from .model import (build, evaluate_split, load_checkpoint,
                    model_from_checkpoint, predict, train, write_epoch_csv)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

# ValueError covers the package's input-validation subclasses (shape, label,
# manifest problems); anything numeric maps to its own exit code first.
_DATA_ERRORS = (FormatError, DecodeError, InsufficientDataError, ArchitectureError,
                ValueError, FileNotFoundError, NotADirectoryError, PermissionError,
                IsADirectoryError)


@dataclass
class RunConfig:
    """Training-run settings; defaults follow the published recipe where stated."""
    data_root: Path
    output_dir: Path
    epochs: int = 150
    batch_size: int = 32
    learning_rate: float = 0.001
    seed: int = 42
    split_ratios: tuple[float, float, float] = (0.70, 0.20, 0.10)
    augment_rotations: bool = False
    workers: int = 1
    precision: str = "f32"
    best_on: str = "val_loss"
    timing: bool = False


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _parse_split(text: str) -> tuple[float, float, float]:
    parts = text.split(",")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("expected three comma-separated ratios, e.g. 0.7,0.2,0.1")
    try:
        ratios = tuple(float(p) for p in parts)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"ratios must be numbers: {exc}")
    if abs(sum(ratios) - 1.0) > 1e-9 or any(r < 0 for r in ratios):
        raise argparse.ArgumentTypeError(f"ratios must be non-negative and sum to 1, got {text}")
    return ratios


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="wbcnet",
                     description="Train and evaluate the white-blood-cell CNN classifier.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train on a class-per-directory image tree")
    p_train.add_argument("--data-root", type=Path, required=True,
                         help="directory with one subdirectory of images per class")
    p_train.add_argument("--out", type=Path, required=True, help="output directory")
    p_train.add_argument("--epochs", type=int, default=150)
    p_train.add_argument("--batch-size", type=int, default=32)
    p_train.add_argument("--lr", type=float, default=0.001)
    p_train.add_argument("--seed", type=int, default=42)
    p_train.add_argument("--split", type=_parse_split, default=(0.70, 0.20, 0.10),
                         metavar="TRAIN,VAL,TEST")
    p_train.add_argument("--augment", action="store_true",
                         help="add 90/180/270 degree rotations of the training split")
    p_train.add_argument("--workers", type=int, default=1,
                         help="threads for image decoding (training math is unaffected)")
    p_train.add_argument("--precision", choices=("f32", "f64"), default="f32")
    p_train.add_argument("--best-on", choices=("val_loss", "train_loss"), default="val_loss")
    p_train.add_argument("--timing", action="store_true",
                         help="record wall time per epoch in epochs.csv "
                              "(off by default so identical runs produce identical files)")

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on a test split")
    p_eval.add_argument("--checkpoint", type=Path, required=True)
    src = p_eval.add_mutually_exclusive_group(required=True)
    src.add_argument("--manifest", type=Path, help="split manifest written by `train`")
    src.add_argument("--data-root", type=Path, help="re-split a class tree deterministically")
    p_eval.add_argument("--out", type=Path, required=True)
    p_eval.add_argument("--seed", type=int, default=42, help="split seed (with --data-root)")
    p_eval.add_argument("--split", type=_parse_split, default=(0.70, 0.20, 0.10),
                        metavar="TRAIN,VAL,TEST", help="split ratios (with --data-root)")
    p_eval.add_argument("--batch-size", type=int, default=32)
    p_eval.add_argument("--workers", type=int, default=1)

    p_pred = sub.add_parser("predict", help="classify one image")
    p_pred.add_argument("--checkpoint", type=Path, required=True)
    p_pred.add_argument("--image", type=Path, required=True)

    p_aug = sub.add_parser("augment", help="write rotation-augmented copies of an image tree")
    p_aug.add_argument("--data-root", type=Path, required=True)
    p_aug.add_argument("--out", type=Path, required=True)
    return parser


def cmd_train(args) -> int:
    config = RunConfig(data_root=args.data_root, output_dir=args.out, epochs=args.epochs,
                       batch_size=args.batch_size, learning_rate=args.lr, seed=args.seed,
                       split_ratios=args.split, augment_rotations=args.augment,
                       workers=args.workers, precision=args.precision,
                       best_on=args.best_on, timing=args.timing)
    if config.epochs < 1:
        print("error: --epochs must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    dataset = load_dataset(config.data_root, workers=config.workers)
    if not dataset.images:
        print(f"error: no images found under {config.data_root}", file=sys.stderr)
        return EXIT_DATA
    split_dataset(dataset, config.split_ratios, seed=config.seed)
    config.output_dir.mkdir(parents=True, exist_ok=True)
    write_manifest(dataset, config.output_dir / "split_manifest.csv")
    if config.augment_rotations:
        dataset = augment_rotations(dataset, only_split="train")
    dtype = "float64" if config.precision == "f64" else "float32"
    model = build(n_classes=len(dataset.class_names), seed=config.seed, dtype=dtype)
    best, records = train(model, dataset, epochs=config.epochs,
                          batch_size=config.batch_size,
                          learning_rate=config.learning_rate, seed=config.seed,
                          best_on=config.best_on,
                          checkpoint_path=config.output_dir / "best.wbcn", log=print)
    write_epoch_csv(records, config.output_dir / "epochs.csv", timing=config.timing)
    if not np.isfinite(records[-1].train_loss):
        print("error: training loss diverged to a non-finite value", file=sys.stderr)
        return EXIT_NUMERIC
    print(f"best checkpoint: epoch {best.epoch} "
          f"(train_loss={best.train_loss:.4f}, val_loss={best.val_loss:.4f})")
    return EXIT_OK


def cmd_eval(args) -> int:
    checkpoint = load_checkpoint(args.checkpoint)
    if args.manifest is not None:
        dataset = dataset_from_manifest(args.manifest, split="test",
                                        class_names=checkpoint.class_names,
                                        target_hw=checkpoint.config.input_hw,
                                        workers=args.workers)
    else:
        dataset = load_dataset(args.data_root, target_hw=checkpoint.config.input_hw,
                               workers=args.workers)
        if dataset.class_names != checkpoint.class_names:
            print(f"error: data root classes {dataset.class_names} do not match "
                  f"checkpoint classes {checkpoint.class_names}", file=sys.stderr)
            return EXIT_DATA
        split_dataset(dataset, args.split, seed=args.seed)
    if not dataset.subset("test"):
        print("error: no test images to evaluate", file=sys.stderr)
        return EXIT_DATA
    model = model_from_checkpoint(checkpoint)
    _, _, truths, predictions = evaluate_split(model, dataset, "test", args.batch_size)
    matrix = confusion(truths, predictions, checkpoint.class_names)
    rep = report(matrix)
    text, csv_text = render_report(rep, matrix)
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "confusion.csv").write_text(render_confusion_csv(matrix))
    (args.out / "report.csv").write_text(csv_text)
    print(text, end="")
    return EXIT_OK


def cmd_predict(args) -> int:
    checkpoint = load_checkpoint(args.checkpoint)
    h, w = checkpoint.config.input_hw
    image = resize_bilinear(load_image(args.image), h, w)
    model = model_from_checkpoint(checkpoint)
    label, probs = predict(model, image)
    print(checkpoint.class_names[label])
    for name, p in zip(checkpoint.class_names, probs):
        print(f"{name}: {p:.4f}")
    return EXIT_OK


def cmd_augment(args) -> int:
    out_root = Path(args.out)
    out_root.mkdir(parents=True, exist_ok=True)
    for class_dir in list_class_directories(args.data_root):
        out_dir = out_root / class_dir.name
        out_dir.mkdir(parents=True, exist_ok=True)
        for path in list_images(class_dir):
            targets = [out_dir / path.name]
            targets += [out_dir / f"{path.stem}_r{deg}{path.suffix}" for deg in (90, 180, 270)]
            existing = [t for t in targets if t.exists()]
            if existing:
                print(f"error: refusing to overwrite {existing[0]}", file=sys.stderr)
                return EXIT_DATA
            pixels = load_image(path)
            shutil.copyfile(path, targets[0])
            for target, deg in zip(targets[1:], (90, 180, 270)):
                save_image(target, rotate(pixels, deg))
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {"train": cmd_train, "eval": cmd_eval,
                "predict": cmd_predict, "augment": cmd_augment}
    try:
        return handlers[args.command](args)
    except (NumericError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except _DATA_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
