"""Operator surface: ``dermseg train | predict | eval | synth``.

Exit status: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import checkpoint, data, model, nn, postprocess, report, synth, trainer
from .errors import (CheckpointError, ContractError, DataError, DermsegError,
                     MetricError, NumericsError)
from .tensor import Tensor4

log = logging.getLogger("dermseg")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dermseg",
                     description="Train, run, and score the lesion "
                                 "segmentation network.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train on an image/mask dataset")
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--train-dir", required=True,
                   help="directory with images/ and masks/")
    p.add_argument("--val-dir", required=True,
                   help="directory with images/ and masks/")
    p.add_argument("--resume", help="checkpoint to continue from")

    p = sub.add_parser("predict", help="segment a directory of images")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--out", dest="out_dir", required=True)
    p.add_argument("--threshold", type=int, default=128)
    p.add_argument("--no-open", action="store_true",
                   help="skip morphological opening")
    p.add_argument("--overlay", action="store_true",
                   help="also write side-by-side boundary overlays")

    p = sub.add_parser("eval", help="score predicted masks against truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--report", required=True, help="output CSV path")

    p = sub.add_parser("synth", help="generate a synthetic ellipse dataset")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--size", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", dest="out_dir", required=True)
    p.add_argument("--distractors", action="store_true")
    return parser


def cmd_train(args) -> int:
    if args.config:
        try:
            cfg = trainer.parse_config(args.config)
        except FileNotFoundError:
            raise DataError(f"config file not found: {args.config}")
        except ValueError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_USAGE
    else:
        cfg = trainer.TrainConfig()
    train_samples = trainer.load_split(args.train_dir, cfg)
    val_samples = trainer.load_split(args.val_dir, cfg)
    overlap = {s.id for s in train_samples} & {s.id for s in val_samples}
    if overlap:
        raise DataError(f"train/val overlap on ids: {sorted(overlap)[:5]}")
    result = trainer.train(cfg, train_samples, val_samples,
                           resume=args.resume)
    curves = Path(cfg.checkpoint_dir) / "train_curves.png"
    report.render_training_curves(Path(cfg.checkpoint_dir) / "train_log.csv",
                                  curves)
    log.info("best val mIoU %.4f after %d steps; checkpoints in %s",
             result.best_miou, result.steps, cfg.checkpoint_dir)
    return EXIT_OK


def cmd_predict(args) -> int:
    net, _, _ = checkpoint.load(args.checkpoint)
    input_size = tuple(net.spec.input_size)
    pconf = postprocess.PostprocConfig(threshold=args.threshold,
                                       opening_enabled=not args.no_open)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    files = data.find_images(args.in_dir)
    if not files:
        raise DataError(f"no images found in {args.in_dir}")
    written = 0
    for path in files:
        try:
            image = data.read_image_rgb(path)
        except DataError as exc:
            log.warning("skipping %s: %s", path.name, exc)
            continue
        original_size = image.shape[1:]
        resized = data.resize_bilinear(image, input_size)
        x = Tensor4(data.standardize(resized)[None])
        logits = model.forward(net, x, nn.INFER)
        mask = postprocess.run(logits.data[0], original_size, pconf)
        data.write_mask(out_dir / f"{path.stem}.png", mask)
        if args.overlay:
            report.overlay_png(image, mask,
                               out_dir / f"{path.stem}_overlay.png")
        written += 1
    if written == 0:
        raise DataError("no image could be processed")
    log.info("wrote %d masks to %s", written, out_dir)
    return EXIT_OK


def _strip_mask_suffix(stem: str) -> str:
    marker = "_segmentation"
    return stem[: -len(marker)] if stem.endswith(marker) else stem


def cmd_eval(args) -> int:
    pred_dir, truth_dir = Path(args.pred), Path(args.truth)
    if not pred_dir.is_dir():
        raise DataError(f"prediction directory not found: {pred_dir}")
    if not truth_dir.is_dir():
        raise DataError(f"truth directory not found: {truth_dir}")
    preds = {_strip_mask_suffix(p.stem): p for p in data.find_images(pred_dir)}
    truths = {_strip_mask_suffix(p.stem): p for p in data.find_images(truth_dir)}

    problems = []
    for missing in sorted(set(truths) - set(preds)):
        problems.append(f"no prediction for {missing!r}")
    for missing in sorted(set(preds) - set(truths)):
        problems.append(f"no ground truth for {missing!r}")

    pairs = []
    for sample_id in sorted(set(preds) & set(truths)):
        pred = data.read_mask(preds[sample_id])
        truth = data.read_mask(truths[sample_id])
        if pred.shape != truth.shape:
            problems.append(
                f"{sample_id!r}: dimensions differ "
                f"({pred.shape} vs {truth.shape})"
            )
            continue
        pairs.append((sample_id, pred, truth))

    if not pairs:
        raise DataError("no overlapping ids between --pred and --truth")

    rows = report.score_pairs(pairs)
    report.write_csv(rows, args.report)
    figure = Path(args.report).with_suffix(".png")
    report.render_eval_figure(rows, figure)
    print(report.format_table(rows))
    print(f"\nreport: {args.report}\nfigure: {figure}")
    if problems:
        for p in problems:
            print(f"warning: {p}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


def cmd_synth(args) -> int:
    if args.size % 4 != 0:
        print("error: --size must be divisible by 4", file=sys.stderr)
        return EXIT_USAGE
    samples = synth.generate(args.n, args.size, args.seed,
                             distractors=args.distractors)
    synth.write_dataset(samples, args.out_dir)
    log.info("wrote %d samples to %s", len(samples), args.out_dir)
    return EXIT_OK


_COMMANDS = {
    "train": cmd_train,
    "predict": cmd_predict,
    "eval": cmd_eval,
    "synth": cmd_synth,
}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except NumericsError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, CheckpointError, MetricError, ContractError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except DermsegError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
