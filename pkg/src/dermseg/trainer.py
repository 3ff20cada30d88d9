"""Training loop: Adam over mini-batches with periodic validation,
early stopping on mean IoU, checkpointing, and a reproducible config
snapshot next to every run.
"""

from __future__ import annotations

import contextlib
import logging
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import checkpoint, data, metrics, model, nn, optim, postprocess
from .errors import DataError, NumericsError
from .tensor import Tensor4

log = logging.getLogger("dermseg")

# an evaluation counts as an improvement only if it beats the best by this
MIN_DELTA = 1e-4

BEST_NAME = "best.lsg1"
LAST_NAME = "last.lsg1"


@dataclass
class TrainConfig:
    input_size: tuple[int, int] = (448, 448)
    batch_size: int = 32
    lr: float = 1e-3
    max_epochs: int = 200
    patience: int = 10
    eval_every: int = 50
    seed: int = 0
    checkpoint_dir: str = "checkpoints"
    determinism: bool = False
    clip_norm: float = 0.0
    threshold: int = 128
    mask_suffix: str = data.DEFAULT_MASK_SUFFIX

    def validate(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.eval_every < 1:
            raise ValueError("eval_every must be >= 1")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        h, w = self.input_size
        if h % 4 != 0 or w % 4 != 0:
            raise ValueError(f"input size {self.input_size} must be divisible by 4")


def _parse_value(name: str, kind: type, raw: str):
    raw = raw.strip()
    if name == "input_size":
        parts = raw.lower().replace("x", ",").split(",")
        if len(parts) != 2:
            raise ValueError(f"{name}: expected HxW, got {raw!r}")
        return (int(parts[0]), int(parts[1]))
    if kind is bool:
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{name}: expected a boolean, got {raw!r}")
    return kind(raw)


def parse_config(path) -> TrainConfig:
    """Read a flat key=value file whose keys are TrainConfig field names."""
    cfg = TrainConfig()
    known = {f.name for f in fields(TrainConfig)}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, raw = line.split("=", 1)
        key = key.strip()
        if key not in known:
            raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
        setattr(cfg, key, _parse_value(key, type(getattr(cfg, key)), raw))
    cfg.validate()
    return cfg


def config_snapshot(cfg: TrainConfig) -> str:
    lines = []
    for f in fields(TrainConfig):
        value = getattr(cfg, f.name)
        if f.name == "input_size":
            value = f"{value[0]}x{value[1]}"
        lines.append(f"{f.name}={value}")
    return "\n".join(lines) + "\n"


def _thread_limit(enabled: bool):
    """Pin the BLAS pool to one thread so accumulation order is fixed."""
    if not enabled:
        return contextlib.nullcontext()
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # determinism then rests on a fixed thread count
        log.warning("threadpoolctl unavailable; determinism flag relies on "
                    "a fixed BLAS thread count")
        return contextlib.nullcontext()
    return threadpool_limits(limits=1)


def evaluate(net: model.Network, samples: list[data.Sample],
             batch_size: int, threshold: int = 128) -> float:
    """Mean per-image IoU of thresholded infer-mode predictions at network
    resolution (no augmentation, no opening)."""
    pairs = []
    for start in range(0, len(samples), batch_size):
        chunk = samples[start : start + batch_size]
        images = np.stack([data.standardize(s.image) for s in chunk])
        logits = model.forward(net, Tensor4(images), nn.INFER)
        for i, s in enumerate(chunk):
            bytemap = postprocess.prob_to_bytemap(logits.data[i])
            pred = postprocess.binarize(bytemap, threshold)
            pairs.append((pred, s.mask))
    return metrics.mean_iou(pairs)


@dataclass
class TrainResult:
    best_miou: float
    steps: int
    epochs: int
    stopped_early: bool
    best_path: Path
    last_path: Path
    history: list  # (step, loss, val_miou | None)


def train(cfg: TrainConfig, train_samples: list[data.Sample],
          val_samples: list[data.Sample], resume=None) -> TrainResult:
    """Run the training loop until patience is exhausted or max_epochs is
    reached; keeps the best-mean-IoU checkpoint and the last one."""
    cfg.validate()
    if not train_samples:
        raise DataError("training set is empty")
    if not val_samples:
        raise DataError("validation set is empty")

    ckpt_dir = Path(cfg.checkpoint_dir)
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    (ckpt_dir / "config.txt").write_text(config_snapshot(cfg))
    best_path = ckpt_dir / BEST_NAME
    last_path = ckpt_dir / LAST_NAME

    if resume is not None:
        net, adam, meta = checkpoint.load(resume)
        if adam is None:
            adam = optim.AdamState(lr=cfg.lr, clip_norm=cfg.clip_norm)
        step = int(meta.get("step", 0))
        start_epoch = int(meta.get("epoch", 0))
        best = float(meta.get("best_miou", -1.0))
        stale = int(meta.get("stale_evals", 0))
        log.info("resumed from %s at step %d", resume, step)
    else:
        net = model.build(model.default_arch(cfg.input_size), cfg.seed)
        adam = optim.AdamState(lr=cfg.lr, clip_norm=cfg.clip_norm)
        step, start_epoch, best, stale = 0, 0, -1.0, 0

    history: list = []
    log_path = ckpt_dir / "train_log.csv"
    log_file = log_path.open("a")
    if log_file.tell() == 0:
        log_file.write("step,loss,val_miou\n")

    def save(path, next_epoch):
        # "epoch" in the metadata is the next epoch a resumed run executes
        checkpoint.save(net, path, optimizer_state=adam, meta={
            "step": step, "epoch": next_epoch, "best_miou": best,
            "stale_evals": stale,
        })

    stopped_early = False
    next_epoch = start_epoch
    with _thread_limit(cfg.determinism):
        for epoch in range(start_epoch, cfg.max_epochs):
            next_epoch = epoch + 1
            rng = np.random.default_rng([cfg.seed, epoch])
            for images, labels in data.batches(train_samples, cfg.batch_size,
                                               rng):
                loss, grads = model.backward(net, images, labels)
                if not np.isfinite(loss):
                    raise NumericsError(f"non-finite loss at step {step + 1}")
                optim.step(net.parameters(), grads, adam)
                step += 1
                miou = None
                if step % cfg.eval_every == 0:
                    miou = evaluate(net, val_samples, cfg.batch_size,
                                    cfg.threshold)
                    if miou > best + MIN_DELTA:
                        best = miou
                        stale = 0
                        save(best_path, next_epoch)
                    else:
                        stale += 1
                    log.info("step %d  loss %.4f  val mIoU %.4f (best %.4f)",
                             step, loss, miou, best)
                history.append((step, loss, miou))
                log_file.write(
                    f"{step},{loss:.6f},"
                    f"{'' if miou is None else f'{miou:.6f}'}\n"
                )
                if stale >= cfg.patience:
                    stopped_early = True
                    break
            if stopped_early:
                break
    log_file.close()

    save(last_path, next_epoch)
    if not best_path.exists():
        save(best_path, next_epoch)
    return TrainResult(
        best_miou=best, steps=step, epochs=next_epoch,
        stopped_early=stopped_early, best_path=best_path,
        last_path=last_path, history=history,
    )


def load_split(root, cfg: TrainConfig) -> list[data.Sample]:
    """A dataset directory holds images/ and masks/ subdirectories."""
    root = Path(root)
    return data.load_dataset(root / "images", root / "masks",
                             target_size=cfg.input_size,
                             mask_suffix=cfg.mask_suffix)
