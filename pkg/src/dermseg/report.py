"""Evaluation reports and run figures: per-image CSV with a trailing
aggregate row, a plain-text table, matplotlib charts rendered to files,
and qualitative prediction overlays.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
from PIL import Image

from . import metrics, postprocess


@dataclass
class ImageScore:
    id: str
    iou: float
    dice: float
    pixel_acc: float


def score_pairs(pairs) -> list[ImageScore]:
    """Per-image metrics for (id, pred_mask, truth_mask) triples."""
    rows = []
    for sample_id, pred, truth in pairs:
        c = metrics.confusion(pred, truth)
        rows.append(ImageScore(sample_id, metrics.iou(c), metrics.dice(c),
                               metrics.pixel_acc(c)))
    return rows


def write_csv(rows: list[ImageScore], path) -> None:
    """Line-per-image CSV with a trailing mean row."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "iou", "dice", "pixel_acc"])
        for r in rows:
            writer.writerow([r.id, f"{r.iou:.6f}", f"{r.dice:.6f}",
                             f"{r.pixel_acc:.6f}"])
        if rows:
            writer.writerow([
                "mean",
                f"{np.mean([r.iou for r in rows]):.6f}",
                f"{np.mean([r.dice for r in rows]):.6f}",
                f"{np.mean([r.pixel_acc for r in rows]):.6f}",
            ])


def format_table(rows: list[ImageScore]) -> str:
    width = max([len(r.id) for r in rows] + [4])
    lines = [f"{'id':<{width}}  {'iou':>8}  {'dice':>8}  {'pix_acc':>8}"]
    for r in rows:
        lines.append(f"{r.id:<{width}}  {r.iou:8.4f}  {r.dice:8.4f}  "
                     f"{r.pixel_acc:8.4f}")
    if rows:
        lines.append("-" * len(lines[0]))
        lines.append(
            f"{'mean':<{width}}  {np.mean([r.iou for r in rows]):8.4f}  "
            f"{np.mean([r.dice for r in rows]):8.4f}  "
            f"{np.mean([r.pixel_acc for r in rows]):8.4f}"
        )
    return "\n".join(lines)


def render_eval_figure(rows: list[ImageScore], path) -> None:
    """Two panels: per-image IoU bars and the IoU histogram."""
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(11, 4))
    ious = [r.iou for r in rows]
    ax1.bar(range(len(rows)), ious, color="#2a6f97")
    ax1.axhline(np.mean(ious), color="#d62828", linestyle="--",
                label=f"mean {np.mean(ious):.3f}")
    ax1.set_xlabel("image index")
    ax1.set_ylabel("IoU")
    ax1.set_ylim(0, 1.05)
    ax1.legend()
    ax2.hist(ious, bins=min(20, max(5, len(rows) // 2)), color="#2a6f97")
    ax2.set_xlabel("IoU")
    ax2.set_ylabel("count")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def render_training_curves(log_csv, path) -> None:
    """Loss and validation mean-IoU against step, from train_log.csv."""
    steps, losses, eval_steps, mious = [], [], [], []
    for line in Path(log_csv).read_text().splitlines()[1:]:
        step, loss, miou = line.split(",")
        steps.append(int(step))
        losses.append(float(loss))
        if miou:
            eval_steps.append(int(step))
            mious.append(float(miou))
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(11, 4))
    ax1.plot(steps, losses, color="#2a6f97")
    ax1.set_xlabel("step")
    ax1.set_ylabel("training loss")
    if mious:
        ax2.plot(eval_steps, mious, marker="o", color="#d62828")
    ax2.set_xlabel("step")
    ax2.set_ylabel("val mean IoU")
    ax2.set_ylim(0, 1.05)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def overlay_png(image: np.ndarray, mask: np.ndarray, path) -> None:
    """Side-by-side panel: the input and the input with the predicted
    boundary drawn in red."""
    rgb = np.clip(np.asarray(image, dtype=np.float32), 0, 255)
    rgb = rgb.transpose(1, 2, 0).astype(np.uint8)
    boundary = (np.asarray(mask, dtype=np.uint8)
                ^ postprocess.erode(mask)).astype(bool)
    marked = rgb.copy()
    marked[boundary] = (255, 0, 0)
    panel = np.concatenate([rgb, marked], axis=1)
    Image.fromarray(panel, mode="RGB").save(path, format="PNG")
