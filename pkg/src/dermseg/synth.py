"""Seed-deterministic synthetic dataset: noisy filled ellipses (dark blob
on a brighter background, loosely mimicking lesions on skin) with exact
analytic ground-truth masks. Used by desk-scale end-to-end tests and the
``synth`` CLI command.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .data import DEFAULT_MASK_SUFFIX, Sample

NOISE_SIGMA = 10.0
FG_FRACTION_RANGE = (0.05, 0.6)


def ellipse_mask(size: int, cy: float, cx: float, a: float, b: float,
                 theta: float) -> np.ndarray:
    """Pixel-center membership test of a rotated filled ellipse."""
    yy, xx = np.meshgrid(np.arange(size, dtype=np.float64),
                         np.arange(size, dtype=np.float64), indexing="ij")
    dy, dx = yy - cy, xx - cx
    ct, st = np.cos(theta), np.sin(theta)
    u = (dx * ct + dy * st) / a
    v = (-dx * st + dy * ct) / b
    return (u * u + v * v <= 1.0).astype(np.uint8)


def _draw_ellipse(size: int, rng: np.random.Generator):
    lo, hi = FG_FRACTION_RANGE
    while True:
        cy = rng.uniform(0.3 * size, 0.7 * size)
        cx = rng.uniform(0.3 * size, 0.7 * size)
        a = rng.uniform(0.12 * size, 0.45 * size)
        b = rng.uniform(0.12 * size, 0.45 * size)
        theta = rng.uniform(0.0, np.pi)
        mask = ellipse_mask(size, cy, cx, a, b, theta)
        frac = mask.mean()
        if lo <= frac <= hi:
            return mask, (cy, cx, a, b, theta)


def make_sample(size: int, rng: np.random.Generator, sample_id: str,
                distractors: bool = False) -> Sample:
    """One synthetic image/mask pair: dark ellipse, brighter background,
    Gaussian pixel noise, optional small distractor dots."""
    mask, _ = _draw_ellipse(size, rng)
    bg = rng.uniform(120.0, 230.0, size=3)
    fg = rng.uniform(10.0, 110.0, size=3)
    img = np.where(mask[None].astype(bool), fg[:, None, None],
                   bg[:, None, None])

    if distractors:
        yy, xx = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
        for _ in range(int(rng.integers(1, 4))):
            dy, dx = rng.uniform(0, size, size=2)
            radius = rng.uniform(1.0, 0.05 * size + 1.0)
            color = rng.uniform(10.0, 230.0, size=3)
            dot = (yy - dy) ** 2 + (xx - dx) ** 2 <= radius**2
            img = np.where(dot[None], color[:, None, None], img)

    img = img + rng.normal(0.0, NOISE_SIGMA, size=img.shape)
    img = np.clip(img, 0.0, 255.0)
    # quantize like the on-disk 8-bit format so in-memory and reloaded
    # datasets agree exactly
    img = np.floor(img + 0.5).astype(np.uint8).astype(np.float32)
    return Sample(id=sample_id, image=img, mask=mask,
                  original_size=(size, size))


def generate(n: int, size: int, seed: int,
             distractors: bool = False) -> list[Sample]:
    if size % 4 != 0:
        raise ValueError(f"size {size} must be divisible by 4")
    rng = np.random.default_rng(seed)
    # ids carry the seed so differently-seeded splits never share ids
    return [
        make_sample(size, rng, f"synth{seed:03d}_{i:04d}",
                    distractors=distractors)
        for i in range(n)
    ]


def write_dataset(samples: list[Sample], out_dir) -> None:
    """Write images/<id>.png and masks/<id>_segmentation.png."""
    out_dir = Path(out_dir)
    image_dir = out_dir / "images"
    mask_dir = out_dir / "masks"
    image_dir.mkdir(parents=True, exist_ok=True)
    mask_dir.mkdir(parents=True, exist_ok=True)
    for s in samples:
        rgb = s.image.astype(np.uint8).transpose(1, 2, 0)
        Image.fromarray(rgb, mode="RGB").save(image_dir / f"{s.id}.png")
        Image.fromarray((s.mask * 255).astype(np.uint8), mode="L").save(
            mask_dir / f"{s.id}{DEFAULT_MASK_SUFFIX}"
        )
