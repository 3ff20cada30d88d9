"""Dataset ingestion, resizing, augmentation, standardization, and batch
iteration.

Disk format: 8-bit RGB PNG or JPEG images paired with 8-bit single-channel
PNG masks; the mask filename is the image stem plus a suffix
(default "_segmentation.png"). Masks are binarized at >= 128 on read.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DataError
from .tensor import Tensor4

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg")
DEFAULT_MASK_SUFFIX = "_segmentation.png"


@dataclass
class Sample:
    """One image/mask pair. ``image`` is (3, h, w) float32 in [0, 255];
    ``mask`` is (h, w) uint8 in {0, 1}; ``original_size`` is the decoded
    (h, w) before any resizing."""

    id: str
    image: np.ndarray
    mask: np.ndarray
    original_size: tuple[int, int]


def read_image_rgb(path) -> np.ndarray:
    """Decode to (3, h, w) float32 in [0, 255]."""
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float32)
    except Exception as exc:
        raise DataError(f"cannot decode image {path}: {exc}") from exc
    return arr.transpose(2, 0, 1)


def read_mask(path) -> np.ndarray:
    """Decode a single-channel mask to (h, w) uint8 {0, 1} (>= 128 is
    foreground)."""
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("L"))
    except Exception as exc:
        raise DataError(f"cannot decode mask {path}: {exc}") from exc
    return (arr >= 128).astype(np.uint8)


def write_mask(path, mask: np.ndarray) -> None:
    """Write a {0, 1} mask as an 8-bit PNG with values {0, 255}."""
    out = (np.asarray(mask, dtype=np.uint8) * 255).astype(np.uint8)
    Image.fromarray(out, mode="L").save(path, format="PNG")


def find_images(image_dir) -> list[Path]:
    image_dir = Path(image_dir)
    files = [p for p in image_dir.iterdir()
             if p.suffix.lower() in IMAGE_EXTENSIONS and p.is_file()]
    return sorted(files, key=lambda p: p.stem)


def load_dataset(
    image_dir,
    mask_dir,
    target_size: tuple[int, int] | None = None,
    mask_suffix: str = DEFAULT_MASK_SUFFIX,
) -> list[Sample]:
    """Load every image under ``image_dir`` with its mask from
    ``mask_dir``, in lexicographic id order.

    When ``target_size`` is given, images are resized bilinearly and masks
    with nearest neighbor (so they stay binary); ``original_size`` keeps
    the pre-resize dimensions for post-processing.
    """
    image_dir, mask_dir = Path(image_dir), Path(mask_dir)
    if not image_dir.is_dir():
        raise DataError(f"image directory not found: {image_dir}")
    if not mask_dir.is_dir():
        raise DataError(f"mask directory not found: {mask_dir}")
    files = find_images(image_dir)
    if not files:
        raise DataError(f"no images found in {image_dir}")

    samples = []
    for path in files:
        mask_path = mask_dir / (path.stem + mask_suffix)
        if not mask_path.exists():
            raise DataError(f"sample {path.stem!r}: missing mask {mask_path}")
        image = read_image_rgb(path)
        mask = read_mask(mask_path)
        if image.shape[1:] != mask.shape:
            raise DataError(
                f"sample {path.stem!r}: image {image.shape[1:]} and mask "
                f"{mask.shape} dimensions differ"
            )
        original = image.shape[1:]
        if target_size is not None:
            image = resize_bilinear(image, target_size)
            mask = resize_nearest(mask, target_size)
        samples.append(Sample(id=path.stem, image=image, mask=mask,
                              original_size=original))
    return samples


# ---------------------------------------------------------------------------
# resampling (pixel-center alignment, edge clamped)


def _axis_coords(n_out: int, n_in: int) -> np.ndarray:
    # align-corners=false: sample positions at pixel centers
    return (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5


def _linear_taps(n_out: int, n_in: int):
    src = _axis_coords(n_out, n_in)
    lo = np.floor(src).astype(np.int64)
    frac = src - lo
    i0 = np.clip(lo, 0, n_in - 1)
    i1 = np.clip(lo + 1, 0, n_in - 1)
    return i0, i1, frac


def resize_bilinear(image: np.ndarray, target: tuple[int, int]) -> np.ndarray:
    """Bilinear resample of a (c, h, w) or (h, w) float image."""
    th, tw = target
    if th < 1 or tw < 1:
        raise DataError(f"bad resize target {target}")
    squeeze = image.ndim == 2
    img = image[None] if squeeze else image
    _, h, w = img.shape

    r0, r1, rf = _linear_taps(th, h)
    rows = img[:, r0, :] * (1.0 - rf)[None, :, None] + img[:, r1, :] * rf[None, :, None]
    c0, c1, cf = _linear_taps(tw, w)
    out = rows[:, :, c0] * (1.0 - cf)[None, None, :] + rows[:, :, c1] * cf[None, None, :]
    out = out.astype(np.float32)
    return out[0] if squeeze else out


def resize_nearest(mask: np.ndarray, target: tuple[int, int]) -> np.ndarray:
    """Nearest-neighbor resample of an (h, w) array (keeps masks binary)."""
    th, tw = target
    if th < 1 or tw < 1:
        raise DataError(f"bad resize target {target}")
    h, w = mask.shape
    ri = np.clip(np.floor((np.arange(th) + 0.5) * (h / th)).astype(np.int64),
                 0, h - 1)
    ci = np.clip(np.floor((np.arange(tw) + 0.5) * (w / tw)).astype(np.int64),
                 0, w - 1)
    return mask[np.ix_(ri, ci)]


# ---------------------------------------------------------------------------
# augmentation and standardization


def augment(sample: Sample, rng: np.random.Generator) -> Sample:
    """Random quarter-turn (uniform over 0-3) then horizontal flip with
    probability 0.5, applied identically to image and mask. Requires square
    spatial dims."""
    h, w = sample.mask.shape
    if h != w:
        raise DataError(f"augmentation needs square samples, got {h}x{w}")
    k = int(rng.integers(4))
    flip = bool(rng.integers(2))
    image, mask = sample.image, sample.mask
    if k:
        image = np.rot90(image, k, axes=(1, 2))
        mask = np.rot90(mask, k, axes=(0, 1))
    if flip:
        image = image[:, :, ::-1]
        mask = mask[:, ::-1]
    return Sample(id=sample.id, image=np.ascontiguousarray(image),
                  mask=np.ascontiguousarray(mask),
                  original_size=sample.original_size)


def standardize(image: np.ndarray) -> np.ndarray:
    """Per-image standardization over all c*h*w values:
    ``(x - mean) / max(std, 1/sqrt(N))`` — the floor keeps constant images
    finite (they map to all zeros)."""
    x = np.asarray(image, dtype=np.float32)
    n = x.size
    mean = x.mean(dtype=np.float64)
    std = x.std(dtype=np.float64)
    denom = max(std, 1.0 / np.sqrt(n))
    return ((x - np.float32(mean)) / np.float32(denom)).astype(np.float32)


def batches(
    samples: list[Sample],
    batch_size: int,
    rng: np.random.Generator,
    augment_samples: bool = True,
):
    """Yield (Tensor4 images, (n, h, w) uint8 labels) for one epoch.

    The permutation and all augmentation draws come from ``rng``, so a
    fixed seed reproduces the epoch exactly. The final short batch is kept.
    """
    if batch_size < 1:
        raise DataError("batch_size must be >= 1")
    if not samples:
        raise DataError("cannot iterate over an empty dataset")
    order = rng.permutation(len(samples))
    for start in range(0, len(order), batch_size):
        chunk = [samples[i] for i in order[start : start + batch_size]]
        if augment_samples:
            chunk = [augment(s, rng) for s in chunk]
        images = np.stack([standardize(s.image) for s in chunk])
        labels = np.stack([s.mask for s in chunk]).astype(np.uint8)
        yield Tensor4(images), labels
