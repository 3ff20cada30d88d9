"""Probability map to final full-resolution binary mask: byte-scale the
foreground softmax, upscale bicubically to the original dimensions,
threshold at 128, then apply morphological opening with the radius-1
discrete disk (the 3x3 cross) to remove small spurious blobs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, ShapeError
from .tensor import Tensor4

# radius-1 discrete disk: center plus 4-neighbors
STRUCTURING_ELEMENT = np.array(
    [[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=np.uint8
)


@dataclass
class PostprocConfig:
    threshold: int = 128
    opening_enabled: bool = True
    # erosion treats pixels outside the frame as background by default;
    # "ignore" leaves frame-touching regions intact
    erosion_border: str = "background"
    structuring_element: np.ndarray = field(
        default_factory=lambda: STRUCTURING_ELEMENT.copy()
    )

    def __post_init__(self):
        if not 0 <= self.threshold <= 255:
            raise ValueError(f"threshold {self.threshold} outside [0, 255]")
        if self.erosion_border not in ("background", "ignore"):
            raise ValueError(f"unknown erosion border {self.erosion_border!r}")


def _round_half_up(x: np.ndarray) -> np.ndarray:
    return np.floor(x + 0.5)


def prob_to_bytemap(logits) -> np.ndarray:
    """Map 2-channel logits to a (h, w) byte map: round(255 * p_foreground)
    with round-half-up (so an exactly uncertain pixel becomes 128)."""
    if isinstance(logits, Tensor4):
        if logits.shape[0] != 1:
            raise ShapeError("prob_to_bytemap expects a single image")
        z = logits.data[0]
    else:
        z = np.asarray(logits, dtype=np.float32)
    if z.ndim != 3 or z.shape[0] != 2:
        raise ShapeError(f"expected (2, h, w) logits, got {z.shape}")
    # stabilized foreground softmax
    m = z.max(axis=0)
    e0 = np.exp(z[0] - m)
    e1 = np.exp(z[1] - m)
    p = e1 / (e0 + e1)
    return _round_half_up(255.0 * p.astype(np.float64)).astype(np.uint8)


def _cubic_weights(frac: np.ndarray) -> np.ndarray:
    """Catmull-Rom (a = -0.5) weights for taps at distances
    1+frac, frac, 1-frac, 2-frac."""
    a = -0.5

    def near(x):
        return (a + 2.0) * x**3 - (a + 3.0) * x**2 + 1.0

    def far(x):
        return a * x**3 - 5.0 * a * x**2 + 8.0 * a * x - 4.0 * a

    return np.stack([far(1.0 + frac), near(frac), near(1.0 - frac),
                     far(2.0 - frac)])


def _bicubic_axis_taps(n_out: int, n_in: int):
    src = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    lo = np.floor(src).astype(np.int64)
    frac = src - lo
    idx = np.stack([np.clip(lo + o, 0, n_in - 1) for o in (-1, 0, 1, 2)])
    return idx, _cubic_weights(frac).astype(np.float32)


def resize_bicubic(bytemap: np.ndarray, target: tuple[int, int]) -> np.ndarray:
    """Bicubic upscale of an (h, w) byte map with the a=-0.5 kernel,
    pixel-center alignment, and edge-clamped taps; output is clamped to
    [0, 255] and rounded back to bytes."""
    th, tw = target
    if th < 1 or tw < 1:
        raise ShapeError(f"bad resize target {target}")
    img = np.asarray(bytemap, dtype=np.float32)
    if img.ndim != 2:
        raise ShapeError(f"expected (h, w) byte map, got {bytemap.shape}")
    h, w = img.shape

    ridx, rw = _bicubic_axis_taps(th, h)
    rows = np.zeros((th, w), dtype=np.float32)
    for t in range(4):
        rows += rw[t][:, None] * img[ridx[t], :]

    cidx, cw = _bicubic_axis_taps(tw, w)
    out = np.zeros((th, tw), dtype=np.float32)
    for t in range(4):
        out += cw[t][None, :] * rows[:, cidx[t]]

    return _round_half_up(np.clip(out, 0.0, 255.0)).astype(np.uint8)


def binarize(bytemap: np.ndarray, threshold: int = 128) -> np.ndarray:
    """Pixels >= threshold become foreground."""
    return (np.asarray(bytemap) >= threshold).astype(np.uint8)


def _require_binary(mask: np.ndarray) -> np.ndarray:
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise ContractError(f"expected a 2-d mask, got shape {mask.shape}")
    if not np.isin(mask, (0, 1)).all():
        raise ContractError("mask must contain only 0 and 1")
    return mask.astype(np.uint8)


def _cross_neighborhood(padded: np.ndarray):
    return (
        padded[1:-1, 1:-1],
        padded[:-2, 1:-1],
        padded[2:, 1:-1],
        padded[1:-1, :-2],
        padded[1:-1, 2:],
    )


def erode(mask: np.ndarray, border: str = "background") -> np.ndarray:
    """Cross-element erosion; out-of-frame neighbors count as background
    (or are ignored when border="ignore")."""
    mask = _require_binary(mask)
    fill = 0 if border == "background" else 1
    padded = np.pad(mask, 1, constant_values=fill)
    out = np.ones_like(mask)
    for plane in _cross_neighborhood(padded):
        out &= plane
    return out


def dilate(mask: np.ndarray) -> np.ndarray:
    """Cross-element dilation; contributions outside the frame are
    discarded."""
    mask = _require_binary(mask)
    padded = np.pad(mask, 1, constant_values=0)
    out = np.zeros_like(mask)
    for plane in _cross_neighborhood(padded):
        out |= plane
    return out


def morph_open(mask: np.ndarray, border: str = "background") -> np.ndarray:
    """Erosion followed by dilation with the 3x3 cross."""
    return dilate(erode(mask, border=border))


def run(logits, original_size: tuple[int, int],
        config: PostprocConfig | None = None) -> np.ndarray:
    """Full pipeline for one image's logits: byte map, bicubic upscale to
    ``original_size``, threshold, optional opening."""
    config = config or PostprocConfig()
    bytemap = prob_to_bytemap(logits)
    if tuple(bytemap.shape) != tuple(original_size):
        bytemap = resize_bicubic(bytemap, original_size)
    mask = binarize(bytemap, config.threshold)
    if config.opening_enabled:
        mask = morph_open(mask, border=config.erosion_border)
    return mask
