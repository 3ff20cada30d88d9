"""Differentiable layer primitives: padding, convolution (strided, dilated,
1x1), batch normalization, ReLU, pixel shuffle, and per-pixel softmax
cross-entropy. Every operation has a forward and an exact reverse-mode
backward.

Public functions operate on :class:`~dermseg.tensor.Tensor4`; the private
``*_raw`` kernels work on plain arrays and follow the input dtype, which
lets verification code replay any forward in float64.

Conventions fixed here:
  * cross-correlation (no kernel flip);
  * padding margin per axis is ``rate * (k - 1) // 2``, applied before the
    correlation, so spatial size is ``ceil(input / stride)``;
  * mirror padding reflects about the border sample without repeating it;
  * ReLU subgradient at exactly 0 is 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import LabelError, PaddingError, ShapeError, StateError
from .tensor import Tensor4

MIRROR = "mirror"
ZERO = "zero"

TRAIN = "train"
INFER = "infer"


# ---------------------------------------------------------------------------
# padding


def _reflect_indices(size: int, margin: int) -> np.ndarray:
    """Source index for each padded position, reflecting about the border
    sample without repeating it. Requires margin < size."""
    idx = np.arange(-margin, size + margin)
    idx = np.abs(idx)
    return np.where(idx >= size, 2 * size - 2 - idx, idx)


def _pad_raw(x: np.ndarray, mh: int, mw: int, mode: str) -> np.ndarray:
    if mh == 0 and mw == 0:
        return x
    n, c, h, w = x.shape
    if mode == MIRROR:
        if mh >= h or mw >= w:
            raise PaddingError(
                f"mirror margin ({mh},{mw}) must be smaller than dims ({h},{w})"
            )
        out = x[:, :, _reflect_indices(h, mh), :]
        return out[:, :, :, _reflect_indices(w, mw)]
    if mode == ZERO:
        out = np.zeros((n, c, h + 2 * mh, w + 2 * mw), dtype=x.dtype)
        out[:, :, mh : mh + h, mw : mw + w] = x
        return out
    raise ValueError(f"unknown padding mode: {mode!r}")


def _fold_axis2(g: np.ndarray, size: int, margin: int) -> np.ndarray:
    """Adjoint of reflection padding along axis 2: accumulate margin
    gradients back onto their source rows."""
    if margin == 0:
        return g
    core = g[:, :, margin : margin + size, :].copy()
    # padded row i (i < margin) reflects to source row margin - i
    core[:, :, 1 : margin + 1, :] += g[:, :, margin - 1 :: -1, :]
    # padded row margin + size + o reflects to source row size - 2 - o
    core[:, :, size - 1 - margin : size - 1, :] += g[:, :, margin + size :, :][
        :, :, ::-1, :
    ]
    return core


def _pad_backward_raw(
    g: np.ndarray, h: int, w: int, mh: int, mw: int, mode: str
) -> np.ndarray:
    """Gradient of :func:`_pad_raw` w.r.t. its input."""
    if mh == 0 and mw == 0:
        return g
    if mode == ZERO:
        return g[:, :, mh : mh + h, mw : mw + w]
    if mode != MIRROR:
        raise ValueError(f"unknown padding mode: {mode!r}")
    out = _fold_axis2(g, h, mh)
    out = _fold_axis2(out.transpose(0, 1, 3, 2), w, mw)
    return out.transpose(0, 1, 3, 2)


def pad(t: Tensor4, margin_h: int, margin_w: int, mode: str) -> Tensor4:
    """Extend spatially by the given margins using Mirror or Zero fill."""
    if margin_h < 0 or margin_w < 0:
        raise PaddingError("margins must be non-negative")
    return Tensor4(_pad_raw(t.data, margin_h, margin_w, mode))


def pad_backward(
    grad_out: Tensor4, input_shape, margin_h: int, margin_w: int, mode: str
) -> Tensor4:
    """Accumulate padded-region gradients back onto their source pixels."""
    _, _, h, w = input_shape
    return Tensor4(_pad_backward_raw(grad_out.data, h, w, margin_h, margin_w, mode))


# ---------------------------------------------------------------------------
# convolution


@dataclass
class ConvParams:
    """Weights and geometry of one convolution layer.

    ``weights`` is (c_out, c_in, kh, kw); ``bias`` is (c_out,) or None
    (a layer followed by batch normalization carries no bias).
    """

    weights: np.ndarray
    bias: np.ndarray | None = None
    stride: int = 1
    dilation_rate: int = 1
    padding: str = MIRROR

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float32)
        if self.weights.ndim != 4:
            raise ShapeError("conv weights must be (c_out, c_in, kh, kw)")
        _, _, kh, kw = self.weights.shape
        if kh % 2 == 0 or kw % 2 == 0:
            raise ShapeError(f"kernel dims must be odd, got {kh}x{kw}")
        if self.stride < 1 or self.dilation_rate < 1:
            raise ShapeError("stride and dilation rate must be positive")
        if self.padding not in (MIRROR, ZERO):
            raise ValueError(f"unknown padding mode: {self.padding!r}")
        if self.bias is not None:
            self.bias = np.asarray(self.bias, dtype=np.float32).reshape(-1)
            if self.bias.shape[0] != self.weights.shape[0]:
                raise ShapeError("bias length must equal c_out")


def conv_margins(kh: int, kw: int, rate: int) -> tuple[int, int]:
    return rate * (kh - 1) // 2, rate * (kw - 1) // 2


def conv_output_hw(h: int, w: int, stride: int) -> tuple[int, int]:
    # padding keeps the window arithmetic exact: out = ceil(in / stride)
    return -(-h // stride), -(-w // stride)


def _im2col(x_pad: np.ndarray, kh: int, kw: int, stride: int, rate: int,
            ho: int, wo: int) -> np.ndarray:
    """(n, c, hp, wp) -> (n, c*kh*kw, ho*wo) patch matrix (copies)."""
    n, c, _, _ = x_pad.shape
    sn, sc, sh, sw = x_pad.strides
    view = np.lib.stride_tricks.as_strided(
        x_pad,
        shape=(n, c, kh, kw, ho, wo),
        strides=(sn, sc, rate * sh, rate * sw, stride * sh, stride * sw),
        writeable=False,
    )
    return view.reshape(n, c * kh * kw, ho * wo)


def _conv_raw(
    x: np.ndarray,
    weights: np.ndarray,
    bias: np.ndarray | None,
    stride: int,
    rate: int,
    padding: str,
) -> np.ndarray:
    n, c, h, w = x.shape
    co, ci, kh, kw = weights.shape
    if c != ci:
        raise ShapeError(f"input has {c} channels, weights expect {ci}")
    mh, mw = conv_margins(kh, kw, rate)
    ho, wo = conv_output_hw(h, w, stride)
    x_pad = _pad_raw(x, mh, mw, padding)
    cols = _im2col(x_pad, kh, kw, stride, rate, ho, wo)
    w_mat = weights.reshape(co, -1).astype(x.dtype, copy=False)
    out = np.matmul(w_mat, cols)
    if bias is not None:
        out += bias.astype(x.dtype, copy=False)[None, :, None]
    return out.reshape(n, co, ho, wo)


def conv2d_forward(x: Tensor4, p: ConvParams) -> Tensor4:
    """Cross-correlate ``x`` with ``p.weights`` (stride / dilation applied),
    padding beforehand so output spatial size is ``ceil(input / stride)``."""
    return Tensor4(_conv_raw(x.data, p.weights, p.bias, p.stride,
                             p.dilation_rate, p.padding))


def conv2d_backward(
    x: Tensor4, p: ConvParams, grad_out: Tensor4
) -> tuple[Tensor4, np.ndarray, np.ndarray | None]:
    """Reverse-mode gradients (grad_x, grad_weights, grad_bias) of
    :func:`conv2d_forward`, including back-propagation through padding."""
    n, c, h, w = x.shape
    co, ci, kh, kw = p.weights.shape
    if c != ci:
        raise ShapeError(f"input has {c} channels, weights expect {ci}")
    stride, rate = p.stride, p.dilation_rate
    mh, mw = conv_margins(kh, kw, rate)
    ho, wo = conv_output_hw(h, w, stride)
    if grad_out.shape != (n, co, ho, wo):
        raise ShapeError(
            f"grad_out shape {grad_out.shape} != forward output {(n, co, ho, wo)}"
        )

    x_pad = _pad_raw(x.data, mh, mw, p.padding)
    cols = _im2col(x_pad, kh, kw, stride, rate, ho, wo)
    go = grad_out.data.reshape(n, co, ho * wo)

    grad_b = go.sum(axis=(0, 2)) if p.bias is not None else None
    grad_w_mat = np.zeros((co, ci * kh * kw), dtype=np.float32)
    for i in range(n):
        grad_w_mat += go[i] @ cols[i].T
    grad_w = grad_w_mat.reshape(co, ci, kh, kw)

    w_mat = p.weights.reshape(co, -1)
    gcols = np.matmul(w_mat.T, go).reshape(n, ci, kh, kw, ho, wo)
    gpad = np.zeros_like(x_pad)
    for u in range(kh):
        for v in range(kw):
            gpad[
                :, :,
                u * rate : u * rate + stride * ho : stride,
                v * rate : v * rate + stride * wo : stride,
            ] += gcols[:, :, u, v]
    grad_x = _pad_backward_raw(gpad, h, w, mh, mw, p.padding)
    return Tensor4(grad_x), grad_w, grad_b


# ---------------------------------------------------------------------------
# ReLU


def relu(x: Tensor4) -> Tensor4:
    return Tensor4(np.maximum(x.data, 0))


def relu_backward(x: Tensor4, grad_out: Tensor4) -> Tensor4:
    if grad_out.shape != x.shape:
        raise ShapeError("grad_out shape must match input")
    return Tensor4(np.where(x.data > 0, grad_out.data, 0))


# ---------------------------------------------------------------------------
# batch normalization


@dataclass
class BatchNormParams:
    """Per-channel scale/shift plus running statistics.

    ``mode`` selects batch statistics ("train", which also updates the
    running values) or the stored running statistics ("infer").
    """

    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    epsilon: float = 1e-5
    momentum: float = 0.9
    mode: str = TRAIN

    @classmethod
    def identity(cls, channels: int, epsilon: float = 1e-5,
                 momentum: float = 0.9) -> "BatchNormParams":
        return cls(
            gamma=np.ones(channels, dtype=np.float32),
            beta=np.zeros(channels, dtype=np.float32),
            running_mean=np.zeros(channels, dtype=np.float32),
            running_var=np.ones(channels, dtype=np.float32),
            epsilon=epsilon,
            momentum=momentum,
        )

    def __post_init__(self):
        for name in ("gamma", "beta", "running_mean", "running_var"):
            setattr(self, name, np.asarray(getattr(self, name),
                                           dtype=np.float32).reshape(-1))
        c = self.gamma.shape[0]
        if any(getattr(self, n).shape[0] != c
               for n in ("beta", "running_mean", "running_var")):
            raise ShapeError("batch-norm vectors must share one length")
        if np.any(self.running_var < 0):
            raise ShapeError("running variance must be non-negative")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if not 0.0 < self.momentum < 1.0:
            raise ValueError("momentum must lie in (0, 1)")
        if self.mode not in (TRAIN, INFER):
            raise ValueError(f"unknown mode: {self.mode!r}")


def _bn_stats(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # population statistics over (n, h, w), accumulated in float64
    mean = x.mean(axis=(0, 2, 3), dtype=np.float64)
    var = x.var(axis=(0, 2, 3), dtype=np.float64)
    return mean, var


def _bn_train_raw(x, gamma, beta, epsilon):
    mean, var = _bn_stats(x)
    invstd = 1.0 / np.sqrt(var + epsilon)
    xhat = (x - mean.astype(x.dtype)[None, :, None, None]) * invstd.astype(
        x.dtype
    )[None, :, None, None]
    out = gamma.astype(x.dtype)[None, :, None, None] * xhat
    out += beta.astype(x.dtype)[None, :, None, None]
    return out, mean, var, xhat, invstd


def batchnorm_forward(x: Tensor4, p: BatchNormParams) -> Tensor4:
    """Normalize per channel; train mode uses batch statistics over
    (n, h, w) and folds them into the running values."""
    if x.shape[1] != p.gamma.shape[0]:
        raise ShapeError(
            f"input has {x.shape[1]} channels, batch norm expects {p.gamma.shape[0]}"
        )
    if p.mode == TRAIN:
        out, mean, var, _, _ = _bn_train_raw(x.data, p.gamma, p.beta, p.epsilon)
        m = p.momentum
        p.running_mean[:] = (m * p.running_mean + (1.0 - m) * mean).astype(np.float32)
        p.running_var[:] = (m * p.running_var + (1.0 - m) * var).astype(np.float32)
        return Tensor4(out)
    invstd = 1.0 / np.sqrt(p.running_var.astype(np.float64) + p.epsilon)
    xhat = (x.data - p.running_mean[None, :, None, None]) * invstd.astype(
        np.float32
    )[None, :, None, None]
    return Tensor4(p.gamma[None, :, None, None] * xhat + p.beta[None, :, None, None])


def batchnorm_backward(
    x: Tensor4, p: BatchNormParams, grad_out: Tensor4
) -> tuple[Tensor4, np.ndarray, np.ndarray]:
    """Exact gradients of train-mode normalization, including the
    dependence of the batch mean/variance on the input."""
    if p.mode != TRAIN:
        raise StateError("batchnorm_backward requires train mode")
    if grad_out.shape != x.shape:
        raise ShapeError("grad_out shape must match input")
    _, mean, var, xhat, invstd = _bn_train_raw(x.data, p.gamma, p.beta, p.epsilon)
    n, c, h, w = x.shape
    count = n * h * w
    go = grad_out.data

    grad_beta = go.sum(axis=(0, 2, 3), dtype=np.float64)
    grad_gamma = (go * xhat).sum(axis=(0, 2, 3), dtype=np.float64)

    gxhat = go * p.gamma[None, :, None, None]
    sum_g = gxhat.sum(axis=(0, 2, 3), dtype=np.float64)
    sum_gx = (gxhat * xhat).sum(axis=(0, 2, 3), dtype=np.float64)
    grad_x = (
        gxhat.astype(np.float64)
        - (sum_g / count)[None, :, None, None]
        - xhat.astype(np.float64) * (sum_gx / count)[None, :, None, None]
    ) * invstd[None, :, None, None]
    return (
        Tensor4(grad_x.astype(np.float32)),
        grad_gamma.astype(np.float32),
        grad_beta.astype(np.float32),
    )


# ---------------------------------------------------------------------------
# pixel shuffle


def _shuffle_raw(x: np.ndarray, r: int) -> np.ndarray:
    n, c, h, w = x.shape
    co = c // (r * r)
    out = x.reshape(n, co, r, r, h, w).transpose(0, 1, 4, 2, 5, 3)
    return out.reshape(n, co, h * r, w * r)


def pixel_shuffle(x: Tensor4, r: int) -> Tensor4:
    """Rearrange (n, c, h, w) into (n, c/r^2, h*r, w*r):
    ``out[n, c, h*r + i, w*r + j] = x[n, c*r*r + i*r + j, h, w]``."""
    if r < 1:
        raise ShapeError("shuffle factor must be >= 1")
    if x.shape[1] % (r * r) != 0:
        raise ShapeError(f"channels {x.shape[1]} not divisible by r^2 = {r * r}")
    return Tensor4(_shuffle_raw(x.data, r))


def pixel_unshuffle(y: Tensor4, r: int) -> Tensor4:
    """Exact inverse of :func:`pixel_shuffle`; also its backward pass."""
    if r < 1:
        raise ShapeError("shuffle factor must be >= 1")
    n, c, hr, wr = y.shape
    if hr % r != 0 or wr % r != 0:
        raise ShapeError(f"spatial dims {(hr, wr)} not divisible by r = {r}")
    h, w = hr // r, wr // r
    out = y.data.reshape(n, c, h, r, w, r).transpose(0, 1, 3, 5, 2, 4)
    return Tensor4(out.reshape(n, c * r * r, h, w))


# ---------------------------------------------------------------------------
# per-pixel softmax cross-entropy


def _softmax_raw(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def softmax_xent(logits: Tensor4, labels: np.ndarray) -> tuple[float, Tensor4]:
    """Mean per-pixel cross-entropy between 2-channel logits and {0,1}
    labels; returns (loss, grad_logits) with the gradient already divided
    by the pixel count."""
    n, c, h, w = logits.shape
    if c != 2:
        raise ShapeError(f"expected 2 logit channels, got {c}")
    labels = np.asarray(labels)
    if labels.shape != (n, h, w):
        raise ShapeError(f"labels shape {labels.shape} != {(n, h, w)}")
    if not np.issubdtype(labels.dtype, np.integer):
        raise LabelError("labels must be integers")
    if labels.min() < 0 or labels.max() > 1:
        raise LabelError("labels must be 0 or 1")

    z = logits.data
    m = z.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(z - m).sum(axis=1))
    z_true = np.take_along_axis(z, labels[:, None].astype(np.int64), axis=1)[:, 0]
    loss = float(np.mean(lse - z_true, dtype=np.float64))

    grad = _softmax_raw(z).copy()
    lab = labels.astype(grad.dtype)
    grad[:, 1] -= lab
    grad[:, 0] -= 1.0 - lab
    grad /= n * h * w
    return loss, Tensor4(grad)
