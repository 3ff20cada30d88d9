"""Network assembly: a declarative layer stack compiled into parameters,
plus the whole-graph forward and reverse passes.

The default architecture is a ten-layer fully convolutional stack: two
stride-2 downsampling stages interleaved with 3x3 and capacity-adding 1x1
convolutions, three dilated (rate-2) convolutions that keep spatial size,
and a final convolution whose channels are rearranged by a pixel shuffle
so the logits come back at full input resolution.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from . import nn
from .errors import ShapeError, SpecError
from .tensor import Tensor4


@dataclass
class LayerSpec:
    """One convolution layer of the stack."""

    name: str
    out_channels: int
    kernel: int
    stride: int = 1
    dilation_rate: int = 1
    padding: str = nn.MIRROR
    activation: str = "relu"  # "relu" | "none"
    batch_norm: bool = True

    def validate(self):
        if self.out_channels < 1:
            raise SpecError(f"{self.name}: out_channels must be >= 1")
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise SpecError(f"{self.name}: kernel must be odd and positive")
        if self.stride < 1 or self.dilation_rate < 1:
            raise SpecError(f"{self.name}: stride/rate must be positive")
        if self.padding not in (nn.MIRROR, nn.ZERO):
            raise SpecError(f"{self.name}: unknown padding {self.padding!r}")
        if self.activation not in ("relu", "none"):
            raise SpecError(f"{self.name}: unknown activation {self.activation!r}")


@dataclass
class ArchSpec:
    """Declarative description of the whole stack.

    The last layer feeds a pixel shuffle of factor ``upsample_factor``, so
    its channel count must be ``upsample_factor^2 * num_classes`` and the
    product of all strides must equal ``upsample_factor`` (output spatial
    dims then equal input dims).
    """

    input_size: tuple[int, int]
    layers: list[LayerSpec]
    upsample_factor: int
    num_classes: int = 2
    in_channels: int = 3

    def validate(self):
        h, w = self.input_size
        r = self.upsample_factor
        if not self.layers:
            raise SpecError("layer list is empty")
        for layer in self.layers:
            layer.validate()
        stride_product = 1
        for layer in self.layers:
            stride_product *= layer.stride
        if stride_product != r:
            raise SpecError(
                f"stride product {stride_product} != upsample factor {r}"
            )
        if self.layers[-1].out_channels != r * r * self.num_classes:
            raise SpecError(
                f"final layer must emit r^2*classes = {r * r * self.num_classes} "
                f"channels, got {self.layers[-1].out_channels}"
            )
        if self.layers[-1].batch_norm:
            raise SpecError("final (shuffle-feeding) layer must not use batch norm")
        if h < 1 or w < 1 or h % r != 0 or w % r != 0:
            raise SpecError(f"input size {self.input_size} must be divisible by {r}")

    def channel_sequence(self) -> list[int]:
        seq = [self.in_channels]
        seq.extend(layer.out_channels for layer in self.layers)
        return seq

    def to_dict(self) -> dict:
        return {
            "input_size": list(self.input_size),
            "upsample_factor": self.upsample_factor,
            "num_classes": self.num_classes,
            "in_channels": self.in_channels,
            "layers": [
                {
                    "name": l.name,
                    "out_channels": l.out_channels,
                    "kernel": l.kernel,
                    "stride": l.stride,
                    "dilation_rate": l.dilation_rate,
                    "padding": l.padding,
                    "activation": l.activation,
                    "batch_norm": l.batch_norm,
                }
                for l in self.layers
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ArchSpec":
        spec = cls(
            input_size=tuple(d["input_size"]),
            layers=[LayerSpec(**ld) for ld in d["layers"]],
            upsample_factor=d["upsample_factor"],
            num_classes=d["num_classes"],
            in_channels=d.get("in_channels", 3),
        )
        spec.validate()
        return spec

    def digest(self) -> bytes:
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode("utf-8")).digest()


def default_arch(input_size: tuple[int, int] = (448, 448)) -> ArchSpec:
    """The production stack: 448x448 RGB in, 2-class logits out, x4 shuffle."""
    layers = [
        LayerSpec("conv1_1", 64, 5, stride=2),
        LayerSpec("conv1_2", 96, 3),
        LayerSpec("conv1_3", 96, 1, padding=nn.ZERO),
        LayerSpec("conv2_1", 128, 3, stride=2),
        LayerSpec("conv2_2", 256, 3),
        LayerSpec("conv2_3", 256, 1, padding=nn.ZERO),
        LayerSpec("conv3_1", 256, 3, dilation_rate=2),
        LayerSpec("conv3_2", 256, 3, dilation_rate=2),
        LayerSpec("conv3_3", 128, 3, dilation_rate=2, activation="none"),
        LayerSpec("subpixel", 32, 3, activation="none", batch_norm=False),
    ]
    spec = ArchSpec(input_size=input_size, layers=layers, upsample_factor=4)
    spec.validate()
    return spec


class Network:
    """A compiled ArchSpec: per-layer conv/batch-norm parameters in layer
    order. Parameter shapes are fully determined by the spec."""

    def __init__(self, spec: ArchSpec, conv_params, bn_params, rng_seed: int):
        self.spec = spec
        self.conv_params: list[nn.ConvParams] = conv_params
        self.bn_params: list[nn.BatchNormParams | None] = bn_params
        self.rng_seed = rng_seed

    def parameters(self) -> dict[str, np.ndarray]:
        """Trainable arrays keyed by name, in layer order."""
        out: dict[str, np.ndarray] = {}
        for layer, cp, bp in zip(self.spec.layers, self.conv_params, self.bn_params):
            out[f"{layer.name}.weight"] = cp.weights
            if cp.bias is not None:
                out[f"{layer.name}.bias"] = cp.bias
            if bp is not None:
                out[f"{layer.name}.gamma"] = bp.gamma
                out[f"{layer.name}.beta"] = bp.beta
        return out

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Parameters plus non-trainable running statistics (for
        checkpointing)."""
        out = self.parameters()
        for layer, bp in zip(self.spec.layers, self.bn_params):
            if bp is not None:
                out[f"{layer.name}.running_mean"] = bp.running_mean
                out[f"{layer.name}.running_var"] = bp.running_var
        return out

    def num_parameters(self) -> int:
        return sum(a.size for a in self.parameters().values())

    def set_mode(self, mode: str):
        for bp in self.bn_params:
            if bp is not None:
                bp.mode = mode


def build(spec: ArchSpec, seed: int) -> Network:
    """Initialize a network from the spec: zero-mean Gaussian weights with
    std sqrt(2 / fan_in), zero biases, identity batch norm; reproducible
    from the seed."""
    spec.validate()
    rng = np.random.default_rng(seed)
    conv_params = []
    bn_params = []
    c_in = spec.in_channels
    for layer in spec.layers:
        k = layer.kernel
        std = np.sqrt(2.0 / (c_in * k * k))
        weights = rng.standard_normal(
            (layer.out_channels, c_in, k, k), dtype=np.float32
        ) * np.float32(std)
        bias = None if layer.batch_norm else np.zeros(layer.out_channels,
                                                      dtype=np.float32)
        conv_params.append(
            nn.ConvParams(
                weights=weights,
                bias=bias,
                stride=layer.stride,
                dilation_rate=layer.dilation_rate,
                padding=layer.padding,
            )
        )
        bn_params.append(
            nn.BatchNormParams.identity(layer.out_channels) if layer.batch_norm
            else None
        )
        c_in = layer.out_channels
    return Network(spec, conv_params, bn_params, seed)


def _check_input(net: Network, x: Tensor4):
    n, c, h, w = x.shape
    if c != net.spec.in_channels or (h, w) != tuple(net.spec.input_size):
        raise ShapeError(
            f"input shape {x.shape} incompatible with spec "
            f"(expect (*, {net.spec.in_channels}, {net.spec.input_size[0]}, "
            f"{net.spec.input_size[1]}))"
        )


def _forward_trace(net: Network, x: Tensor4, mode: str):
    """Run the stack, keeping the per-layer inputs needed for backward."""
    _check_input(net, x)
    net.set_mode(mode)
    trace = []
    cur = x
    for layer, cp, bp in zip(net.spec.layers, net.conv_params, net.bn_params):
        x_in = cur
        conv_out = nn.conv2d_forward(cur, cp)
        bn_out = nn.batchnorm_forward(conv_out, bp) if bp is not None else None
        act_in = bn_out if bn_out is not None else conv_out
        cur = nn.relu(act_in) if layer.activation == "relu" else act_in
        trace.append((x_in, conv_out, bn_out))
    logits = nn.pixel_shuffle(cur, net.spec.upsample_factor)
    return logits, trace


def forward(net: Network, x: Tensor4, mode: str = nn.INFER) -> Tensor4:
    """Logits of shape (n, num_classes, H, W); infer mode leaves running
    statistics untouched."""
    logits, _ = _forward_trace(net, x, mode)
    return logits


def backward(net: Network, x: Tensor4, labels: np.ndarray):
    """One train-mode pass: returns (loss, gradients) with one gradient
    array per trainable parameter, keyed like :meth:`Network.parameters`."""
    logits, trace = _forward_trace(net, x, nn.TRAIN)
    loss, grad_logits = nn.softmax_xent(logits, labels)
    grads: dict[str, np.ndarray] = {}
    g = nn.pixel_unshuffle(grad_logits, net.spec.upsample_factor)
    for layer, cp, bp, (x_in, conv_out, bn_out) in zip(
        reversed(net.spec.layers),
        reversed(net.conv_params),
        reversed(net.bn_params),
        reversed(trace),
    ):
        if layer.activation == "relu":
            act_in = bn_out if bn_out is not None else conv_out
            g = nn.relu_backward(act_in, g)
        if bp is not None:
            g, grad_gamma, grad_beta = nn.batchnorm_backward(conv_out, bp, g)
            grads[f"{layer.name}.gamma"] = grad_gamma
            grads[f"{layer.name}.beta"] = grad_beta
        g, grad_w, grad_b = nn.conv2d_backward(x_in, cp, g)
        grads[f"{layer.name}.weight"] = grad_w
        if grad_b is not None:
            grads[f"{layer.name}.bias"] = grad_b
    return loss, grads


def save(net: Network, path, optimizer_state=None, meta: dict | None = None):
    """Serialize the network (see :mod:`dermseg.checkpoint` for the format)."""
    from . import checkpoint

    checkpoint.save(net, path, optimizer_state=optimizer_state, meta=meta)


def load(path, expected_spec: ArchSpec | None = None):
    """Deserialize a checkpoint into (Network, optimizer state, metadata)."""
    from . import checkpoint

    return checkpoint.load(path, expected_spec=expected_spec)
