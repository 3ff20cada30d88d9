"""dermseg: a from-scratch fully convolutional network for binary skin
lesion segmentation — differentiable layers, training loop, data pipeline,
post-processing, and IoU evaluation."""

__version__ = "0.1.0"

from .tensor import Tensor4

__all__ = ["Tensor4", "__version__"]
