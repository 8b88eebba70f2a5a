"""
Layer set for the desk-scale CNNs: conv2d, dense, batchnorm, relu, avgpool and
an option-A residual block. Every layer has an exact manual backward.
"""
import logging
from dataclasses import dataclass
from typing import Any, Dict, Iterator, Optional, Tuple

import numpy as np

from nn_core.conv import conv2d_backward, conv2d_forward, conv_output_size
from utils.errors import ShapeMismatchError

logger = logging.getLogger(__name__)

LAYER_KINDS = ("conv2d", "dense", "batchnorm", "relu", "avgpool")

Shape = Tuple[int, ...]


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    c_in: int = 0
    c_out: int = 0
    kernel: int = 1
    stride: int = 1
    padding: int = 0
    bias: bool = False

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind: {self.kind}")
        if self.kernel < 1:
            raise ValueError(f"kernel must be >= 1, got {self.kernel}")
        if self.kind in ("conv2d", "dense") and (self.c_in < 1 or self.c_out < 1):
            raise ValueError(f"{self.kind} needs c_in, c_out >= 1")


class Layer:
    """Base class: parameters live in self.params, running state in self.buffers"""

    kind = "layer"
    compressible = False

    def __init__(self, name: str):
        self.name = name
        self.params: Dict[str, np.ndarray] = {}
        self.buffers: Dict[str, np.ndarray] = {}

    def key(self, local: str) -> str:
        return f"{self.name}.{local}"

    def leaves(self) -> Iterator["Layer"]:
        yield self

    def output_shape(self, in_shape: Shape) -> Shape:
        return in_shape

    def forward(self, x: np.ndarray, train: bool) -> Tuple[np.ndarray, Any]:
        raise NotImplementedError

    def backward(self, dy: np.ndarray, cache: Any) -> Tuple[np.ndarray, Dict[str, np.ndarray]]:
        raise NotImplementedError

    def astype(self, dtype) -> None:
        for store in (self.params, self.buffers):
            for k in store:
                store[k] = store[k].astype(dtype)


class Conv2d(Layer):
    kind = "conv2d"
    compressible = True

    def __init__(self, name: str, c_in: int, c_out: int, kernel: int = 3, stride: int = 1,
                 padding: Optional[int] = None, bias: bool = False):
        super().__init__(name)
        self.c_in = c_in
        self.c_out = c_out
        self.kernel = kernel
        self.stride = stride
        self.padding = kernel // 2 if padding is None else padding
        self.params["weight"] = np.zeros((c_out, c_in, kernel, kernel), dtype=np.float32)
        if bias:
            self.params["bias"] = np.zeros(c_out, dtype=np.float32)

    @property
    def spec(self) -> LayerSpec:
        return LayerSpec("conv2d", self.c_in, self.c_out, self.kernel, self.stride, self.padding, "bias" in self.params)

    @property
    def slice_length(self) -> int:
        return self.kernel * self.kernel

    def output_shape(self, in_shape: Shape) -> Shape:
        if len(in_shape) != 3 or in_shape[0] != self.c_in:
            raise ShapeMismatchError(f"expected ({self.c_in}, H, W) input, got {in_shape}")
        h = conv_output_size(in_shape[1], self.kernel, self.stride, self.padding)
        w = conv_output_size(in_shape[2], self.kernel, self.stride, self.padding)
        if h < 1 or w < 1:
            raise ShapeMismatchError(f"input {in_shape} too small for kernel {self.kernel}")
        return (self.c_out, h, w)

    def forward(self, x, train):
        y, cols = conv2d_forward(x, self.params["weight"], self.params.get("bias"), self.stride, self.padding)
        return y, (cols, x.shape)

    def backward(self, dy, cache):
        cols, x_shape = cache
        dx, dw, db = conv2d_backward(dy, cols, x_shape, self.params["weight"], self.stride, self.padding)
        grads = {self.key("weight"): dw}
        if "bias" in self.params:
            grads[self.key("bias")] = db
        return dx, grads


class Dense(Layer):
    kind = "dense"
    compressible = True
    kernel = 1

    def __init__(self, name: str, c_in: int, c_out: int, bias: bool = True):
        super().__init__(name)
        self.c_in = c_in
        self.c_out = c_out
        self.params["weight"] = np.zeros((c_out, c_in), dtype=np.float32)
        if bias:
            self.params["bias"] = np.zeros(c_out, dtype=np.float32)

    @property
    def spec(self) -> LayerSpec:
        return LayerSpec("dense", self.c_in, self.c_out, bias="bias" in self.params)

    @property
    def slice_length(self) -> int:
        return 1

    def output_shape(self, in_shape: Shape) -> Shape:
        if int(np.prod(in_shape)) != self.c_in:
            raise ShapeMismatchError(f"expected {self.c_in} input features, got {in_shape}")
        return (self.c_out,)

    def forward(self, x, train):
        flat = x.reshape(x.shape[0], -1)
        y = flat @ self.params["weight"].T
        if "bias" in self.params:
            y = y + self.params["bias"]
        return y, (flat, x.shape)

    def backward(self, dy, cache):
        flat, x_shape = cache
        grads = {self.key("weight"): dy.T @ flat}
        if "bias" in self.params:
            grads[self.key("bias")] = dy.sum(axis=0)
        dx = (dy @ self.params["weight"]).reshape(x_shape)
        return dx, grads


class BatchNorm(Layer):
    """Per-channel batch normalization over (N, H, W)"""

    kind = "batchnorm"

    def __init__(self, name: str, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        super().__init__(name)
        self.channels = channels
        self.momentum = momentum
        self.eps = eps
        self.params["gamma"] = np.ones(channels, dtype=np.float32)
        self.params["beta"] = np.zeros(channels, dtype=np.float32)
        self.buffers["running_mean"] = np.zeros(channels, dtype=np.float32)
        self.buffers["running_var"] = np.ones(channels, dtype=np.float32)

    def output_shape(self, in_shape: Shape) -> Shape:
        if len(in_shape) != 3 or in_shape[0] != self.channels:
            raise ShapeMismatchError(f"expected ({self.channels}, H, W) input, got {in_shape}")
        return in_shape

    @staticmethod
    def _bcast(v: np.ndarray) -> np.ndarray:
        return v.reshape(1, -1, 1, 1)

    def forward(self, x, train):
        if train:
            mean = x.mean(axis=(0, 2, 3))
            var = x.var(axis=(0, 2, 3))
            m = self.momentum
            # biased variance for both normalization and running estimate
            self.buffers["running_mean"] = ((1 - m) * self.buffers["running_mean"] + m * mean).astype(x.dtype)
            self.buffers["running_var"] = ((1 - m) * self.buffers["running_var"] + m * var).astype(x.dtype)
        else:
            mean = self.buffers["running_mean"]
            var = self.buffers["running_var"]
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - self._bcast(mean)) * self._bcast(inv_std)
        y = xhat * self._bcast(self.params["gamma"]) + self._bcast(self.params["beta"])
        return y.astype(x.dtype, copy=False), (xhat, inv_std, train)

    def backward(self, dy, cache):
        xhat, inv_std, train = cache
        gamma = self._bcast(self.params["gamma"])
        grads = {
            self.key("gamma"): (dy * xhat).sum(axis=(0, 2, 3)),
            self.key("beta"): dy.sum(axis=(0, 2, 3)),
        }
        dxhat = dy * gamma
        if not train:
            return dxhat * self._bcast(inv_std), grads
        m = dy.shape[0] * dy.shape[2] * dy.shape[3]
        sum_d = dxhat.sum(axis=(0, 2, 3), keepdims=True)
        sum_dx = (dxhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
        dx = self._bcast(inv_std) / m * (m * dxhat - sum_d - xhat * sum_dx)
        return dx, grads

    def channel_constant(self) -> np.ndarray:
        """Eval-mode output of a channel whose input is identically zero"""
        inv_std = 1.0 / np.sqrt(self.buffers["running_var"] + self.eps)
        return self.params["beta"] - self.params["gamma"] * self.buffers["running_mean"] * inv_std


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, train):
        mask = x > 0
        return x * mask, mask

    def backward(self, dy, cache):
        return dy * cache, {}


class AvgPool(Layer):
    """Global average pooling to (N, C, 1, 1)"""

    kind = "avgpool"

    def output_shape(self, in_shape: Shape) -> Shape:
        if len(in_shape) != 3:
            raise ShapeMismatchError(f"expected (C, H, W) input, got {in_shape}")
        return (in_shape[0], 1, 1)

    def forward(self, x, train):
        return x.mean(axis=(2, 3), keepdims=True), x.shape

    def backward(self, dy, cache):
        n, c, h, w = cache
        return np.broadcast_to(dy / (h * w), cache).astype(dy.dtype), {}


class ResidualBlock(Layer):
    """conv-bn-relu-conv-bn plus a zero-padding (option A) shortcut, then relu"""

    kind = "residual"

    def __init__(self, name: str, c_in: int, c_out: int, stride: int = 1, momentum: float = 0.1):
        super().__init__(name)
        if c_out < c_in:
            raise ValueError("option-A shortcut cannot shrink channels")
        self.c_in = c_in
        self.c_out = c_out
        self.stride = stride
        self.conv1 = Conv2d(f"{name}.conv1", c_in, c_out, 3, stride)
        self.bn1 = BatchNorm(f"{name}.bn1", c_out, momentum)
        self.relu1 = ReLU(f"{name}.relu1")
        self.conv2 = Conv2d(f"{name}.conv2", c_out, c_out, 3, 1)
        self.bn2 = BatchNorm(f"{name}.bn2", c_out, momentum)
        self.pad_front = (c_out - c_in) // 2

    @property
    def body(self):
        return [self.conv1, self.bn1, self.relu1, self.conv2, self.bn2]

    def leaves(self):
        for layer in self.body:
            yield layer

    def output_shape(self, in_shape: Shape) -> Shape:
        shape = in_shape
        for layer in self.body:
            shape = layer.output_shape(shape)
        return shape

    def shortcut(self, x: np.ndarray) -> np.ndarray:
        if self.stride == 1 and self.c_in == self.c_out:
            return x
        sub = x[:, :, ::self.stride, ::self.stride]
        back = self.c_out - self.c_in - self.pad_front
        return np.pad(sub, ((0, 0), (self.pad_front, back), (0, 0), (0, 0)))

    def forward(self, x, train):
        caches = []
        h = x
        for layer in self.body:
            h, c = layer.forward(h, train)
            caches.append(c)
        s = h + self.shortcut(x)
        mask = s > 0
        return s * mask, (caches, mask, x.shape)

    def backward(self, dy, cache):
        caches, mask, x_shape = cache
        d = dy * mask
        grads: Dict[str, np.ndarray] = {}
        h = d
        for layer, c in zip(reversed(self.body), reversed(caches)):
            h, g = layer.backward(h, c)
            grads.update(g)
        if self.stride == 1 and self.c_in == self.c_out:
            dx_short = d
        else:
            dx_short = np.zeros(x_shape, dtype=d.dtype)
            dx_short[:, :, ::self.stride, ::self.stride] = d[:, self.pad_front:self.pad_front + self.c_in]
        return h + dx_short, grads

    def astype(self, dtype) -> None:
        for layer in self.body:
            layer.astype(dtype)


def build_layer(spec: LayerSpec, name: str, momentum: float = 0.1) -> Layer:
    """Instantiate a leaf layer from its spec"""
    if spec.kind == "conv2d":
        return Conv2d(name, spec.c_in, spec.c_out, spec.kernel, spec.stride, spec.padding, spec.bias)
    if spec.kind == "dense":
        return Dense(name, spec.c_in, spec.c_out, spec.bias)
    if spec.kind == "batchnorm":
        return BatchNorm(name, spec.c_out or spec.c_in, momentum)
    if spec.kind == "relu":
        return ReLU(name)
    return AvgPool(name)
