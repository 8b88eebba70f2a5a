"""
Structured pruning of all-zero filters and input channels.

plan_pruning walks the network in eval mode tracking which activation
channels are known to hold one constant value everywhere. A conv input
channel can be dropped when it is known to be zero; a filter is dead when it
has no nonzero slice on a live input. Pruned layers gather live inputs and
scatter live outputs back to full width, so downstream BN/ReLU and residual
joins see exactly what the dense network computes.
"""
import copy
import logging
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np

from nn_core.conv import conv2d_forward
from nn_core.layers import AvgPool, BatchNorm, Conv2d, Dense, Layer, ReLU, ResidualBlock
from nn_core.network import Network
from sparse_infer.masks import SliceMask

logger = logging.getLogger(__name__)


@dataclass
class LayerPlan:
    name: str
    live_in: np.ndarray
    live_out: np.ndarray
    c_in: int
    c_out: int


class _Constants:
    """Per-channel known constants of an activation; NaN means unknown"""

    def __init__(self, values: np.ndarray):
        self.values = values

    @classmethod
    def unknown(cls, channels: int) -> "_Constants":
        return cls(np.full(channels, np.nan))

    @property
    def zero(self) -> np.ndarray:
        return self.values == 0


def _plan_linear(layer: Layer, mask: Optional[SliceMask], state: _Constants) -> Tuple[LayerPlan, _Constants]:
    c_in, c_out = layer.c_in, layer.c_out
    zero_in = state.zero
    if zero_in.size != c_in:
        # flattened (C, H, W) input to a dense layer: expand per-channel state
        zero_in = np.repeat(zero_in, c_in // max(zero_in.size, 1))
    nonzero = ~mask.grid() if mask is not None else np.ones((c_out, c_in), dtype=bool)
    live_in = ~zero_in & nonzero.any(axis=0)
    live_out = nonzero[:, live_in].any(axis=1)
    if "bias" in layer.params:
        live_out = live_out | (layer.params["bias"] != 0)
    out = np.full(c_out, np.nan)
    out[~live_out] = 0.0
    return LayerPlan(layer.name, np.flatnonzero(live_in), np.flatnonzero(live_out), c_in, c_out), _Constants(out)


def _walk(layers, masks: Dict[str, SliceMask], state: _Constants, plans: Dict[str, LayerPlan]) -> _Constants:
    for layer in layers:
        if isinstance(layer, (Conv2d, Dense)):
            plan, state = _plan_linear(layer, masks.get(layer.name), state)
            plans[layer.name] = plan
        elif isinstance(layer, BatchNorm):
            inv_std = 1.0 / np.sqrt(layer.buffers["running_var"] + layer.eps)
            state = _Constants(layer.params["gamma"] * (state.values - layer.buffers["running_mean"]) * inv_std
                               + layer.params["beta"])
        elif isinstance(layer, ReLU):
            state = _Constants(np.maximum(state.values, 0.0))
        elif isinstance(layer, ResidualBlock):
            branch = _walk(layer.body, masks, state, plans)
            short = state.values
            if layer.stride != 1 or layer.c_in != layer.c_out:
                back = layer.c_out - layer.c_in - layer.pad_front
                short = np.concatenate([np.zeros(layer.pad_front), short, np.zeros(back)])
            state = _Constants(np.maximum(branch.values + short, 0.0))
        elif isinstance(layer, AvgPool):
            pass
        else:
            raise TypeError(f"cannot plan pruning through {type(layer).__name__}")
    return state


def plan_pruning(network: Network, masks: Dict[str, SliceMask]) -> Dict[str, LayerPlan]:
    """
    Live input channels and output filters for every compressible layer.
    Assumes eval mode (BN running statistics).
    """
    plans: Dict[str, LayerPlan] = {}
    _walk(network.layers, masks, _Constants.unknown(network.input_shape[0]), plans)
    return plans


class PrunedConv2d(Layer):
    """Eval-only conv that computes live filters from live input channels"""

    kind = "pruned_conv2d"

    def __init__(self, layer: Conv2d, plan: LayerPlan):
        super().__init__(layer.name)
        self.source = layer
        self.plan = plan
        self.stride = layer.stride
        self.padding = layer.padding
        w = layer.params["weight"]
        self.params["weight"] = np.ascontiguousarray(w[plan.live_out][:, plan.live_in])
        self.bias = layer.params.get("bias")

    def output_shape(self, in_shape):
        return self.source.output_shape(in_shape)

    def forward(self, x, train):
        n = x.shape[0]
        _, h, w = self.source.output_shape(x.shape[1:])
        out = np.zeros((n, self.plan.c_out, h, w), dtype=x.dtype)
        if self.plan.live_in.size and self.plan.live_out.size:
            y, _ = conv2d_forward(x[:, self.plan.live_in], self.params["weight"], None, self.stride, self.padding)
            out[:, self.plan.live_out] = y
        if self.bias is not None:
            out += self.bias.reshape(1, -1, 1, 1)
        return out, None

    def backward(self, dy, cache):
        raise NotImplementedError("pruned layers are inference-only")


class PrunedDense(Layer):
    kind = "pruned_dense"

    def __init__(self, layer: Dense, plan: LayerPlan):
        super().__init__(layer.name)
        self.source = layer
        self.plan = plan
        w = layer.params["weight"]
        self.params["weight"] = np.ascontiguousarray(w[plan.live_out][:, plan.live_in])
        self.bias = layer.params.get("bias")

    def output_shape(self, in_shape):
        return self.source.output_shape(in_shape)

    def forward(self, x, train):
        flat = x.reshape(x.shape[0], -1)
        out = np.zeros((flat.shape[0], self.plan.c_out), dtype=x.dtype)
        if self.plan.live_in.size and self.plan.live_out.size:
            out[:, self.plan.live_out] = flat[:, self.plan.live_in] @ self.params["weight"].T
        if self.bias is not None:
            out += self.bias
        return out, None

    def backward(self, dy, cache):
        raise NotImplementedError("pruned layers are inference-only")


def _pruned(layer: Layer, plans: Dict[str, LayerPlan]) -> Layer:
    if isinstance(layer, Conv2d):
        return PrunedConv2d(layer, plans[layer.name])
    if isinstance(layer, Dense):
        return PrunedDense(layer, plans[layer.name])
    if isinstance(layer, ResidualBlock):
        layer.conv1 = PrunedConv2d(layer.conv1, plans[layer.conv1.name])
        layer.conv2 = PrunedConv2d(layer.conv2, plans[layer.conv2.name])
    return layer


def prune_network(network: Network, masks: Dict[str, SliceMask]) -> Network:
    """
    Inference copy of network with dead filters and channels removed.
    Eval-mode outputs match the original up to float summation order.
    """
    plans = plan_pruning(network, masks)
    layers = [_pruned(layer, plans) for layer in copy.deepcopy(network.layers)]
    pruned = Network(layers, network.input_shape, network.num_classes, descriptor=network.descriptor)
    kept = sum(p.live_in.size * p.live_out.size for p in plans.values())
    total = sum(p.c_in * p.c_out for p in plans.values())
    logger.info(f"Pruned network keeps {kept}/{total} (filter, channel) pairs")
    return pruned
