"""
Multiply-accumulate counts: dense, slice-skipping and structured.

Counts are MACs; one MAC is two FLOPs.
"""
import logging
from dataclasses import dataclass
from typing import Dict, List, Tuple

from nn_core.layers import Conv2d, Dense, Layer, ResidualBlock
from nn_core.network import Network
from sparse_infer.masks import SliceMask
from sparse_infer.pruning import plan_pruning

logger = logging.getLogger(__name__)

MAC_CONVENTION = "MACs (1 MAC = 2 FLOPs)"


@dataclass
class LayerFlops:
    name: str
    dense: int
    slice: int
    structured: int


@dataclass
class FlopCount:
    layers: List[LayerFlops]

    @property
    def dense(self) -> int:
        return sum(l.dense for l in self.layers)

    @property
    def slice(self) -> int:
        return sum(l.slice for l in self.layers)

    @property
    def structured(self) -> int:
        return sum(l.structured for l in self.layers)

    def as_tuple(self) -> Tuple[int, int, int]:
        return self.dense, self.slice, self.structured


def _spatial_sizes(network: Network) -> Dict[str, int]:
    """Output positions (H_out * W_out) per compressible layer; 1 for dense layers"""
    sizes: Dict[str, int] = {}

    def visit(layers: List[Layer], shape):
        for layer in layers:
            if isinstance(layer, ResidualBlock):
                visit(layer.body, shape)
                shape = layer.output_shape(shape)
                continue
            out = layer.output_shape(shape)
            if isinstance(layer, Conv2d):
                sizes[layer.name] = out[1] * out[2]
            elif isinstance(layer, Dense):
                sizes[layer.name] = 1
            shape = out

    visit(network.layers, network.input_shape)
    return sizes


def count_flops(network: Network, masks: Dict[str, SliceMask]) -> FlopCount:
    """
    Args:
        network: Network in eval mode
        masks: Slice masks per compressible layer; missing layers count as dense

    Returns:
        Per-layer and total (dense, slice, structured) MACs
    """
    positions = _spatial_sizes(network)
    plans = plan_pruning(network, masks)
    rows = []
    for layer in network.compressible_layers():
        k2 = layer.kernel * layer.kernel
        hw = positions[layer.name]
        per_slice = k2 * hw
        dense = layer.c_out * layer.c_in * per_slice
        mask = masks.get(layer.name)
        nonzero = mask.nonzero_count if mask is not None else layer.c_out * layer.c_in
        plan = plans[layer.name]
        structured = plan.live_in.size * plan.live_out.size * per_slice
        rows.append(LayerFlops(layer.name, dense, nonzero * per_slice, structured))
    return FlopCount(rows)
