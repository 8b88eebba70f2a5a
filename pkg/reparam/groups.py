"""
Partition of a network's compressible layers into parameter groups.
Layers of the same kind and kernel size share one decoder and one density.
"""
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

from nn_core.layers import Layer
from nn_core.network import Network
from reparam.latents import DecoderTransform
from utils.errors import LilNetXError

logger = logging.getLogger(__name__)

SUPPORTED_KINDS = ("conv2d", "dense")


@dataclass
class ParameterGroup:
    name: str
    kind: str
    kernel: int
    members: List[str]
    decoder: DecoderTransform
    density: Optional[Any] = None
    fans: Dict[str, int] = field(default_factory=dict)

    @property
    def l(self) -> int:
        return self.kernel * self.kernel


def group_key(layer: Layer) -> Tuple[str, int]:
    if layer.kind not in SUPPORTED_KINDS:
        raise LilNetXError(f"layer {layer.name}: kind {layer.kind!r} cannot be reparameterized")
    spec = layer.spec
    return spec.kind, int(spec.kernel)


def group_name(kind: str, kernel: int) -> str:
    if kind == "conv2d":
        return f"conv{kernel}x{kernel}"
    return kind


def partition_model(network: Network) -> List[ParameterGroup]:
    """
    Group compressible layers by (kind, kernel size), in order of first appearance.
    Biases and BN parameters never enter a group.
    """
    groups: Dict[Tuple[str, int], ParameterGroup] = {}
    for layer in network.compressible_layers():
        key = group_key(layer)
        if key not in groups:
            kind, kernel = key
            groups[key] = ParameterGroup(
                name=group_name(kind, kernel),
                kind=kind,
                kernel=kernel,
                members=[],
                decoder=DecoderTransform.identity(kernel * kernel, network.dtype),
            )
        groups[key].members.append(layer.name)
    logger.debug(f"Partitioned into {len(groups)} groups: {[g.name for g in groups.values()]}")
    return list(groups.values())
