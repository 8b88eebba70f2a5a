"""
Architecture registry for LilNetX.
Builds networks from JSON-serializable descriptors so compressed files can
rebuild the exact architecture they were trained with.
"""
import logging
from typing import Any, Dict, List, Tuple

from nn_core.layers import Layer, LayerSpec, ResidualBlock, build_layer
from nn_core.network import Network

logger = logging.getLogger(__name__)


def _build(plan: List[Tuple[str, LayerSpec]], momentum: float) -> List[Layer]:
    return [build_layer(spec, name, momentum) for name, spec in plan]


def _build_mlp(input_shape, num_classes, width, momentum) -> List[Layer]:
    c, h, w = input_shape
    return _build([
        ("fc1", LayerSpec("dense", c * h * w, width, bias=True)),
        ("relu1", LayerSpec("relu")),
        ("fc2", LayerSpec("dense", width, num_classes, bias=True)),
    ], momentum)


def _build_miniconv(input_shape, num_classes, width, momentum) -> List[Layer]:
    c = input_shape[0]
    stages = [(c, width, 1), (width, 2 * width, 2), (2 * width, 2 * width, 1), (2 * width, 2 * width, 2)]
    plan: List[Tuple[str, LayerSpec]] = []
    for i, (c_in, c_out, stride) in enumerate(stages, start=1):
        plan += [
            (f"conv{i}", LayerSpec("conv2d", c_in, c_out, 3, stride, 1)),
            (f"bn{i}", LayerSpec("batchnorm", c_out=c_out)),
            (f"relu{i}", LayerSpec("relu")),
        ]
    plan += [("pool", LayerSpec("avgpool")), ("fc", LayerSpec("dense", 2 * width, num_classes, bias=True))]
    return _build(plan, momentum)


def _build_resnet20(input_shape, num_classes, width, momentum) -> List[Layer]:
    layers = _build([
        ("stem", LayerSpec("conv2d", input_shape[0], width, 3, 1, 1)),
        ("stem_bn", LayerSpec("batchnorm", c_out=width)),
        ("stem_relu", LayerSpec("relu")),
    ], momentum)
    c_in = width
    for stage, c_out in enumerate((width, 2 * width, 4 * width), start=1):
        for block in range(3):
            stride = 2 if stage > 1 and block == 0 else 1
            layers.append(ResidualBlock(f"stage{stage}.{block}", c_in, c_out, stride, momentum))
            c_in = c_out
    layers += _build([("pool", LayerSpec("avgpool")), ("fc", LayerSpec("dense", c_in, num_classes, bias=True))],
                     momentum)
    return layers


class ModelZoo:
    """Registry of the desk-scale architectures"""

    ARCHITECTURES = {
        "mlp": {"builder": _build_mlp, "default_width": 256},
        "miniconv": {"builder": _build_miniconv, "default_width": 16},
        "resnet20": {"builder": _build_resnet20, "default_width": 16},
    }

    DATASET_SHAPES = {
        "mnist": (1, 28, 28),
        "cifar10-subset": (3, 32, 32),
        "synthetic": (1, 12, 12),
    }

    @classmethod
    def names(cls) -> List[str]:
        return sorted(cls.ARCHITECTURES)

    @classmethod
    def input_shape_for(cls, dataset: str) -> Tuple[int, ...]:
        if dataset not in cls.DATASET_SHAPES:
            raise ValueError(f"no input shape registered for dataset {dataset!r}")
        return cls.DATASET_SHAPES[dataset]

    @classmethod
    def descriptor(cls, architecture: str, input_shape: Tuple[int, ...], num_classes: int = 10,
                   width: int = 0, bn_momentum: float = 0.1) -> Dict[str, Any]:
        """Describe an architecture in plain JSON types"""
        if architecture not in cls.ARCHITECTURES:
            raise ValueError(f"unknown architecture {architecture!r}; choose from {cls.names()}")
        return {
            "architecture": architecture,
            "input_shape": [int(v) for v in input_shape],
            "num_classes": int(num_classes),
            "width": int(width or cls.ARCHITECTURES[architecture]["default_width"]),
            "bn_momentum": float(bn_momentum),
        }

    @classmethod
    def build(cls, architecture: str, input_shape: Tuple[int, ...], num_classes: int = 10,
              width: int = 0, bn_momentum: float = 0.1) -> Network:
        """Build a shape-checked network"""
        desc = cls.descriptor(architecture, input_shape, num_classes, width, bn_momentum)
        return cls.from_descriptor(desc)

    @classmethod
    def from_descriptor(cls, desc: Dict[str, Any]) -> Network:
        entry = cls.ARCHITECTURES.get(desc.get("architecture"))
        if entry is None:
            raise ValueError(f"unknown architecture in descriptor: {desc.get('architecture')!r}")
        input_shape = tuple(desc["input_shape"])
        layers = entry["builder"](input_shape, desc["num_classes"], desc["width"], desc.get("bn_momentum", 0.1))
        network = Network(layers, input_shape, desc["num_classes"], descriptor=dict(desc))
        logger.debug(f"Built {desc['architecture']} with {network.weight_count()} weights")
        return network
