"""
Shape-checked sequential network with exact manual backward.
"""
import logging
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from nn_core.layers import Layer
from utils.errors import ShapeMismatchError, StaleCacheError

logger = logging.getLogger(__name__)


@dataclass
class ForwardCache:
    network_id: int
    version: int
    train: bool
    layer_caches: List[Any]


class Network:
    def __init__(self, layers: List[Layer], input_shape: Tuple[int, ...], num_classes: int,
                 descriptor: Optional[Dict[str, Any]] = None):
        """
        Build and shape-check a network.

        Args:
            layers: Top-level layers in execution order
            input_shape: Per-example input shape (C, H, W)
            num_classes: Width of the logits
            descriptor: Optional ModelZoo descriptor used to rebuild the architecture
        """
        self.layers = layers
        self.input_shape = tuple(input_shape)
        self.num_classes = num_classes
        self.descriptor = descriptor
        self.dtype = np.float32
        self.version = 0
        self.output_shape = self.shape_check()

    def leaves(self) -> List[Layer]:
        return [leaf for layer in self.layers for leaf in layer.leaves()]

    def compressible_layers(self) -> List[Layer]:
        return [leaf for leaf in self.leaves() if leaf.compressible]

    def layer(self, name: str) -> Layer:
        for leaf in self.leaves():
            if leaf.name == name:
                return leaf
        raise KeyError(name)

    def shape_check(self) -> Tuple[int, ...]:
        """
        Propagate the input shape through every layer.

        Raises:
            ShapeMismatchError: naming the first layer that cannot accept its input
        """
        shape = self.input_shape
        for index, layer in enumerate(self.layers):
            try:
                shape = layer.output_shape(shape)
            except ShapeMismatchError as e:
                raise ShapeMismatchError(str(e), index, layer.name) from e
        if int(np.prod(shape)) != self.num_classes:
            raise ShapeMismatchError(f"network output {shape} does not match {self.num_classes} classes",
                                     len(self.layers) - 1, self.layers[-1].name)
        return shape

    def touch(self) -> None:
        """Mark parameters as changed; caches from earlier forwards become stale"""
        self.version += 1

    def forward(self, x: np.ndarray, train: bool = False) -> Tuple[np.ndarray, ForwardCache]:
        """
        Run the network on a batch.

        Args:
            x: Batch of shape (N, C, H, W)
            train: Batch statistics for BN when True, running statistics otherwise

        Returns:
            (logits of shape (N, num_classes), cache for backward)
        """
        x = np.asarray(x, dtype=self.dtype)
        if x.ndim != len(self.input_shape) + 1 or x.shape[1:] != self.input_shape:
            raise ShapeMismatchError(f"expected input (N, {', '.join(map(str, self.input_shape))}), got {x.shape}",
                                     0, self.layers[0].name)
        caches = []
        h = x
        for layer in self.layers:
            h, cache = layer.forward(h, train)
            caches.append(cache)
        logits = h.reshape(h.shape[0], -1)
        return logits, ForwardCache(id(self), self.version, train, caches)

    def backward(self, grad_logits: np.ndarray, cache: ForwardCache) -> Dict[str, np.ndarray]:
        """
        Backpropagate logits gradients.

        Returns:
            Gradients keyed "<layer>.<param>" for every parameter the batch touched

        Raises:
            StaleCacheError: if parameters changed since the forward that built the cache
        """
        if cache.network_id != id(self) or cache.version != self.version:
            raise StaleCacheError(
                f"cache from network version {cache.version}, current version is {self.version}")
        grads: Dict[str, np.ndarray] = {}
        d = np.asarray(grad_logits, dtype=self.dtype)
        d = d.reshape((d.shape[0],) + tuple(self.output_shape))
        for layer, layer_cache in zip(reversed(self.layers), reversed(cache.layer_caches)):
            d, g = layer.backward(d, layer_cache)
            grads.update(g)
        return grads

    def parameters(self) -> Dict[str, np.ndarray]:
        """All parameters, decoded weights included, keyed "<layer>.<param>" """
        return {leaf.key(k): v for leaf in self.leaves() for k, v in leaf.params.items()}

    def raw_parameters(self) -> Dict[str, np.ndarray]:
        """Parameters stored uncompressed: biases and BN affine terms"""
        return {leaf.key(k): v for leaf in self.leaves() for k, v in leaf.params.items() if k != "weight"}

    def buffers(self) -> Dict[str, np.ndarray]:
        return {leaf.key(k): v for leaf in self.leaves() for k, v in leaf.buffers.items()}

    def set_array(self, key: str, value: np.ndarray) -> None:
        """Assign a parameter or buffer by its qualified key"""
        name, local = key.rsplit(".", 1)
        leaf = self.layer(name)
        store = leaf.params if local in leaf.params else leaf.buffers
        if local not in store:
            raise KeyError(key)
        if store[local].shape != value.shape:
            raise ShapeMismatchError(f"{key}: expected {store[local].shape}, got {value.shape}")
        store[local] = np.asarray(value, dtype=self.dtype)
        self.touch()

    def astype(self, dtype) -> "Network":
        """Cast every parameter and buffer; float64 is the gradient-check mode"""
        self.dtype = dtype
        for layer in self.layers:
            layer.astype(dtype)
        self.touch()
        return self

    def init_weights(self, rng: np.random.Generator) -> None:
        """He-normal weights for standalone use (the reparam path overwrites them)"""
        for leaf in self.compressible_layers():
            w = leaf.params["weight"]
            fan_in = int(np.prod(w.shape[1:]))
            leaf.params["weight"] = (rng.standard_normal(w.shape) * np.sqrt(2.0 / fan_in)).astype(self.dtype)
        self.touch()

    def weight_count(self) -> int:
        return sum(leaf.params["weight"].size for leaf in self.compressible_layers())

    def predict(self, images: np.ndarray, batch_size: int = 500) -> np.ndarray:
        """Eval-mode class predictions over a whole array, batch by batch"""
        preds = []
        for start in range(0, len(images), batch_size):
            logits, _ = self.forward(images[start:start + batch_size], train=False)
            preds.append(np.argmax(logits, axis=1))
        return np.concatenate(preds) if preds else np.zeros(0, dtype=np.int64)
