"""
Block-sparse convolution over the im2col view.

The im2col matrix splits into one K*K column block per input channel. For
each output channel only the blocks whose slice is nonzero are multiplied.
"""
import copy
import logging
from typing import Optional

import numpy as np

from nn_core.conv import cols_to_output, conv2d_forward, im2col
from nn_core.layers import Conv2d, Layer, ResidualBlock
from nn_core.network import Network
from reparam.latents import DecoderTransform, LatentTensor, decode
from reparam.model import ReparamModel
from sparse_infer.masks import SliceMask, slice_mask
from utils.errors import StaleMaskError

logger = logging.getLogger(__name__)


def block_sparse_conv(
    x: np.ndarray,
    latent: LatentTensor,
    decoder: DecoderTransform,
    mask: SliceMask,
    stride: int = 1,
    padding: Optional[int] = None,
    bias: Optional[np.ndarray] = None,
) -> np.ndarray:
    """
    Convolve x with the decoded weights, skipping masked slices.

    Raises:
        StaleMaskError: if mask no longer matches the latent's zero rows
    """
    current = slice_mask(latent)
    if current.mask.shape != mask.mask.shape or not np.array_equal(current.mask, mask.mask):
        raise StaleMaskError(f"{latent.name}: slice mask does not match the current latent")
    weight = decode(latent, decoder).astype(x.dtype, copy=False)
    c_out, c_in, k, _ = weight.shape
    padding = k // 2 if padding is None else padding
    if not mask.mask.any():
        return conv2d_forward(x, weight, bias, stride, padding)[0]

    cols, out_hw = im2col(x, k, stride, padding)
    out = np.zeros((cols.shape[0], c_out), dtype=x.dtype)
    live = ~mask.grid()
    block = np.arange(k * k)
    for o in range(c_out):
        channels = np.flatnonzero(live[o])
        if channels.size == 0:
            continue
        idx = (channels[:, None] * (k * k) + block).ravel()
        out[:, o] = cols[:, idx] @ weight[o, channels].reshape(-1)
    if bias is not None:
        out += bias
    return cols_to_output(out, x.shape[0], out_hw)


class BlockSparseConv2d(Layer):
    """Inference layer running a conv through block_sparse_conv"""

    kind = "block_sparse_conv2d"

    def __init__(self, layer: Conv2d, latent: LatentTensor, decoder: DecoderTransform):
        super().__init__(layer.name)
        self.source = layer
        self.latent = latent
        self.decoder = decoder
        self.mask = slice_mask(latent)

    def output_shape(self, in_shape):
        return self.source.output_shape(in_shape)

    def forward(self, x, train):
        y = block_sparse_conv(x, self.latent, self.decoder, self.mask, self.source.stride,
                              self.source.padding, self.source.params.get("bias"))
        return y, None

    def backward(self, dy, cache):
        raise NotImplementedError("block-sparse layers are inference-only")


def _swap(layer: Layer, model: ReparamModel) -> Layer:
    if isinstance(layer, Conv2d):
        return BlockSparseConv2d(layer, model.latents[layer.name], model.group_of(layer.name).decoder)
    if isinstance(layer, ResidualBlock):
        layer.conv1 = _swap(layer.conv1, model)
        layer.conv2 = _swap(layer.conv2, model)
    return layer


def block_sparse_network(model: ReparamModel) -> Network:
    """
    Inference copy of model.network with every conv running block-sparse.
    Dense layers are kept as they are.
    """
    network = model.network
    layers = [_swap(layer, model) for layer in copy.deepcopy(network.layers)]
    return Network(layers, network.input_shape, network.num_classes, descriptor=network.descriptor)
