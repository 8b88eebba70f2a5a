"""
Latent weights and the linear decoder that maps latent rows to weight slices.

A layer with weight shape (C_out, C_in, K, K) owns a surrogate matrix of shape
(C_out*C_in, K*K); row j = o*C_in + i decodes to the slice W[o, i]. Dense layers
use K = 1.
"""
import logging
from dataclasses import dataclass
from typing import Tuple, Union

import numpy as np

from utils.errors import NonFiniteError, ShapeMismatchError

logger = logging.getLogger(__name__)


def quantize(x: np.ndarray) -> np.ndarray:
    """
    Round to the nearest integer, halves away from zero.

    Raises:
        NonFiniteError: if x holds NaN or infinity
    """
    x = np.asarray(x)
    if not np.all(np.isfinite(x)):
        raise NonFiniteError("cannot quantize non-finite values")
    # floor(|x| + 0.5) misrounds values just below one half
    a = np.abs(x)
    f = np.floor(a)
    return np.sign(x) * (f + (a - f >= 0.5))


@dataclass
class LatentTensor:
    name: str
    surrogate: np.ndarray
    shape: Tuple[int, ...]

    def __post_init__(self):
        if self.surrogate.ndim != 2:
            raise ShapeMismatchError(f"{self.name}: surrogate must be 2-D, got {self.surrogate.shape}")
        if self.surrogate.size != int(np.prod(self.shape)):
            raise ShapeMismatchError(
                f"{self.name}: surrogate {self.surrogate.shape} cannot reshape to {self.shape}")

    @property
    def l(self) -> int:
        return self.surrogate.shape[1]

    @property
    def rows(self) -> int:
        return self.surrogate.shape[0]

    @property
    def rounded(self) -> np.ndarray:
        # always recomputed from the surrogate
        return quantize(self.surrogate)

    @classmethod
    def zeros(cls, name: str, shape: Tuple[int, ...], dtype=np.float32) -> "LatentTensor":
        shape = tuple(int(v) for v in shape)
        l = shape[2] * shape[3] if len(shape) == 4 else 1
        rows = shape[0] * shape[1]
        return cls(name, np.zeros((rows, l), dtype=dtype), shape)


@dataclass
class DecoderTransform:
    psi: np.ndarray

    def __post_init__(self):
        if self.psi.ndim != 2 or self.psi.shape[0] != self.psi.shape[1]:
            raise ShapeMismatchError(f"decoder must be square, got {self.psi.shape}")
        if not np.all(np.isfinite(self.psi)):
            raise NonFiniteError("decoder holds non-finite values")

    @property
    def l(self) -> int:
        return self.psi.shape[0]

    @classmethod
    def identity(cls, l: int, dtype=np.float32) -> "DecoderTransform":
        return cls(np.eye(l, dtype=dtype))


PsiLike = Union[DecoderTransform, np.ndarray]


def _psi(decoder: PsiLike) -> np.ndarray:
    return decoder.psi if isinstance(decoder, DecoderTransform) else np.asarray(decoder)


def decode(latent: LatentTensor, decoder: PsiLike) -> np.ndarray:
    """
    Decode W = reshape(round(W_hat) @ psi) into the layer's weight shape.

    Raises:
        ShapeMismatchError: if the decoder width differs from the slice length
    """
    psi = _psi(decoder)
    if psi.shape != (latent.l, latent.l):
        raise ShapeMismatchError(f"{latent.name}: decoder {psi.shape} does not match slice length {latent.l}")
    return (latent.rounded @ psi).astype(latent.surrogate.dtype, copy=False).reshape(latent.shape)


def ste_backward(grad_w: np.ndarray, decoder: PsiLike, latent: LatentTensor) -> Tuple[np.ndarray, np.ndarray]:
    """
    Straight-through backward of decode: rounding acts as the identity.

    Returns:
        (grad wrt surrogate, grad wrt psi)
    """
    psi = _psi(decoder)
    if grad_w.size != latent.surrogate.size:
        raise ShapeMismatchError(f"{latent.name}: gradient {grad_w.shape} does not match weight {latent.shape}")
    g = grad_w.reshape(latent.rows, latent.l)
    return g @ psi.T, latent.rounded.T @ g
