"""
Rate term: self-information of latents under a group's factorized density.
"""
import logging
from typing import Dict, Optional, Tuple

import numpy as np

from entropy_model.density import FactorizedDensity
from nn_core.optim import Adam
from reparam.latents import quantize
from utils.errors import NonFiniteError

logger = logging.getLogger(__name__)

LN2 = np.log(2.0)


def rate_loss(
    values: np.ndarray,
    density: FactorizedDensity,
    noise: Optional[np.ndarray] = None,
    name: str = "",
) -> Tuple[float, np.ndarray, Dict[str, np.ndarray]]:
    """
    Bits of (values + noise) under the density, with gradients.

    Args:
        values: (N, l) surrogates
        density: The group's density
        noise: Uniform(-1/2, 1/2) draws of the same shape; None evaluates on the values as given
        name: Group name used in error messages

    Returns:
        (bits, grad wrt values, grads wrt density params)
    """
    x = values if noise is None else values + noise
    q, backward = density.likelihood(x, with_grad=True)
    bits = float(-np.log2(q).sum())
    if not np.isfinite(bits):
        raise NonFiniteError("rate is not finite", name or None)
    dvalues, dparams = backward(-1.0 / (q * LN2))
    return bits, dvalues.astype(values.dtype, copy=False), dparams


def eval_bits(density: FactorizedDensity, values: np.ndarray) -> float:
    """Noiseless self-information of rounded values"""
    if values.size == 0:
        return 0.0
    return float(-np.log2(density.likelihood(quantize(values))).sum())


def fit_step(
    density: FactorizedDensity,
    samples: np.ndarray,
    adam: Adam,
    grads: Optional[Dict[str, np.ndarray]] = None,
) -> FactorizedDensity:
    """
    One likelihood-maximization step on noisy samples.

    Args:
        density: Updated in place
        samples: (N, l) noisy surrogates; ignored when grads are given
        adam: Optimizer owned by this density alone
        grads: Density gradients already computed by rate_loss
    """
    if grads is None:
        _, _, grads = rate_loss(samples, density)
    adam.step(density.params, grads)
    return density
