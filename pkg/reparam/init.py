"""
Variance-matched initialization of surrogates and decoders.

Surrogates are drawn from U[-b, b] and decoders from N(0, v) so that decoded
weights have the He variance 2/f for every member layer of a group. The layer
with the largest fan gets the smallest interval, b = b_min.
"""
import logging
from typing import Dict, Tuple

import numpy as np

from nn_core.layers import Layer
from reparam.groups import ParameterGroup
from utils.errors import ConfigError

logger = logging.getLogger(__name__)


def layer_fan(layer: Layer) -> int:
    """He fan-in: C_in * K^2 (C_in for dense layers)"""
    spec = layer.spec
    return int(spec.c_in * spec.kernel * spec.kernel)


def _spread(b: float) -> float:
    return (2.0 * b + 1.0) ** 2 - 1.0


def decoder_variance(l: int, f_max: int, b_min: float) -> float:
    return 24.0 / (l * f_max * _spread(b_min))


def surrogate_bound(fan: int, f_max: int, b_min: float) -> float:
    return (np.sqrt((f_max / fan) * _spread(b_min) + 1.0) - 1.0) / 2.0


def init_latents(
    group: ParameterGroup,
    fans: Dict[str, int],
    shapes: Dict[str, Tuple[int, int]],
    b_min: float,
    rng: np.random.Generator,
    dtype=np.float32,
) -> Tuple[Dict[str, np.ndarray], np.ndarray]:
    """
    Draw surrogates for each member layer and the group's decoder.

    Args:
        group: Group being initialized
        fans: Fan-in per member layer name
        shapes: Surrogate matrix shape (rows, l) per member layer name
        b_min: Half-width of the interval for the widest layer; must exceed 0.5
        rng: Generator for this initialization only

    Returns:
        (surrogates by layer name, psi)
    """
    if not b_min > 0.5:
        raise ConfigError(f"b_min must be > 0.5, got {b_min}")
    f_max = max(fans[name] for name in group.members)
    v = decoder_variance(group.l, f_max, b_min)
    psi = (rng.standard_normal((group.l, group.l)) * np.sqrt(v)).astype(dtype)
    surrogates = {}
    for name in group.members:
        b = surrogate_bound(fans[name], f_max, b_min)
        surrogates[name] = rng.uniform(-b, b, size=shapes[name]).astype(dtype)
        logger.debug(f"{group.name}/{name}: fan={fans[name]} b={b:.3f}")
    logger.debug(f"{group.name}: f_max={f_max} psi variance={v:.6f}")
    return surrogates, psi
