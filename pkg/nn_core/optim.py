"""
Adam optimizer state and cosine learning-rate schedule.
"""
import math
import logging
from dataclasses import dataclass, field
from typing import Dict, Iterable

import numpy as np

from utils.errors import NonFiniteError

logger = logging.getLogger(__name__)


@dataclass
class AdamState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    state: AdamState,
    params: Dict[str, np.ndarray],
    grads: Dict[str, np.ndarray],
    weight_decay: float = 0.0,
    decay_keys: Iterable[str] = (),
) -> Dict[str, np.ndarray]:
    """
    One bias-corrected Adam update, applied in place.

    Args:
        state: Moments and step counter, owned by one optimizer
        params: Arrays to update, keyed by name
        grads: Gradients for (a subset of) params; missing keys count as zero
        weight_decay: Decoupled decay rate applied to decay_keys only
        decay_keys: Names of parameters that receive weight decay

    Returns:
        The same params mapping

    Raises:
        NonFiniteError: naming the first parameter with a NaN/inf gradient
    """
    for name, g in grads.items():
        if name not in params:
            raise KeyError(f"gradient for unknown parameter {name}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteError("non-finite gradient", name)

    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    decay = set(decay_keys) if weight_decay else set()

    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        update = (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        if name in decay:
            update = update + weight_decay * p
        p -= (state.lr * update).astype(p.dtype, copy=False)
    return params


class Adam:
    """Thin owner of one AdamState; two instances never share moments"""

    def __init__(self, lr: float = 0.001, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.state = AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps)

    @property
    def lr(self) -> float:
        return self.state.lr

    @lr.setter
    def lr(self, value: float) -> None:
        self.state.lr = value

    def step(self, params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray], **kwargs) -> Dict[str, np.ndarray]:
        return adam_step(self.state, params, grads, **kwargs)


def cosine_lr(step: int, total_steps: int, lr0: float) -> float:
    """
    Cosine decay from lr0 at step 0 to 0 at total_steps.

    Steps past total_steps are clamped to 0 with a warning.
    """
    if step < 0:
        raise ValueError(f"step must be >= 0, got {step}")
    if total_steps <= 0:
        return lr0
    if step > total_steps:
        logger.warning(f"cosine_lr: step {step} past total {total_steps}, clamping lr to 0")
        return 0.0
    return lr0 * 0.5 * (1.0 + math.cos(math.pi * step / total_steps))
