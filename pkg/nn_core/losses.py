"""
Classification loss.
"""
from typing import Tuple

import numpy as np

from utils.errors import InvalidLabelError


def log_softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise log-softmax, evaluated in float64"""
    shifted = logits.astype(np.float64) - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def xent_loss(logits: np.ndarray, labels: np.ndarray) -> Tuple[float, np.ndarray]:
    """
    Mean cross-entropy over the batch.

    Args:
        logits: (N, C) scores
        labels: (N,) integer labels in [0, C)

    Returns:
        (loss, gradient wrt logits) where the gradient is (softmax - onehot) / N
    """
    n, c = logits.shape
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise InvalidLabelError(f"expected {n} labels, got shape {labels.shape}")
    if n and (labels.min() < 0 or labels.max() >= c):
        raise InvalidLabelError(f"labels must be in [0, {c}), got range [{labels.min()}, {labels.max()}]")
    logp = log_softmax(logits)
    rows = np.arange(n)
    loss = float(-logp[rows, labels].mean())
    if loss <= 0.0:
        # rounding can leave -0.0 or a tiny negative
        loss = 0.0
    grad = np.exp(logp)
    grad[rows, labels] -= 1.0
    grad /= n
    return loss, grad.astype(logits.dtype, copy=False)
