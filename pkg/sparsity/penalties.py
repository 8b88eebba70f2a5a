"""
Computation-cost penalties on surrogates: a zero-mean (unstructured) term and
a group term over latent rows (slices).
"""
import logging
from dataclasses import dataclass
from typing import Dict, Iterable, Tuple

import numpy as np

from reparam.latents import LatentTensor

logger = logging.getLogger(__name__)

UNSTRUCTURED_NORMS = ("l2", "l1")
GROUP_NORMS = ("l2", "linf")
RHO_RULES = ("slice", "unit")


@dataclass(frozen=True)
class SparsityConfig:
    lambda_u: float = 0.0
    lambda_s: float = 0.0
    unstructured_norm: str = "l2"
    group_norm: str = "l2"
    rho_rule: str = "slice"

    def validate(self) -> "SparsityConfig":
        for name in ("lambda_u", "lambda_s"):
            value = getattr(self, name)
            if not np.isfinite(value) or value < 0:
                raise ValueError(f"{name} must be finite and >= 0, got {value}")
        if self.unstructured_norm not in UNSTRUCTURED_NORMS:
            raise ValueError(f"unstructured_norm must be one of {UNSTRUCTURED_NORMS}, got {self.unstructured_norm!r}")
        if self.group_norm not in GROUP_NORMS:
            raise ValueError(f"group_norm must be one of {GROUP_NORMS}, got {self.group_norm!r}")
        if self.rho_rule not in RHO_RULES:
            raise ValueError(f"rho_rule must be one of {RHO_RULES}, got {self.rho_rule!r}")
        return self

    def rho(self, l: int) -> float:
        return float(l) if self.rho_rule == "slice" else 1.0


def unstructured_penalty(w_hat: np.ndarray, cfg: SparsityConfig) -> Tuple[float, np.ndarray]:
    if cfg.lambda_u == 0:
        return 0.0, np.zeros_like(w_hat)
    if cfg.unstructured_norm == "l2":
        return float(cfg.lambda_u * np.sum(w_hat * w_hat)), 2.0 * cfg.lambda_u * w_hat
    return float(cfg.lambda_u * np.sum(np.abs(w_hat))), cfg.lambda_u * np.sign(w_hat)


def group_penalty(w_hat: np.ndarray, rho, cfg: SparsityConfig) -> Tuple[float, np.ndarray]:
    """
    lambda_S * sum_j sqrt(rho_j) * ||row_j||, with zero subgradient on zero rows.

    Args:
        w_hat: (rows, l) surrogates
        rho: Scalar or per-row size weights
        cfg: Penalty settings

    Returns:
        (value, gradient wrt w_hat)
    """
    grad = np.zeros_like(w_hat)
    if cfg.lambda_s == 0 or w_hat.size == 0:
        return 0.0, grad
    scale = cfg.lambda_s * np.sqrt(np.broadcast_to(np.asarray(rho, dtype=np.float64), (w_hat.shape[0],)))
    if cfg.group_norm == "l2":
        norms = np.sqrt(np.sum(w_hat.astype(np.float64) ** 2, axis=1))
        live = norms > 0
        grad[live] = (scale[live] / norms[live])[:, None] * w_hat[live]
    else:
        mags = np.abs(w_hat)
        norms = mags.max(axis=1)
        live = norms > 0
        at_max = (mags == norms[:, None]) & live[:, None]
        ties = at_max.sum(axis=1)
        share = np.where(live, scale / np.maximum(ties, 1), 0.0)
        grad = (at_max * np.sign(w_hat) * share[:, None]).astype(w_hat.dtype)
    return float(np.sum(scale * norms)), grad


def compute_loss(latents: Iterable[LatentTensor], cfg: SparsityConfig) -> Tuple[float, Dict[str, np.ndarray]]:
    """
    Both penalties summed over all latent tensors.

    Returns:
        (total, gradient per latent name); names with no penalty are omitted
    """
    total = 0.0
    grads: Dict[str, np.ndarray] = {}
    if cfg.lambda_u == 0 and cfg.lambda_s == 0:
        return total, grads
    for lt in latents:
        u, gu = unstructured_penalty(lt.surrogate, cfg)
        s, gs = group_penalty(lt.surrogate, cfg.rho(lt.l), cfg)
        total += u + s
        grads[lt.name] = (gu + gs).astype(lt.surrogate.dtype, copy=False)
    return total, grads


def penalty_terms(latents: Iterable[LatentTensor], cfg: SparsityConfig) -> Tuple[float, float]:
    """(unstructured, group) values separately, for metrics"""
    u_total = s_total = 0.0
    for lt in latents:
        u_total += unstructured_penalty(lt.surrogate, cfg)[0]
        s_total += group_penalty(lt.surrogate, cfg.rho(lt.l), cfg)[0]
    return u_total, s_total


def unstructured_sparsity(latents: Iterable[LatentTensor]) -> float:
    """Fraction of exactly-zero entries across all rounded latents"""
    zeros = total = 0
    for lt in latents:
        r = lt.rounded
        zeros += int(np.count_nonzero(r == 0))
        total += r.size
    return zeros / total if total else 0.0


def slice_sparsity(latents: Iterable[LatentTensor]) -> float:
    """Fraction of all-zero rounded latent rows across all tensors"""
    zeros = total = 0
    for lt in latents:
        r = lt.rounded
        zeros += int(np.count_nonzero(np.all(r == 0, axis=1)))
        total += r.shape[0]
    return zeros / total if total else 0.0
