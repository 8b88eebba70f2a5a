"""
Evaluation: accuracy, sparsity / compute report and size estimate.
"""
import logging
from dataclasses import dataclass
from typing import Any, Dict, Optional

import numpy as np

from codec.report import SizeReport, report_size
from data_io.datasets import Dataset
from engine.state import ModelState, pack_state
from entropy_model.rate import eval_bits
from nn_core.network import Network
from sparse_infer.report import SparsityReport, build_sparsity_report

logger = logging.getLogger(__name__)


@dataclass
class EvalResult:
    accuracy: float
    sparsity: SparsityReport
    size: Optional[SizeReport]
    est_size_bytes: float

    def to_dict(self) -> Dict[str, Any]:
        return {
            "accuracy": self.accuracy,
            "est_size_bytes": self.est_size_bytes,
            "sparsity": self.sparsity.to_dict(),
            "size": self.size.to_dict() if self.size is not None else None,
        }


def accuracy(network: Network, data: Dataset, batch_size: int = 500) -> float:
    """Top-1 accuracy over the whole split in eval mode"""
    if len(data) == 0:
        return 0.0
    preds = network.predict(data.images, batch_size)
    return float(np.mean(preds == data.labels))


def estimate_size_bytes(state: ModelState) -> float:
    """
    Ideal coded bits under the current densities plus the exact sizes of
    decoders and raw values; groups with frozen tables only are skipped.
    """
    bits = 0.0
    for group in state.reparam.groups:
        if group.density is not None:
            bits += eval_bits(group.density, state.reparam.group_surrogates(group))
    psi_bytes = sum(4 * g.decoder.psi.size for g in state.reparam.groups)
    raw_bytes = sum(4 * a.size for a in state.raw_arrays().values())
    return bits / 8.0 + psi_bytes + raw_bytes


def evaluate(state: ModelState, test_set: Dataset, batch_size: int = 500, with_size: bool = True) -> EvalResult:
    """
    Evaluate a model state without changing it.

    Args:
        state: ModelState (network plus reparameterization)
        test_set: Evaluation split
        with_size: Also encode the model to measure its exact file size;
            this freezes the PMF tables on the state
    """
    state.reparam.decode_into()
    acc = accuracy(state.network, test_set, batch_size)
    sparsity = build_sparsity_report(state.reparam)
    size = None
    if with_size:
        model = pack_state(state)
        size = report_size(model)
    est = estimate_size_bytes(state) if any(g.density is not None for g in state.reparam.groups) else float(
        size.total if size else 0)
    logger.info(f"Eval: accuracy={acc:.4f} slice_sparsity={sparsity.slice_sparsity:.3f}"
                + (f" size={size.total}B ({size.compression_ratio:.1f}x)" if size else ""))
    return EvalResult(acc, sparsity, size, est)
