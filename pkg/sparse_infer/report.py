"""
Per-layer and global sparsity / compute report.
"""
import logging
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional

import numpy as np

from reparam.model import ReparamModel
from sparse_infer.bench import BenchResult
from sparse_infer.flops import MAC_CONVENTION, count_flops
from sparse_infer.masks import masks_for

logger = logging.getLogger(__name__)


@dataclass
class LayerSparsity:
    name: str
    slice_sparsity: float
    unstructured_sparsity: float
    dense_macs: int
    slice_macs: int
    structured_macs: int


@dataclass
class SparsityReport:
    layers: List[LayerSparsity]
    slice_sparsity: float
    unstructured_sparsity: float
    dense_macs: int
    slice_macs: int
    structured_macs: int
    dense_ms: Optional[float] = None
    pruned_ms: Optional[float] = None
    threads: Optional[str] = None
    convention: str = MAC_CONVENTION
    extra: Dict[str, Any] = field(default_factory=dict)

    @property
    def sflops_fraction(self) -> float:
        return self.slice_macs / self.dense_macs if self.dense_macs else 0.0

    @property
    def structured_fraction(self) -> float:
        return self.structured_macs / self.dense_macs if self.dense_macs else 0.0

    def to_dict(self) -> Dict[str, Any]:
        d = asdict(self)
        d["sflops_fraction"] = self.sflops_fraction
        d["structured_fraction"] = self.structured_fraction
        return d


def build_sparsity_report(model: ReparamModel, bench: Optional[BenchResult] = None) -> SparsityReport:
    """Summarize the current rounded latents of model; the network must hold decoded weights"""
    masks = masks_for(model.latents)
    flops = {row.name: row for row in count_flops(model.network, masks).layers}
    layers = []
    zero_rows = rows = zero_vals = vals = 0
    for name, lt in model.latents.items():
        r = lt.rounded
        z = int(np.count_nonzero(r == 0))
        m = masks[name]
        f = flops[name]
        layers.append(LayerSparsity(name, m.sparsity, z / r.size if r.size else 0.0, f.dense, f.slice, f.structured))
        zero_rows += m.zero_count
        rows += m.mask.size
        zero_vals += z
        vals += r.size
    report = SparsityReport(
        layers=layers,
        slice_sparsity=zero_rows / rows if rows else 0.0,
        unstructured_sparsity=zero_vals / vals if vals else 0.0,
        dense_macs=sum(l.dense_macs for l in layers),
        slice_macs=sum(l.slice_macs for l in layers),
        structured_macs=sum(l.structured_macs for l in layers),
    )
    if bench is not None:
        report.dense_ms = bench.dense_ms
        report.pruned_ms = bench.pruned_ms
        report.threads = bench.threads
    return report
