"""
Size accounting for compressed models.
"""
import logging
from dataclasses import asdict, dataclass
from typing import Any, Dict

from codec.container import CompressedModel, section_sizes

logger = logging.getLogger(__name__)

BYTES_PER_FLOAT = 4


@dataclass
class SizeReport:
    header: int
    pmf_tables: int
    decoders: int
    coded_latents: int
    raw: int
    total: int
    dense_bytes: int

    @property
    def compression_ratio(self) -> float:
        return self.dense_bytes / self.total if self.total else 0.0

    def to_dict(self) -> Dict[str, Any]:
        d = asdict(self)
        d["compression_ratio"] = self.compression_ratio
        return d


def dense_baseline_bytes(parameter_count: int) -> int:
    return BYTES_PER_FLOAT * int(parameter_count)


def report_size(model: CompressedModel) -> SizeReport:
    """
    Per-section byte counts of the serialized file and the ratio against
    storing every weight and raw value as a 32-bit float.
    """
    sizes = section_sizes(model)
    report = SizeReport(
        header=sizes["header"],
        pmf_tables=sizes["pmf_tables"],
        decoders=sizes["decoders"],
        coded_latents=sizes["coded_latents"],
        raw=sizes["raw"],
        total=sum(sizes.values()),
        dense_bytes=dense_baseline_bytes(model.weight_count() + model.raw_count()),
    )
    logger.debug(f"Size report: {report.total} bytes, {report.compression_ratio:.1f}x")
    return report
